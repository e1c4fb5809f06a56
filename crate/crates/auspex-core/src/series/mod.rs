//! Data model for multivariate performance metrics: validated frames,
//! chronological splitting, per-metric scaling, windowing and synthetic data.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};

mod io;
mod synth;
mod window;

pub use io::{load_frame, write_frame, ColumnSchema};
pub use synth::{synth_generate, AnomalyKind, SynthConfig};
pub use window::{make_windows, CovariateConfig, Window, WindowSpec, COVARIATE_DIM};

/// Lower bound applied to stored standard deviations so constant metrics
/// scale to zeros instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-8;

/// An `m`-variate, uniformly sampled, timestamped metric series.
///
/// Rows of `values` are metrics, columns are time points. Labels, when
/// present, mark anomalous points with 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricFrame {
    timestamps: Vec<i64>,
    values: Array2<f64>,
    names: Vec<String>,
    aspects: BTreeMap<String, String>,
    labels: Option<Vec<u8>>,
    interval: i64,
}

impl MetricFrame {
    /// Validates and assembles a frame. `aspects` entries missing for a
    /// metric default to the metric's own name (each metric its own aspect).
    pub fn new(
        timestamps: Vec<i64>,
        values: Array2<f64>,
        names: Vec<String>,
        aspects: BTreeMap<String, String>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let len = timestamps.len();
        if len == 0 {
            return Err(Error::InvalidData("frame has no rows".into()));
        }
        let (m, cols) = values.dim();
        if m != names.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} metric names for {} value rows",
                names.len(),
                m
            )));
        }
        if cols != len {
            return Err(Error::ShapeMismatch(format!(
                "{cols} value columns for {len} timestamps"
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate metric name {name:?}")));
            }
        }
        let interval = if len >= 2 {
            let interval = timestamps[1] - timestamps[0];
            if interval <= 0 {
                return Err(Error::InvalidData("timestamps not strictly increasing".into()));
            }
            for pair in timestamps.windows(2) {
                if pair[1] - pair[0] != interval {
                    return Err(Error::InvalidData(format!(
                        "non-uniform interval: {} after step of {interval}",
                        pair[1] - pair[0]
                    )));
                }
            }
            interval
        } else {
            0
        };
        if let Some(labels) = &labels {
            if labels.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {len} points",
                    labels.len()
                )));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::InvalidData("labels must be 0 or 1".into()));
            }
        }
        let mut aspects = aspects;
        for name in &names {
            aspects.entry(name.clone()).or_insert_with(|| name.clone());
        }
        aspects.retain(|k, _| names.iter().any(|n| n == k));
        Ok(Self {
            timestamps,
            values,
            names,
            aspects,
            labels,
            interval,
        })
    }

    /// Number of metrics.
    pub fn num_metrics(&self) -> usize {
        self.names.len()
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Sampling interval in seconds (0 for single-point frames).
    pub fn interval(&self) -> i64 {
        self.interval
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn aspects(&self) -> &BTreeMap<String, String> {
        &self.aspects
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Copy of the frame restricted to columns `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<MetricFrame> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidData(format!(
                "slice [{start}, {end}) out of range for length {}",
                self.len()
            )));
        }
        MetricFrame::new(
            self.timestamps[start..end].to_vec(),
            self.values.slice(ndarray::s![.., start..end]).to_owned(),
            self.names.clone(),
            self.aspects.clone(),
            self.labels.as_ref().map(|l| l[start..end].to_vec()),
        )
    }

    /// Replaces the label column. `None` removes it.
    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} points",
                    l.len(),
                    self.len()
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let spec = Self { train, val, test };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.val <= 0.0 || self.test <= 0.0 {
            return Err(Error::InvalidConfig("split fractions must be positive".into()));
        }
        if (self.train + self.val + self.test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {}, expected 1",
                self.train + self.val + self.test
            )));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    /// 6:1:3, the usual split for this kind of evaluation.
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.1,
            test: 0.3,
        }
    }
}

/// Splits a frame into train/validation/test parts in timeline order.
/// Boundary indices are `floor(frac * len)`, so no timestamp appears in two
/// splits and the concatenation of the parts is the original frame.
pub fn split_chronological(
    frame: &MetricFrame,
    spec: &SplitSpec,
) -> Result<(MetricFrame, MetricFrame, MetricFrame)> {
    spec.validate()?;
    let len = frame.len();
    if len < 3 {
        return Err(Error::InvalidData(format!("cannot split {len} points three ways")));
    }
    let n_train = (spec.train * len as f64).floor() as usize;
    let n_val = (spec.val * len as f64).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= len {
        return Err(Error::EmptySplit(format!(
            "fractions ({}, {}, {}) leave an empty split at length {len}",
            spec.train, spec.val, spec.test
        )));
    }
    Ok((
        frame.slice(0, n_train)?,
        frame.slice(n_train, n_train + n_val)?,
        frame.slice(n_train + n_val, len)?,
    ))
}

/// Per-metric standardization statistics fit on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Scaler {
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// Rebuilds a scaler from stored statistics (checkpoint loading).
    pub fn from_stats(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} means vs {} stds",
                means.len(),
                stds.len()
            )));
        }
        if stds.iter().any(|&s| s < STD_FLOOR) {
            return Err(Error::InvalidData(format!("stored std below floor {STD_FLOOR}")));
        }
        Ok(Self { means, stds })
    }
}

/// Fits per-metric mean and (population) standard deviation. Constant
/// metrics get their std floored at [`STD_FLOOR`].
pub fn fit_scaler(frame: &MetricFrame) -> Scaler {
    let n = frame.len() as f64;
    let mut means = Vec::with_capacity(frame.num_metrics());
    let mut stds = Vec::with_capacity(frame.num_metrics());
    for row in frame.values().rows() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        means.push(mean);
        stds.push(var.sqrt().max(STD_FLOOR));
    }
    Scaler { means, stds }
}

/// Standardizes every metric: `(x - mean) / std`.
pub fn apply_scaler(frame: &MetricFrame, scaler: &Scaler) -> Result<MetricFrame> {
    transform_frame(frame, scaler, |v, mean, std| (v - mean) / std)
}

/// Undoes [`apply_scaler`]: `x * std + mean`.
pub fn invert_scaler(frame: &MetricFrame, scaler: &Scaler) -> Result<MetricFrame> {
    transform_frame(frame, scaler, |v, mean, std| v * std + mean)
}

fn transform_frame(
    frame: &MetricFrame,
    scaler: &Scaler,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<MetricFrame> {
    if scaler.means.len() != frame.num_metrics() {
        return Err(Error::ShapeMismatch(format!(
            "scaler has {} metrics, frame has {}",
            scaler.means.len(),
            frame.num_metrics()
        )));
    }
    let mut values = frame.values().clone();
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let (mean, std) = (scaler.means[i], scaler.stds[i]);
        row.mapv_inplace(|v| f(v, mean, std));
    }
    MetricFrame::new(
        frame.timestamps().to_vec(),
        values,
        frame.names().to_vec(),
        frame.aspects().clone(),
        frame.labels().map(|l| l.to_vec()),
    )
}

/// Concatenates frames that partition a timeline in order. Used to check
/// the split round-trip; rejects gaps and mismatched metric sets.
pub fn concat_frames(parts: &[&MetricFrame]) -> Result<MetricFrame> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidData("nothing to concatenate".into()))?;
    let mut timestamps = Vec::new();
    let mut labels = first.labels().map(|_| Vec::new());
    let mut columns = Vec::new();
    for part in parts {
        if part.names() != first.names() {
            return Err(Error::InvalidData("metric names differ between parts".into()));
        }
        timestamps.extend_from_slice(part.timestamps());
        if let (Some(acc), Some(l)) = (labels.as_mut(), part.labels()) {
            acc.extend_from_slice(l);
        }
        columns.push(part.values().view());
    }
    let values = ndarray::concatenate(ndarray::Axis(1), &columns)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    MetricFrame::new(
        timestamps,
        values,
        first.names().to_vec(),
        first.aspects().clone(),
        labels,
    )
}


#[cfg(test)]
mod tests {
    use super::testutil::frame_from_rows;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_rejects_non_uniform_interval() {
        let values = Array2::zeros((1, 3));
        let err = MetricFrame::new(
            vec![0, 60, 180],
            values,
            vec!["cpu".into()],
            BTreeMap::new(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-uniform interval"));
    }

    #[test]
    fn frame_rejects_label_length_mismatch() {
        let values = Array2::zeros((1, 3));
        assert!(MetricFrame::new(
            vec![0, 60, 120],
            values,
            vec!["cpu".into()],
            BTreeMap::new(),
            Some(vec![0, 1]),
        )
        .is_err());
    }

    #[test]
    fn split_sizes_match_floor_rule() {
        let frame = frame_from_rows(&[(0..10).map(|v| v as f64).collect()], 60, None);
        let spec = SplitSpec::default();
        let (train, val, test) = split_chronological(&frame, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (6, 1, 3));
    }

    #[test]
    fn split_thirds_of_three() {
        let frame = frame_from_rows(&[vec![1.0, 2.0, 3.0]], 60, None);
        let spec = SplitSpec::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        let (train, val, test) = split_chronological(&frame, &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (1, 1, 1));
    }

    #[test]
    fn split_rejects_empty_parts() {
        let frame = frame_from_rows(&[vec![1.0, 2.0]], 60, None);
        let err = split_chronological(&frame, &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("split"));
    }

    #[test]
    fn splits_concatenate_back_to_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..37).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..37).map(|_| rng.gen_range(0..=1)).collect();
        let frame = frame_from_rows(&rows, 30, Some(labels));
        let (a, b, c) = split_chronological(&frame, &SplitSpec::default()).unwrap();
        // No timestamp appears twice across the parts.
        let mut all: Vec<i64> = [a.timestamps(), b.timestamps(), c.timestamps()].concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), frame.len());
        assert_eq!(concat_frames(&[&a, &b, &c]).unwrap(), frame);
    }

    #[test]
    fn scaler_centers_the_fitting_data() {
        let frame = frame_from_rows(&[vec![2.0, 4.0, 6.0]], 60, None);
        let scaler = fit_scaler(&frame);
        assert_eq!(scaler.means(), &[4.0]);
        let scaled = apply_scaler(&frame, &scaler).unwrap();
        let mean: f64 = scaled.values().row(0).sum() / 3.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn constant_metric_scales_to_zeros() {
        let frame = frame_from_rows(&[vec![5.0, 5.0, 5.0]], 60, None);
        let scaler = fit_scaler(&frame);
        assert_eq!(scaler.stds()[0], STD_FLOOR);
        let scaled = apply_scaler(&frame, &scaler).unwrap();
        assert!(scaled.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaler_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = rng.gen_range(1..4);
            let len = rng.gen_range(3..40);
            let rows: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..len).map(|_| rng.gen_range(-100.0..100.0)).collect())
                .collect();
            let frame = frame_from_rows(&rows, 60, None);
            let scaler = fit_scaler(&frame);
            let back = invert_scaler(&apply_scaler(&frame, &scaler).unwrap(), &scaler).unwrap();
            for (a, b) in frame.values().iter().zip(back.values().iter()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
