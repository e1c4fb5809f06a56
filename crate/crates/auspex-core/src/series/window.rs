//! Sliding windows over a frame, plus the calendar covariates fed to the
//! forecaster's condition encoder.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::series::MetricFrame;

/// Covariate rows: sin/cos time-of-day, sin/cos day-of-week, special-day flag.
pub const COVARIATE_DIM: usize = 5;

/// Context length `l`, forecast horizon `s` and window stride, in points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub context_len: usize,
    pub forecast_len: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(context_len: usize, forecast_len: usize, stride: usize) -> Result<Self> {
        let spec = Self {
            context_len,
            forecast_len,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_len == 0 || self.forecast_len == 0 {
            return Err(Error::InvalidConfig("window lengths must be positive".into()));
        }
        if self.forecast_len >= self.context_len {
            return Err(Error::InvalidConfig(format!(
                "forecast length {} must be shorter than context length {}",
                self.forecast_len, self.context_len
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Total window width `l + s`.
    pub fn total_len(&self) -> usize {
        self.context_len + self.forecast_len
    }
}

/// Calendar configuration for covariates (and the special-day feature).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CovariateConfig {
    /// Special days as days since the Unix epoch.
    pub special_days: BTreeSet<i64>,
}

impl CovariateConfig {
    /// Parses ISO `YYYY-MM-DD` dates into epoch days.
    pub fn from_dates<S: AsRef<str>>(dates: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut special_days = BTreeSet::new();
        for date in dates {
            let date = date.as_ref();
            let parsed = chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
                .map_err(|e| Error::InvalidConfig(format!("bad date {date:?}: {e}")))?;
            let epoch = chrono::NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
            special_days.insert((parsed - epoch).num_days());
        }
        Ok(Self { special_days })
    }

    pub fn is_special(&self, ts: i64) -> bool {
        self.special_days.contains(&ts.div_euclid(86_400))
    }

    /// Covariate column for one timestamp.
    pub fn at(&self, ts: i64) -> [f64; COVARIATE_DIM] {
        let tod = ts.rem_euclid(86_400) as f64 / 86_400.0;
        // 1970-01-01 was a Thursday; +4 puts Sunday at 0.
        let dow = (ts.div_euclid(86_400) + 4).rem_euclid(7) as f64 / 7.0;
        [
            (TAU * tod).sin(),
            (TAU * tod).cos(),
            (TAU * dow).sin(),
            (TAU * dow).cos(),
            if self.is_special(ts) { 1.0 } else { 0.0 },
        ]
    }

    /// Covariate matrix for `count` consecutive points from `start_ts`.
    pub fn matrix(&self, start_ts: i64, interval: i64, count: usize) -> Array2<f64> {
        let mut out = Array2::zeros((COVARIATE_DIM, count));
        for j in 0..count {
            let col = self.at(start_ts + j as i64 * interval);
            for (i, v) in col.iter().enumerate() {
                out[[i, j]] = *v;
            }
        }
        out
    }
}

/// One training/evaluation example: an observed context, the ground-truth
/// future (unused at inference), covariates for every position and the
/// window-level label (1 iff any point in the window is labeled anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub context: Array2<f64>,
    pub future: Array2<f64>,
    pub covariates: Array2<f64>,
    pub label: Option<u8>,
    pub start_ts: i64,
    pub interval: i64,
}

impl Window {
    pub fn num_metrics(&self) -> usize {
        self.context.nrows()
    }

    pub fn context_len(&self) -> usize {
        self.context.ncols()
    }

    pub fn forecast_len(&self) -> usize {
        self.future.ncols()
    }

    /// Timestamp of window position `j` (0-based from the window start).
    pub fn timestamp_at(&self, j: usize) -> i64 {
        self.start_ts + j as i64 * self.interval
    }
}

/// Cuts windows at offsets `0, stride, 2*stride, …` while a full
/// `l + s`-point window fits. Yields `floor((L - l - s) / stride) + 1`
/// windows for a frame of length `L`.
pub fn make_windows(
    frame: &MetricFrame,
    spec: &WindowSpec,
    covariates: &CovariateConfig,
) -> Result<Vec<Window>> {
    spec.validate()?;
    let total = spec.total_len();
    if frame.len() < total {
        return Err(Error::InvalidData(format!(
            "frame length {} shorter than window length {total}",
            frame.len()
        )));
    }
    let mut windows = Vec::with_capacity((frame.len() - total) / spec.stride + 1);
    let mut offset = 0;
    while offset + total <= frame.len() {
        let context = frame
            .values()
            .slice(s![.., offset..offset + spec.context_len])
            .to_owned();
        let future = frame
            .values()
            .slice(s![.., offset + spec.context_len..offset + total])
            .to_owned();
        let start_ts = frame.timestamps()[offset];
        let label = frame
            .labels()
            .map(|labels| u8::from(labels[offset..offset + total].iter().any(|&l| l == 1)));
        windows.push(Window {
            context,
            future,
            covariates: covariates.matrix(start_ts, frame.interval(), total),
            label,
            start_ts,
            interval: frame.interval(),
        });
        offset += spec.stride;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::testutil::frame_from_rows;

    #[test]
    fn offsets_follow_stride() {
        let frame = frame_from_rows(&[(0..10).map(|v| v as f64).collect()], 60, None);
        let spec = WindowSpec::new(4, 2, 4).unwrap();
        let windows = make_windows(&frame, &spec, &CovariateConfig::default()).unwrap();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].start_ts, 0);
        assert_eq!(windows[1].start_ts, 240);
        assert_eq!(windows[0].context.ncols(), 4);
        assert_eq!(windows[0].future.ncols(), 2);
        assert_eq!(windows[0].covariates.dim(), (COVARIATE_DIM, 6));
    }

    #[test]
    fn window_count_matches_formula() {
        for (len, l, s, stride) in [(10, 4, 2, 4), (50, 8, 3, 1), (31, 6, 2, 5), (9, 5, 4, 3)] {
            let frame = frame_from_rows(&[(0..len).map(|v| v as f64).collect()], 1, None);
            let spec = WindowSpec::new(l, s, stride).unwrap();
            let windows = make_windows(&frame, &spec, &CovariateConfig::default()).unwrap();
            assert_eq!(windows.len(), (len as usize - l - s) / stride + 1);
        }
    }

    #[test]
    fn too_short_frame_is_rejected() {
        let frame = frame_from_rows(&[vec![1.0, 2.0, 3.0]], 60, None);
        let spec = WindowSpec::new(3, 1, 1).unwrap();
        assert!(make_windows(&frame, &spec, &CovariateConfig::default()).is_err());
    }

    #[test]
    fn any_labeled_point_marks_the_window() {
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 0];
        let frame = frame_from_rows(&[(0..10).map(|v| v as f64).collect()], 60, Some(labels));
        let spec = WindowSpec::new(4, 2, 4).unwrap();
        let windows = make_windows(&frame, &spec, &CovariateConfig::default()).unwrap();
        assert_eq!(windows[0].label, Some(0));
        assert_eq!(windows[1].label, Some(1));

        let clean = frame_from_rows(&[(0..10).map(|v| v as f64).collect()], 60, Some(vec![0; 10]));
        let windows = make_windows(&clean, &spec, &CovariateConfig::default()).unwrap();
        assert!(windows.iter().all(|w| w.label == Some(0)));
    }

    #[test]
    fn covariates_are_bounded_and_flag_special_days() {
        let cfg = CovariateConfig::from_dates(["1970-01-02"]).unwrap();
        let cols = cfg.matrix(0, 43_200, 4); // two points per day
        for v in cols.iter() {
            assert!(v.abs() <= 1.0);
        }
        assert_eq!(cols[[4, 0]], 0.0);
        assert_eq!(cols[[4, 2]], 1.0); // lands on 1970-01-02
        assert_eq!(cols[[4, 3]], 1.0);
    }

    #[test]
    fn forecast_len_must_stay_below_context_len() {
        assert!(WindowSpec::new(4, 4, 1).is_err());
        assert!(WindowSpec::new(4, 5, 1).is_err());
        assert!(WindowSpec::new(0, 1, 1).is_err());
        assert!(WindowSpec::new(4, 2, 0).is_err());
    }
}
