//! Anomaly-indicating features over observation-or-forecast windows.
//!
//! Six categories: point statistics, frequency-domain shape, trend fits,
//! temporal dependencies, value distribution and cross-series relations.
//! The catalog order is canonical for a fixed config (metrics and pairs
//! sorted by name), which is the binding contract with the detector.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::ArrayView2;

use crate::error::{Error, Result};

mod categories;
mod gbt;
mod select;
mod stats;

pub use select::{
    load_mask, save_mask, select_features, write_catalog, FeatureMask, SelectMethod,
};
pub use stats::{acf, linregress, pacf, pearson, quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Point,
    Frequency,
    Trend,
    Temporal,
    Distribution,
    CrossSeries,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Point => "point",
            Category::Frequency => "frequency",
            Category::Trend => "trend",
            Category::Temporal => "temporal",
            Category::Distribution => "distribution",
            Category::CrossSeries => "cross-series",
        }
    }
}

/// What a feature ranges over, for the catalog manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    PerMetric,
    PerPair,
    PerWindow,
}

impl FeatureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureKind::PerMetric => "per-metric",
            FeatureKind::PerPair => "per-pair",
            FeatureKind::PerWindow => "per-window",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub name: String,
    pub category: Category,
    pub kind: FeatureKind,
}

/// Extraction parameters plus the metric-name/aspect binding. Row `i` of an
/// extracted window holds the metric `names[i]`; catalog order itself is
/// by sorted name, so storage order does not leak into features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    names: Vec<String>,
    aspects: BTreeMap<String, String>,
    window_len: usize,
    pub acf_lags: usize,
    pub fourier_k: usize,
    pub c3_lags: Vec<usize>,
    pub tlcc_max_lag: usize,
    pub mi_bins: usize,
    pub rolling_sub_len: usize,
    pub z_threshold: f64,
    pub special_days: BTreeSet<i64>,
    /// Adds the labeled-fraction feature; only meaningful when windows come
    /// with point labels.
    pub include_anomaly_ratio: bool,
}

impl FeatureConfig {
    /// Defaults sized to `window_len` (the concatenation width `l`).
    pub fn new(
        names: &[String],
        aspects: &BTreeMap<String, String>,
        window_len: usize,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidConfig("no metrics".into()));
        }
        if window_len < 4 {
            return Err(Error::InvalidConfig(format!(
                "window length {window_len} too short for feature extraction (need >= 4)"
            )));
        }
        let mut resolved = BTreeMap::new();
        for name in names {
            let aspect = aspects.get(name).cloned().unwrap_or_else(|| name.clone());
            resolved.insert(name.clone(), aspect);
        }
        let config = Self {
            names: names.to_vec(),
            aspects: resolved,
            window_len,
            acf_lags: (window_len - 1).min(8),
            fourier_k: (window_len / 2).min(5),
            c3_lags: [1, 2, 3].into_iter().filter(|&l| l < window_len).collect(),
            tlcc_max_lag: (window_len - 2).min(5).max(1),
            mi_bins: 4,
            rolling_sub_len: window_len.min(8),
            z_threshold: 3.5,
            special_days: BTreeSet::new(),
            include_anomaly_ratio: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.window_len;
        if self.acf_lags == 0 || self.acf_lags >= len {
            return Err(Error::InvalidConfig(format!(
                "acf_lags {} must be in 1..{len}",
                self.acf_lags
            )));
        }
        if self.fourier_k == 0 || 2 * self.fourier_k > len {
            return Err(Error::InvalidConfig(format!(
                "fourier_k {} needs window length >= {}",
                self.fourier_k,
                2 * self.fourier_k
            )));
        }
        if self.c3_lags.is_empty() || self.c3_lags.iter().any(|&l| l == 0 || l >= len) {
            return Err(Error::InvalidConfig("c3 lags must be in 1..window_len".into()));
        }
        if self.tlcc_max_lag == 0 || self.tlcc_max_lag >= len {
            return Err(Error::InvalidConfig("tlcc_max_lag must be in 1..window_len".into()));
        }
        if self.mi_bins < 2 {
            return Err(Error::InvalidConfig("mi_bins must be at least 2".into()));
        }
        if self.rolling_sub_len < 3 || self.rolling_sub_len > len {
            return Err(Error::InvalidConfig(format!(
                "rolling_sub_len {} must be in 3..={len}",
                self.rolling_sub_len
            )));
        }
        if self.z_threshold <= 0.0 {
            return Err(Error::InvalidConfig("z_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn aspect_of<'a>(&'a self, name: &'a str) -> &'a str {
        self.aspects.get(name).map(String::as_str).unwrap_or(name)
    }

    /// Metric row indices in canonical (sorted-name) order.
    pub(crate) fn sorted_metrics(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.names.len()).collect();
        idx.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        idx
    }

    /// Metric index pairs in canonical order (both names sorted).
    pub(crate) fn sorted_pairs(&self) -> Vec<(usize, usize)> {
        let sorted = self.sorted_metrics();
        let mut pairs = Vec::new();
        for i in 0..sorted.len() {
            for j in i + 1..sorted.len() {
                pairs.push((sorted[i], sorted[j]));
            }
        }
        pairs
    }

    pub(crate) fn same_aspect(&self, a: usize, b: usize) -> bool {
        self.aspect_of(&self.names[a]) == self.aspect_of(&self.names[b])
    }

    /// Metrics tagged with the "io" aspect get spectral-kurtosis features.
    pub(crate) fn io_metrics(&self) -> Vec<usize> {
        self.sorted_metrics()
            .into_iter()
            .filter(|&i| self.aspect_of(&self.names[i]).eq_ignore_ascii_case("io"))
            .collect()
    }

    /// The full feature catalog in extraction order.
    pub fn catalog(&self) -> Vec<CatalogEntry> {
        let mut out = Vec::new();
        out.extend(categories::point_names(self));
        out.extend(categories::frequency_names(self));
        out.extend(categories::trend_names(self));
        out.extend(categories::temporal_names(self));
        out.extend(categories::distribution_names(self));
        out.extend(categories::cross_names(self));
        out
    }
}

/// Borrowed view of one window's data for extraction.
#[derive(Debug, Clone, Copy)]
pub struct WindowView<'a> {
    /// `m x window_len` values, rows bound to `FeatureConfig::names`.
    pub values: ArrayView2<'a, f64>,
    pub timestamps: &'a [i64],
    pub point_labels: Option<&'a [u8]>,
}

impl<'a> WindowView<'a> {
    pub fn new(values: ArrayView2<'a, f64>, timestamps: &'a [i64]) -> Self {
        Self {
            values,
            timestamps,
            point_labels: None,
        }
    }

    pub(crate) fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).to_vec()
    }
}

/// Ordered named feature values; order is the catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }
}

macro_rules! category_op {
    ($(#[$doc:meta])* $fn_name:ident, $names:path, $values:path) => {
        $(#[$doc])*
        pub fn $fn_name(window: &WindowView<'_>, config: &FeatureConfig) -> Result<FeatureVector> {
            check_window(window, config)?;
            let names: Vec<String> = $names(config).into_iter().map(|e| e.name).collect();
            let values = sanitize($values(window, config));
            debug_assert_eq!(names.len(), values.len());
            Ok(FeatureVector { names, values })
        }
    };
}

category_op!(
    /// Extremes, zero counts, special days and modified-Z outlier counts.
    point_features,
    categories::point_names,
    categories::point_values
);
category_op!(
    /// Fourier coefficients, spectrum shape, cross-spectra and spectral kurtosis.
    frequency_features,
    categories::frequency_names,
    categories::frequency_values
);
category_op!(
    /// Least-squares trend over the window and rolling subsequences, plus c3.
    trend_features,
    categories::trend_names,
    categories::trend_values
);
category_op!(
    /// Autocorrelation summaries and neighboring-point change statistics.
    temporal_features,
    categories::temporal_names,
    categories::temporal_values
);
category_op!(
    /// Spread, shape, quantiles and the pooled cross-metric distribution.
    distribution_features,
    categories::distribution_names,
    categories::distribution_values
);
category_op!(
    /// Pairwise distance, correlation, lagged correlation and mutual information.
    cross_series_features,
    categories::cross_names,
    categories::cross_values
);

/// All six categories concatenated in catalog order. Non-finite
/// intermediates are replaced by 0 (with a logged warning).
pub fn extract_all(window: &WindowView<'_>, config: &FeatureConfig) -> Result<FeatureVector> {
    check_window(window, config)?;
    let names: Vec<String> = config.catalog().into_iter().map(|e| e.name).collect();
    let mut values = Vec::with_capacity(names.len());
    values.extend(categories::point_values(window, config));
    values.extend(categories::frequency_values(window, config));
    values.extend(categories::trend_values(window, config));
    values.extend(categories::temporal_values(window, config));
    values.extend(categories::distribution_values(window, config));
    values.extend(categories::cross_values(window, config));
    debug_assert_eq!(names.len(), values.len());
    Ok(FeatureVector {
        names,
        values: sanitize(values),
    })
}

fn check_window(window: &WindowView<'_>, config: &FeatureConfig) -> Result<()> {
    config.validate()?;
    let (m, len) = window.values.dim();
    if m != config.names.len() {
        return Err(Error::ShapeMismatch(format!(
            "window has {m} metric rows, config binds {}",
            config.names.len()
        )));
    }
    if len != config.window_len {
        return Err(Error::ShapeMismatch(format!(
            "window length {len} differs from configured {}",
            config.window_len
        )));
    }
    if window.timestamps.len() != len {
        return Err(Error::ShapeMismatch(format!(
            "{} timestamps for {len} columns",
            window.timestamps.len()
        )));
    }
    if let Some(labels) = window.point_labels {
        if labels.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {len} columns",
                labels.len()
            )));
        }
    }
    Ok(())
}

fn sanitize(mut values: Vec<f64>) -> Vec<f64> {
    let mut fixed = 0usize;
    for v in &mut values {
        if !v.is_finite() {
            *v = 0.0;
            fixed += 1;
        }
    }
    if fixed > 0 {
        log::warn!("replaced {fixed} non-finite feature values with 0");
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    fn timestamps(n: usize) -> Vec<i64> {
        (0..n as i64).map(|j| j * 60).collect()
    }

    #[test]
    fn univariate_window_has_no_cross_series_entries() {
        let config = FeatureConfig::new(&names(1), &BTreeMap::new(), 16).unwrap();
        let values = Array2::from_shape_fn((1, 16), |(_, j)| (j as f64 * 0.7).sin());
        let ts = timestamps(16);
        let view = WindowView::new(values.view(), &ts);
        let cross = cross_series_features(&view, &config).unwrap();
        assert!(cross.is_empty());
        let all = extract_all(&view, &config).unwrap();
        assert!(!all.is_empty());
        assert!(all.names().iter().all(|n| !n.starts_with("cross-series.")));
    }

    #[test]
    fn extraction_order_matches_catalog_and_is_stable() {
        let config = FeatureConfig::new(&names(2), &BTreeMap::new(), 16).unwrap();
        let values =
            Array2::from_shape_fn((2, 16), |(i, j)| ((i + 1) as f64 * j as f64 * 0.3).cos());
        let ts = timestamps(16);
        let view = WindowView::new(values.view(), &ts);
        let a = extract_all(&view, &config).unwrap();
        let b = extract_all(&view, &config).unwrap();
        assert_eq!(a, b);
        let catalog: Vec<String> = config.catalog().into_iter().map(|e| e.name).collect();
        assert_eq!(a.names(), &catalog[..]);
        let unique: std::collections::BTreeSet<&String> = a.names().iter().collect();
        assert_eq!(unique.len(), a.len());
    }

    #[test]
    fn catalog_count_matches_enumeration_for_two_metrics() {
        let config = FeatureConfig::new(&names(2), &BTreeMap::new(), 16).unwrap();
        // Independent enumeration with default parameters: per metric
        // point 6, frequency 3k+4, trend 6 + |c3_lags|, temporal 9,
        // distribution 6; per window 1 special-day count + 2 joint moments;
        // one pair with distinct aspects contributes 4 cross features and
        // no CID.
        let per_metric = 6 + (3 * config.fourier_k + 4) + (6 + config.c3_lags.len()) + 9 + 6;
        let expected = 2 * per_metric + 1 + 2 + 4;
        assert_eq!(config.catalog().len(), expected);
        let values = Array2::from_shape_fn((2, 16), |(i, j)| (i + j) as f64);
        let ts = timestamps(16);
        let all = extract_all(&WindowView::new(values.view(), &ts), &config).unwrap();
        assert_eq!(all.len(), expected);
    }

    #[test]
    fn storage_row_order_does_not_change_features() {
        let aspects: BTreeMap<String, String> = [
            ("a".to_string(), "cpu".to_string()),
            ("b".to_string(), "cpu".to_string()),
        ]
        .into();
        let ts = timestamps(12);
        let row_a: Vec<f64> = (0..12).map(|j| (j as f64 * 0.4).sin() + 1.0).collect();
        let row_b: Vec<f64> = (0..12).map(|j| (j as f64 * 0.9).cos() * 2.0).collect();

        let names_ab = vec!["a".to_string(), "b".to_string()];
        let mut values_ab = Array2::zeros((2, 12));
        for j in 0..12 {
            values_ab[[0, j]] = row_a[j];
            values_ab[[1, j]] = row_b[j];
        }
        let config_ab = FeatureConfig::new(&names_ab, &aspects, 12).unwrap();
        let fa = extract_all(&WindowView::new(values_ab.view(), &ts), &config_ab).unwrap();

        let names_ba = vec!["b".to_string(), "a".to_string()];
        let mut values_ba = Array2::zeros((2, 12));
        for j in 0..12 {
            values_ba[[0, j]] = row_b[j];
            values_ba[[1, j]] = row_a[j];
        }
        let config_ba = FeatureConfig::new(&names_ba, &aspects, 12).unwrap();
        let fb = extract_all(&WindowView::new(values_ba.view(), &ts), &config_ba).unwrap();

        assert_eq!(fa, fb);
    }

    #[test]
    fn anomaly_ratio_feature_is_opt_in() {
        let mut config = FeatureConfig::new(&names(1), &BTreeMap::new(), 8).unwrap();
        let values = Array2::from_shape_fn((1, 8), |(_, j)| j as f64);
        let ts = timestamps(8);
        let base = extract_all(&WindowView::new(values.view(), &ts), &config).unwrap();
        assert!(base.get("distribution.window.anomaly_ratio").is_none());

        config.include_anomaly_ratio = true;
        let labels = [0u8, 0, 1, 1, 0, 0, 0, 0];
        let mut view = WindowView::new(values.view(), &ts);
        view.point_labels = Some(&labels);
        let with = extract_all(&view, &config).unwrap();
        assert_eq!(with.get("distribution.window.anomaly_ratio"), Some(0.25));
        assert_eq!(with.len(), base.len() + 1);
    }

    #[test]
    fn window_shape_mismatches_are_rejected() {
        let config = FeatureConfig::new(&names(2), &BTreeMap::new(), 16).unwrap();
        let values = Array2::zeros((2, 12));
        let ts = timestamps(12);
        assert!(extract_all(&WindowView::new(values.view(), &ts), &config).is_err());
        let values = Array2::zeros((1, 16));
        let ts = timestamps(16);
        assert!(extract_all(&WindowView::new(values.view(), &ts), &config).is_err());
    }
}
