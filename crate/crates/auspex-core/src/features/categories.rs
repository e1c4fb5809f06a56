//! The six feature categories. Every category comes as a name enumerator
//! and a value computer that walk metrics/pairs in the same canonical
//! order; `extract_all` zips them.

use super::stats;
use super::{CatalogEntry, Category, FeatureConfig, FeatureKind, WindowView};

fn entry(name: String, category: Category, kind: FeatureKind) -> CatalogEntry {
    CatalogEntry {
        name,
        category,
        kind,
    }
}

// ---------------------------------------------------------------------------
// Point
// ---------------------------------------------------------------------------

const POINT_STATS: [&str; 6] = ["min", "max", "abs_min", "abs_max", "zero_count", "over_z_count"];

pub(super) fn point_names(config: &FeatureConfig) -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        for stat in POINT_STATS {
            out.push(entry(
                format!("point.{}.{stat}", config.names()[mi]),
                Category::Point,
                FeatureKind::PerMetric,
            ));
        }
    }
    out.push(entry(
        "point.window.special_day_count".into(),
        Category::Point,
        FeatureKind::PerWindow,
    ));
    out
}

pub(super) fn point_values(window: &WindowView<'_>, config: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        let x = window.row(mi);
        out.push(x.iter().copied().fold(f64::INFINITY, f64::min));
        out.push(x.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.push(x.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min));
        out.push(x.iter().map(|v| v.abs()).fold(f64::NEG_INFINITY, f64::max));
        out.push(x.iter().filter(|&&v| v == 0.0).count() as f64);
        out.push(over_z_count(&x, config.z_threshold));
    }
    let special = window
        .timestamps
        .iter()
        .filter(|&&ts| config.special_days.contains(&ts.div_euclid(86_400)))
        .count();
    out.push(special as f64);
    out
}

/// Modified Z-score count: `0.6745 (x - median) / MAD` beyond the threshold.
/// With MAD = 0, points at the median score 0 and every other point counts.
fn over_z_count(x: &[f64], threshold: f64) -> f64 {
    let med = stats::median(x);
    let deviations: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let mad = stats::median(&deviations);
    let count = if mad == 0.0 {
        x.iter().filter(|&&v| v != med).count()
    } else {
        x.iter()
            .filter(|&&v| (0.6745 * (v - med) / mad).abs() > threshold)
            .count()
    };
    count as f64
}

// ---------------------------------------------------------------------------
// Frequency
// ---------------------------------------------------------------------------

pub(super) fn frequency_names(config: &FeatureConfig) -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        let name = &config.names()[mi];
        for k in 1..=config.fourier_k {
            for part in ["re", "im", "mag"] {
                out.push(entry(
                    format!("frequency.{name}.fc{k}_{part}"),
                    Category::Frequency,
                    FeatureKind::PerMetric,
                ));
            }
        }
        for stat in ["spec_centroid", "spec_var", "spec_skew", "spec_kurt"] {
            out.push(entry(
                format!("frequency.{name}.{stat}"),
                Category::Frequency,
                FeatureKind::PerMetric,
            ));
        }
    }
    for &(a, b) in &config.sorted_pairs() {
        if config.same_aspect(a, b) {
            out.push(entry(
                format!("frequency.{}|{}.cpsd_mean", config.names()[a], config.names()[b]),
                Category::Frequency,
                FeatureKind::PerPair,
            ));
        }
    }
    for &mi in &config.io_metrics() {
        for stat in ["sk_mean", "sk_max"] {
            out.push(entry(
                format!("frequency.{}.{stat}", config.names()[mi]),
                Category::Frequency,
                FeatureKind::PerMetric,
            ));
        }
    }
    out
}

pub(super) fn frequency_values(window: &WindowView<'_>, config: &FeatureConfig) -> Vec<f64> {
    let len = config.window_len();
    let half = len / 2;
    let mut out = Vec::new();
    let spectra: Vec<Vec<rustfft::num_complex::Complex64>> = (0..config.names().len())
        .map(|mi| stats::dft(&window.row(mi)))
        .collect();

    for &mi in &config.sorted_metrics() {
        let spec = &spectra[mi];
        for k in 1..=config.fourier_k {
            out.push(spec[k].re);
            out.push(spec[k].im);
            out.push(spec[k].norm());
        }
        let mags: Vec<f64> = (1..=half).map(|k| spec[k].norm()).collect();
        out.extend(spectrum_shape(&mags));
    }

    for &(a, b) in &config.sorted_pairs() {
        if config.same_aspect(a, b) {
            let mut acc = 0.0;
            for k in 1..=half {
                acc += (spectra[a][k] * spectra[b][k].conj()).norm() / len as f64;
            }
            out.push(if half == 0 { 0.0 } else { acc / half as f64 });
        }
    }

    for &mi in &config.io_metrics() {
        let (sk_mean, sk_max) = spectral_kurtosis(&window.row(mi));
        out.push(sk_mean);
        out.push(sk_max);
    }
    out
}

/// Centroid, variance, skewness and excess kurtosis of the magnitude
/// spectrum, treating magnitudes as weights over bin indices.
fn spectrum_shape(mags: &[f64]) -> [f64; 4] {
    let total: f64 = mags.iter().sum();
    if total == 0.0 {
        return [0.0; 4];
    }
    let moment = |p: i32, center: f64| -> f64 {
        mags.iter()
            .enumerate()
            .map(|(i, w)| ((i + 1) as f64 - center).powi(p) * w)
            .sum::<f64>()
            / total
    };
    let centroid = moment(1, 0.0);
    let var = moment(2, centroid);
    if var == 0.0 {
        return [centroid, 0.0, 0.0, 0.0];
    }
    let skew = moment(3, centroid) / var.powf(1.5);
    let kurt = moment(4, centroid) / (var * var) - 3.0;
    [centroid, var, skew, kurt]
}

/// Short-time spectral kurtosis: kurtosis of each frequency bin's magnitude
/// across frames, summarized by mean and max. Degenerate framing yields 0.
fn spectral_kurtosis(x: &[f64]) -> (f64, f64) {
    let len = x.len();
    let win = (len / 4).clamp(4, 32).min(len);
    let hop = (win / 2).max(1);
    let mut frames = Vec::new();
    let mut off = 0;
    while off + win <= len {
        frames.push(stats::dft(&x[off..off + win]));
        off += hop;
    }
    if frames.len() < 2 || win < 2 {
        return (0.0, 0.0);
    }
    let bins = win / 2;
    let mut mean_acc = 0.0;
    let mut max_acc = f64::NEG_INFINITY;
    for k in 1..=bins {
        let series: Vec<f64> = frames.iter().map(|f| f[k].norm()).collect();
        let kurt = stats::kurtosis(&series);
        mean_acc += kurt;
        max_acc = max_acc.max(kurt);
    }
    (mean_acc / bins as f64, max_acc)
}

// ---------------------------------------------------------------------------
// Trend
// ---------------------------------------------------------------------------

pub(super) fn trend_names(config: &FeatureConfig) -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        let name = &config.names()[mi];
        for stat in [
            "lls_slope",
            "lls_intercept",
            "lls_stderr",
            "lls_agg_slope",
            "lls_agg_intercept",
            "lls_agg_stderr",
        ] {
            out.push(entry(
                format!("trend.{name}.{stat}"),
                Category::Trend,
                FeatureKind::PerMetric,
            ));
        }
        for &lag in &config.c3_lags {
            out.push(entry(
                format!("trend.{name}.c3_lag{lag}"),
                Category::Trend,
                FeatureKind::PerMetric,
            ));
        }
    }
    out
}

pub(super) fn trend_values(window: &WindowView<'_>, config: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        let x = window.row(mi);
        let (slope, intercept, stderr) = stats::linregress(&x);
        out.push(slope);
        out.push(intercept);
        out.push(stderr);

        let sub = config.rolling_sub_len;
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        let mut off = 0;
        while off + sub <= x.len() {
            let (s, i, e) = stats::linregress(&x[off..off + sub]);
            sums[0] += s;
            sums[1] += i;
            sums[2] += e;
            count += 1;
            off += 1;
        }
        let denom = count.max(1) as f64;
        out.push(sums[0] / denom);
        out.push(sums[1] / denom);
        out.push(sums[2] / denom);

        for &lag in &config.c3_lags {
            out.push(c3(&x, lag));
        }
    }
    out
}

/// Third-order autocovariance-style nonlinearity measure:
/// `mean(x[i + 2 lag] * x[i + lag] * x[i])`, 0 when the window is too short.
fn c3(x: &[f64], lag: usize) -> f64 {
    if x.len() <= 2 * lag {
        return 0.0;
    }
    let n = x.len() - 2 * lag;
    (0..n).map(|i| x[i + 2 * lag] * x[i + lag] * x[i]).sum::<f64>() / n as f64
}

// ---------------------------------------------------------------------------
// Temporal
// ---------------------------------------------------------------------------

const TEMPORAL_STATS: [&str; 9] = [
    "acf_mean",
    "acf_var",
    "pacf_mean",
    "pacf_var",
    "margin_sum",
    "mar_min",
    "mar_max",
    "mar_abs_min",
    "mar_abs_max",
];

pub(super) fn temporal_names(config: &FeatureConfig) -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        for stat in TEMPORAL_STATS {
            out.push(entry(
                format!("temporal.{}.{stat}", config.names()[mi]),
                Category::Temporal,
                FeatureKind::PerMetric,
            ));
        }
    }
    out
}

pub(super) fn temporal_values(window: &WindowView<'_>, config: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        let x = window.row(mi);
        let acf = stats::acf(&x, config.acf_lags);
        let lags = &acf[1..];
        out.push(stats::mean(lags));
        out.push(stats::variance(lags));
        let pacf = stats::pacf(&x, config.acf_lags);
        out.push(stats::mean(&pacf));
        out.push(stats::variance(&pacf));

        let diffs: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
        out.push(diffs.iter().map(|d| d.abs()).sum());
        out.push(diffs.iter().copied().fold(f64::INFINITY, f64::min));
        out.push(diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.push(diffs.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min));
        out.push(diffs.iter().map(|d| d.abs()).fold(f64::NEG_INFINITY, f64::max));
    }
    out
}

// ---------------------------------------------------------------------------
// Distribution
// ---------------------------------------------------------------------------

const DIST_STATS: [&str; 6] = ["std", "skew", "kurt", "q10", "q50", "q90"];

pub(super) fn distribution_names(config: &FeatureConfig) -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        for stat in DIST_STATS {
            out.push(entry(
                format!("distribution.{}.{stat}", config.names()[mi]),
                Category::Distribution,
                FeatureKind::PerMetric,
            ));
        }
    }
    for stat in ["skew", "kurt"] {
        out.push(entry(
            format!("distribution.joint.{stat}"),
            Category::Distribution,
            FeatureKind::PerWindow,
        ));
    }
    if config.include_anomaly_ratio {
        out.push(entry(
            "distribution.window.anomaly_ratio".into(),
            Category::Distribution,
            FeatureKind::PerWindow,
        ));
    }
    out
}

pub(super) fn distribution_values(window: &WindowView<'_>, config: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for &mi in &config.sorted_metrics() {
        let x = window.row(mi);
        out.push(stats::std_dev(&x));
        out.push(stats::skewness(&x));
        out.push(stats::kurtosis(&x));
        out.push(stats::quantile(&x, 0.1));
        out.push(stats::quantile(&x, 0.5));
        out.push(stats::quantile(&x, 0.9));
    }
    // Pool in canonical metric order so storage order cannot perturb the
    // floating-point sums.
    let mut pooled = Vec::with_capacity(window.values.len());
    for &mi in &config.sorted_metrics() {
        pooled.extend(window.row(mi));
    }
    out.push(stats::skewness(&pooled));
    out.push(stats::kurtosis(&pooled));
    if config.include_anomaly_ratio {
        let ratio = match window.point_labels {
            Some(labels) if !labels.is_empty() => {
                labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64
            }
            _ => {
                log::warn!("anomaly-ratio feature requested without point labels; emitting 0");
                0.0
            }
        };
        out.push(ratio);
    }
    out
}

// ---------------------------------------------------------------------------
// Cross-series
// ---------------------------------------------------------------------------

pub(super) fn cross_names(config: &FeatureConfig) -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for &(a, b) in &config.sorted_pairs() {
        let pair = format!("{}|{}", config.names()[a], config.names()[b]);
        if config.same_aspect(a, b) {
            out.push(entry(
                format!("cross-series.{pair}.cid"),
                Category::CrossSeries,
                FeatureKind::PerPair,
            ));
        }
        for stat in ["pearson", "tlcc_max", "tlcc_lag", "mi"] {
            out.push(entry(
                format!("cross-series.{pair}.{stat}"),
                Category::CrossSeries,
                FeatureKind::PerPair,
            ));
        }
    }
    out
}

pub(super) fn cross_values(window: &WindowView<'_>, config: &FeatureConfig) -> Vec<f64> {
    let mut out = Vec::new();
    for &(a, b) in &config.sorted_pairs() {
        let x = window.row(a);
        let y = window.row(b);
        if config.same_aspect(a, b) {
            out.push(cid(&x, &y));
        }
        out.push(stats::pearson(&x, &y));
        let (max_corr, at_lag) = tlcc(&x, &y, config.tlcc_max_lag);
        out.push(max_corr);
        out.push(at_lag as f64);
        out.push(mutual_information(&x, &y, config.mi_bins));
    }
    out
}

/// Complexity-invariant distance: Euclidean distance stretched by the ratio
/// of the two series' complexity estimates `sqrt(sum of squared diffs)`.
fn cid(x: &[f64], y: &[f64]) -> f64 {
    let dist = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let ce = |v: &[f64]| -> f64 {
        v.windows(2)
            .map(|p| (p[1] - p[0]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (ca, cb) = (ce(x), ce(y));
    let (lo, hi) = if ca < cb { (ca, cb) } else { (cb, ca) };
    if dist == 0.0 {
        return 0.0;
    }
    if lo == 0.0 && hi == 0.0 {
        return dist;
    }
    dist * hi / lo // lo == 0 gives inf; extract_all sanitizes to 0
}

/// Max Pearson correlation of `(x_i, y_{i+lag})` over `lag` in
/// `-max_lag..=max_lag`, and the first lag attaining it.
fn tlcc(x: &[f64], y: &[f64], max_lag: usize) -> (f64, i64) {
    let n = x.len() as i64;
    let mut best = f64::NEG_INFINITY;
    let mut best_lag = 0i64;
    for lag in -(max_lag as i64)..=max_lag as i64 {
        let start = 0.max(-lag);
        let end = n - 1 - 0.max(lag) + 1;
        if end - start < 2 {
            continue;
        }
        let xs: Vec<f64> = (start..end).map(|i| x[i as usize]).collect();
        let ys: Vec<f64> = (start..end).map(|i| y[(i + lag) as usize]).collect();
        let r = stats::pearson(&xs, &ys);
        if r > best {
            best = r;
            best_lag = lag;
        }
    }
    if best == f64::NEG_INFINITY {
        (0.0, 0)
    } else {
        (best, best_lag)
    }
}

/// Mutual information from a joint histogram over per-series quantile bins.
fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> f64 {
    let edges = |v: &[f64]| -> Vec<f64> {
        (1..bins)
            .map(|b| stats::quantile(v, b as f64 / bins as f64))
            .collect()
    };
    let assign = |v: f64, edges: &[f64]| -> usize { edges.iter().filter(|&&e| v > e).count() };
    let ex = edges(x);
    let ey = edges(y);
    let n = x.len();
    let mut joint = vec![vec![0usize; bins]; bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for i in 0..n {
        let bx = assign(x[i], &ex);
        let by = assign(y[i], &ey);
        joint[bx][by] += 1;
        mx[bx] += 1;
        my[by] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for bx in 0..bins {
        for by in 0..bins {
            let c = joint[bx][by];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / nf;
            let px = mx[bx] as f64 / nf;
            let py = my[by] as f64 / nf;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::collections::BTreeMap;

    fn config_for(names: &[&str], aspects: &[(&str, &str)], len: usize) -> FeatureConfig {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let aspects: BTreeMap<String, String> = aspects
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        FeatureConfig::new(&names, &aspects, len).unwrap()
    }

    fn single_view<'a>(values: &'a Array2<f64>, ts: &'a [i64]) -> WindowView<'a> {
        WindowView::new(values.view(), ts)
    }

    #[test]
    fn point_counts_zeroes_and_extremes() {
        let config = config_for(&["m0"], &[], 4);
        let values = Array2::from_shape_vec((1, 4), vec![0.0, 0.0, 3.0, -1.0]).unwrap();
        let ts = [0i64, 60, 120, 180];
        let fv = super::super::point_features(&single_view(&values, &ts), &config).unwrap();
        assert_eq!(fv.get("point.m0.zero_count"), Some(2.0));
        assert_eq!(fv.get("point.m0.max"), Some(3.0));
        assert_eq!(fv.get("point.m0.min"), Some(-1.0));
        assert_eq!(fv.get("point.m0.abs_min"), Some(0.0));
        assert_eq!(fv.get("point.m0.abs_max"), Some(3.0));
    }

    #[test]
    fn constant_series_has_no_outliers() {
        let config = config_for(&["m0"], &[], 6);
        let values = Array2::from_elem((1, 6), 5.0);
        let ts: Vec<i64> = (0..6).map(|j| j * 60).collect();
        let fv = super::super::point_features(&single_view(&values, &ts), &config).unwrap();
        assert_eq!(fv.get("point.m0.over_z_count"), Some(0.0));
    }

    #[test]
    fn single_far_point_over_zero_mad_counts() {
        // MAD = 0 here: the median is 1 and most deviations are 0; the one
        // deviating point counts.
        let x = [1.0, 1.0, 1.0, 1.0, 100.0];
        assert_eq!(over_z_count(&x, 3.5), 1.0);
    }

    #[test]
    fn modified_z_matches_direct_evaluation() {
        let x = [2.0, 4.0, 6.0, 8.0, 100.0, 5.0, 5.5, 3.0];
        let med = stats::median(&x);
        let mut dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = (dev[3] + dev[4]) / 2.0;
        let expected = x
            .iter()
            .filter(|&&v| (0.6745 * (v - med) / mad).abs() > 3.5)
            .count() as f64;
        assert_eq!(over_z_count(&x, 3.5), expected);
    }

    #[test]
    fn constant_series_has_empty_spectrum_features() {
        let config = config_for(&["m0"], &[], 16);
        let values = Array2::from_elem((1, 16), 2.5);
        let ts: Vec<i64> = (0..16).map(|j| j * 60).collect();
        let fv = super::super::frequency_features(&single_view(&values, &ts), &config).unwrap();
        for k in 1..=config.fourier_k {
            assert!(fv.get(&format!("frequency.m0.fc{k}_mag")).unwrap().abs() < 1e-9);
        }
        assert_eq!(fv.get("frequency.m0.spec_centroid"), Some(0.0));
    }

    #[test]
    fn pure_tone_concentrates_at_its_bin() {
        let config = config_for(&["m0"], &[], 32);
        let values =
            Array2::from_shape_fn((1, 32), |(_, j)| (std::f64::consts::TAU * 3.0 * j as f64 / 32.0).sin());
        let ts: Vec<i64> = (0..32).map(|j| j * 60).collect();
        let fv = super::super::frequency_features(&single_view(&values, &ts), &config).unwrap();
        let mag3 = fv.get("frequency.m0.fc3_mag").unwrap();
        assert!((mag3 - 16.0).abs() < 1e-9, "{mag3}");
        for k in [1usize, 2, 4, 5] {
            assert!(fv.get(&format!("frequency.m0.fc{k}_mag")).unwrap().abs() < 1e-9);
        }
        let centroid = fv.get("frequency.m0.spec_centroid").unwrap();
        assert!((centroid - 3.0).abs() < 1e-9);
    }

    #[test]
    fn self_cpsd_is_the_power_spectrum() {
        // Two identical metrics in one aspect: cpsd(x, x) should equal the
        // mean |X[k]|^2 / L over the one-sided bins.
        let config = config_for(&["a", "b"], &[("a", "cpu"), ("b", "cpu")], 16);
        let mut values = Array2::zeros((2, 16));
        for j in 0..16 {
            let v = (j as f64 * 0.7).sin() + 0.2 * (j as f64 * 1.9).cos();
            values[[0, j]] = v;
            values[[1, j]] = v;
        }
        let ts: Vec<i64> = (0..16).map(|j| j * 60).collect();
        let fv = super::super::frequency_features(&single_view(&values, &ts), &config).unwrap();
        let spec = stats::dft(&values.row(0).to_vec());
        let expected: f64 = (1..=8).map(|k| spec[k].norm_sqr() / 16.0).sum::<f64>() / 8.0;
        let got = fv.get("frequency.a|b.cpsd_mean").unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn linear_window_fits_exactly() {
        let config = config_for(&["m0"], &[], 4);
        let values = Array2::from_shape_vec((1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ts = [0i64, 60, 120, 180];
        let fv = super::super::trend_features(&single_view(&values, &ts), &config).unwrap();
        assert!((fv.get("trend.m0.lls_slope").unwrap() - 1.0).abs() < 1e-12);
        assert!((fv.get("trend.m0.lls_intercept").unwrap() - 1.0).abs() < 1e-12);
        assert!(fv.get("trend.m0.lls_stderr").unwrap().abs() < 1e-9);
    }

    #[test]
    fn c3_of_constant_is_cube() {
        let x = [2.0; 10];
        for lag in 1..4 {
            assert!((c3(&x, lag) - 8.0).abs() < 1e-12);
        }
        assert_eq!(c3(&x, 5), 0.0); // 10 <= 2*5
    }

    #[test]
    fn margin_sum_adds_absolute_changes() {
        let config = config_for(&["m0"], &[], 4);
        let values = Array2::from_shape_vec((1, 4), vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let ts = [0i64, 60, 120, 180];
        let fv = super::super::temporal_features(&single_view(&values, &ts), &config).unwrap();
        assert_eq!(fv.get("temporal.m0.margin_sum"), Some(3.0));
        assert_eq!(fv.get("temporal.m0.mar_min"), Some(-1.0));
        assert_eq!(fv.get("temporal.m0.mar_max"), Some(2.0));
        assert_eq!(fv.get("temporal.m0.mar_abs_min"), Some(0.0));
        assert_eq!(fv.get("temporal.m0.mar_abs_max"), Some(2.0));
    }

    #[test]
    fn quantiles_of_one_to_ten() {
        let config = config_for(&["m0"], &[], 10);
        let values = Array2::from_shape_fn((1, 10), |(_, j)| (j + 1) as f64);
        let ts: Vec<i64> = (0..10).map(|j| j * 60).collect();
        let fv = super::super::distribution_features(&single_view(&values, &ts), &config).unwrap();
        assert_eq!(fv.get("distribution.m0.q50"), Some(5.5));
        let std = fv.get("distribution.m0.std").unwrap();
        assert!((std - stats::std_dev(&values.row(0).to_vec())).abs() < 1e-12);
    }

    #[test]
    fn constant_distribution_shape_reports_zero() {
        let config = config_for(&["m0"], &[], 8);
        let values = Array2::from_elem((1, 8), 3.0);
        let ts: Vec<i64> = (0..8).map(|j| j * 60).collect();
        let fv = super::super::distribution_features(&single_view(&values, &ts), &config).unwrap();
        assert_eq!(fv.get("distribution.m0.std"), Some(0.0));
        assert_eq!(fv.get("distribution.m0.skew"), Some(0.0));
        assert_eq!(fv.get("distribution.m0.kurt"), Some(0.0));
    }

    #[test]
    fn self_pair_correlates_perfectly_and_cid_is_zero() {
        let config = config_for(&["a", "b"], &[("a", "cpu"), ("b", "cpu")], 12);
        let mut values = Array2::zeros((2, 12));
        for j in 0..12 {
            let v = (j as f64 * 0.8).sin() + j as f64 * 0.1;
            values[[0, j]] = v;
            values[[1, j]] = v;
        }
        let ts: Vec<i64> = (0..12).map(|j| j * 60).collect();
        let fv = super::super::cross_series_features(&single_view(&values, &ts), &config).unwrap();
        assert!((fv.get("cross-series.a|b.pearson").unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fv.get("cross-series.a|b.cid"), Some(0.0));
        assert!(fv.get("cross-series.a|b.mi").unwrap() >= 0.0);
    }

    #[test]
    fn shifted_pair_peaks_at_its_lag() {
        let config = config_for(&["a", "b"], &[], 32);
        let mut values = Array2::zeros((2, 32));
        for j in 0..32 {
            values[[0, j]] = (j as f64 * 0.5).sin();
        }
        for j in 0..32 {
            // b trails a by two steps: b[j] = a[j - 2]
            values[[1, j]] = ((j as f64 - 2.0) * 0.5).sin();
        }
        let ts: Vec<i64> = (0..32).map(|j| j * 60).collect();
        let fv = super::super::cross_series_features(&single_view(&values, &ts), &config).unwrap();
        assert_eq!(fv.get("cross-series.a|b.tlcc_lag"), Some(2.0));
        assert!((fv.get("cross-series.a|b.tlcc_max").unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn io_metrics_get_spectral_kurtosis() {
        let config = config_for(&["d0", "d1"], &[("d0", "io"), ("d1", "cpu")], 32);
        let names: Vec<String> = config.catalog().into_iter().map(|e| e.name).collect();
        assert!(names.contains(&"frequency.d0.sk_mean".to_string()));
        assert!(names.contains(&"frequency.d0.sk_max".to_string()));
        assert!(!names.contains(&"frequency.d1.sk_mean".to_string()));
    }
}
