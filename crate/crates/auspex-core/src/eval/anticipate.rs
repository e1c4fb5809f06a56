//! The anticipation driver: forecast the horizon, slide the window so the
//! concatenation of the observed tail and the forecast is exactly `l` wide,
//! featurize, mask and score. Plus the results-file format shared by the
//! CLI's anticipate and evaluate steps.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::diffusion::{forecast, ForecastConfig, ForecasterModel};
use crate::error::{Error, Result};
use crate::features::{extract_all, FeatureConfig, FeatureMask, WindowView};
use crate::forest::{detect, IsolationForest};
use crate::series::Window;

/// Outcome of anticipating one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AnticipationResult {
    pub id: usize,
    pub score: f64,
    pub flag: u8,
    pub label: Option<u8>,
    /// Point forecast in original units, `m x s`.
    pub forecast: Array2<f64>,
    /// Ground-truth future when the window carried one.
    pub truth: Option<Array2<f64>>,
    pub forecast_secs: f64,
    pub feature_secs: f64,
    pub detect_secs: f64,
}

fn check_binding(
    feature_config: &FeatureConfig,
    mask: &FeatureMask,
    forest: &IsolationForest,
) -> Result<()> {
    let catalog: Vec<String> = feature_config.catalog().into_iter().map(|e| e.name).collect();
    mask.indices_in(&catalog)?;
    if forest.feature_names() != mask.names() {
        return Err(Error::BindingMismatch(format!(
            "forest binds {} features, mask holds {}",
            forest.num_features(),
            mask.len()
        )));
    }
    Ok(())
}

/// Forecasts the horizon and builds the observation-forecast concatenation:
/// the first `s` context columns are dropped, the `s`-step point forecast
/// appended, so the result keeps the context width `l`. Returns the
/// concatenation, its timestamps and the point forecast.
pub fn forecast_concat(
    window: &Window,
    model: &ForecasterModel,
    forecast_config: &ForecastConfig,
) -> Result<(Array2<f64>, Vec<i64>, Array2<f64>)> {
    let (m, l) = window.context.dim();
    let s = model.config().window.forecast_len;
    let (point, _samples) = forecast(
        model,
        window.context.view(),
        window.covariates.view(),
        forecast_config,
    )?;
    let mut concat = Array2::zeros((m, l));
    concat
        .slice_mut(s![.., ..l - s])
        .assign(&window.context.slice(s![.., s..]));
    concat.slice_mut(s![.., l - s..]).assign(&point);
    let timestamps: Vec<i64> = (0..l).map(|j| window.timestamp_at(s + j)).collect();
    Ok((concat, timestamps, point))
}

/// Anticipates one window: forecast, concatenate, featurize, mask and
/// score. The window's future block is never read for the forecast; it is
/// only copied into the result for later evaluation.
pub fn anticipate(
    id: usize,
    window: &Window,
    model: &ForecasterModel,
    forecast_config: &ForecastConfig,
    feature_config: &FeatureConfig,
    mask: &FeatureMask,
    forest: &IsolationForest,
    threshold: f64,
) -> Result<AnticipationResult> {
    check_binding(feature_config, mask, forest)?;
    let l = window.context.ncols();
    if feature_config.window_len() != l {
        return Err(Error::BindingMismatch(format!(
            "feature config covers {} columns, context is {l}",
            feature_config.window_len()
        )));
    }

    let started = Instant::now();
    let (concat, timestamps, point) = forecast_concat(window, model, forecast_config)?;
    let forecast_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let features = extract_all(&WindowView::new(concat.view(), &timestamps), feature_config)?;
    let masked = mask.project(&features)?;
    let feature_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let (flag, score) = detect(forest, &masked, threshold)?;
    let detect_secs = started.elapsed().as_secs_f64();

    Ok(AnticipationResult {
        id,
        score,
        flag,
        label: window.label,
        forecast: point,
        truth: (window.future.ncols() > 0).then(|| window.future.clone()),
        forecast_secs,
        feature_secs,
        detect_secs,
    })
}

/// Seed for window `id` derived from a run seed; used so results do not
/// depend on evaluation order or worker count.
pub fn window_seed(base: u64, id: usize) -> u64 {
    base ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Anticipates a window set, optionally in parallel. Each window gets its
/// own rng stream derived from `forecast_config.seed`, so output is
/// identical for any worker count.
#[allow(clippy::too_many_arguments)]
pub fn anticipate_all(
    windows: &[Window],
    model: &ForecasterModel,
    forecast_config: &ForecastConfig,
    feature_config: &FeatureConfig,
    mask: &FeatureMask,
    forest: &IsolationForest,
    threshold: f64,
    jobs: usize,
) -> Result<Vec<AnticipationResult>> {
    let run = |(id, window): (usize, &Window)| {
        let cfg = ForecastConfig {
            seed: window_seed(forecast_config.seed, id),
            ..*forecast_config
        };
        anticipate(id, window, model, &cfg, feature_config, mask, forest, threshold)
    };
    if jobs <= 1 {
        windows.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| windows.par_iter().enumerate().map(run).collect())
    }
}

/// Run-level constants carried in the results-file header line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResultsMeta {
    pub num_metrics: usize,
    pub forecast_len: usize,
    pub interval: i64,
    pub seed: u64,
}

/// Writes one record per window. With `timings` off the duration columns
/// are zeroed, keeping the file byte-stable across reruns.
pub fn write_results(
    results: &[AnticipationResult],
    meta: &ResultsMeta,
    path: impl AsRef<Path>,
    timings: bool,
) -> Result<()> {
    let path = path.as_ref();
    let (m, s) = (meta.num_metrics, meta.forecast_len);
    let mut body = format!(
        "# auspex-results m={} s={} interval={} seed={}\n",
        m, s, meta.interval, meta.seed
    );
    let mut header = vec![
        "id".to_string(),
        "score".into(),
        "flag".into(),
        "label".into(),
        "forecast_secs".into(),
        "feature_secs".into(),
        "detect_secs".into(),
    ];
    for i in 0..m {
        for j in 0..s {
            header.push(format!("f_{i}_{j}"));
        }
    }
    for i in 0..m {
        for j in 0..s {
            header.push(format!("t_{i}_{j}"));
        }
    }
    body.push_str(&header.join(","));
    body.push('\n');

    for r in results {
        if r.forecast.dim() != (m, s) {
            return Err(Error::ShapeMismatch(format!(
                "window {}: forecast is {:?}, meta says ({m}, {s})",
                r.id,
                r.forecast.dim()
            )));
        }
        let mut record = vec![
            r.id.to_string(),
            r.score.to_string(),
            r.flag.to_string(),
            r.label.map(|l| l.to_string()).unwrap_or_default(),
        ];
        if timings {
            record.push(r.forecast_secs.to_string());
            record.push(r.feature_secs.to_string());
            record.push(r.detect_secs.to_string());
        } else {
            record.extend(["0".to_string(), "0".into(), "0".into()]);
        }
        for v in r.forecast.iter() {
            record.push(v.to_string());
        }
        match &r.truth {
            Some(truth) => {
                if truth.dim() != (m, s) {
                    return Err(Error::ShapeMismatch(format!(
                        "window {}: truth is {:?}, meta says ({m}, {s})",
                        r.id,
                        truth.dim()
                    )));
                }
                for v in truth.iter() {
                    record.push(v.to_string());
                }
            }
            None => record.extend(std::iter::repeat(String::new()).take(m * s)),
        }
        body.push_str(&record.join(","));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<(Vec<AnticipationResult>, ResultsMeta)> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines();
    let meta_line = lines
        .next()
        .ok_or_else(|| Error::InvalidData(format!("{}: empty results file", path.display())))?;
    let meta = parse_meta(meta_line)?;
    let (m, s) = (meta.num_metrics, meta.forecast_len);

    let expected_cols = 7 + 2 * m * s;
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidData("results file lacks a header row".into()))?;
    if header.split(',').count() != expected_cols {
        return Err(Error::InvalidData(format!(
            "header has {} columns, expected {expected_cols}",
            header.split(',').count()
        )));
    }

    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != expected_cols {
            return Err(Error::InvalidData(format!(
                "row {}: {} columns, expected {expected_cols}",
                lineno + 3,
                cells.len()
            )));
        }
        let parse_f = |cell: &str, what: &str| -> Result<f64> {
            cell.parse()
                .map_err(|_| Error::InvalidData(format!("row {}: bad {what} {cell:?}", lineno + 3)))
        };
        let id: usize = cells[0]
            .parse()
            .map_err(|_| Error::InvalidData(format!("row {}: bad id {:?}", lineno + 3, cells[0])))?;
        let score = parse_f(cells[1], "score")?;
        let flag = match cells[2] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::InvalidData(format!("bad flag {other:?}"))),
        };
        let label = match cells[3] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(Error::InvalidData(format!("bad label {other:?}"))),
        };
        let forecast_secs = parse_f(cells[4], "duration")?;
        let feature_secs = parse_f(cells[5], "duration")?;
        let detect_secs = parse_f(cells[6], "duration")?;

        let mut forecast = Array2::zeros((m, s));
        for i in 0..m {
            for j in 0..s {
                forecast[[i, j]] = parse_f(cells[7 + i * s + j], "forecast value")?;
            }
        }
        let truth_cells = &cells[7 + m * s..];
        let truth = if truth_cells.iter().all(|c| c.is_empty()) {
            None
        } else {
            let mut t = Array2::zeros((m, s));
            for i in 0..m {
                for j in 0..s {
                    t[[i, j]] = parse_f(truth_cells[i * s + j], "truth value")?;
                }
            }
            Some(t)
        };
        out.push(AnticipationResult {
            id,
            score,
            flag,
            label,
            forecast,
            truth,
            forecast_secs,
            feature_secs,
            detect_secs,
        });
    }
    Ok((out, meta))
}

fn parse_meta(line: &str) -> Result<ResultsMeta> {
    let rest = line
        .strip_prefix("# auspex-results ")
        .ok_or_else(|| Error::InvalidData("missing results meta line".into()))?;
    let mut num_metrics = None;
    let mut forecast_len = None;
    let mut interval = None;
    let mut seed = None;
    for part in rest.split_whitespace() {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidData(format!("bad meta entry {part:?}")))?;
        let bad = || Error::InvalidData(format!("bad meta value {value:?} for {key}"));
        match key {
            "m" => num_metrics = Some(value.parse().map_err(|_| bad())?),
            "s" => forecast_len = Some(value.parse().map_err(|_| bad())?),
            "interval" => interval = Some(value.parse().map_err(|_| bad())?),
            "seed" => seed = Some(value.parse().map_err(|_| bad())?),
            _ => {}
        }
    }
    match (num_metrics, forecast_len, interval, seed) {
        (Some(num_metrics), Some(forecast_len), Some(interval), Some(seed)) => Ok(ResultsMeta {
            num_metrics,
            forecast_len,
            interval,
            seed,
        }),
        _ => Err(Error::InvalidData("incomplete results meta line".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::train::tests::toy_setup;
    use crate::diffusion::{train, TrainConfig};
    use crate::features::{select_features, SelectMethod};
    use crate::forest;
    use ndarray::Axis;

    struct Fixture {
        model: ForecasterModel,
        windows: Vec<Window>,
        feature_config: FeatureConfig,
        mask: FeatureMask,
        forest: IsolationForest,
    }

    fn fixture() -> Fixture {
        let (mut model, train_w, val_w) = toy_setup(77);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 1,
            batches_per_epoch: 2,
            patience: 3,
            seed: 7,
        };
        train(&mut model, &train_w, &val_w, &cfg).unwrap();

        let l = model.config().window.context_len;
        let names = vec!["m0".to_string()];
        let feature_config =
            FeatureConfig::new(&names, &std::collections::BTreeMap::new(), l).unwrap();

        // Features over the training contexts, redundancy-masked.
        let mut rows = Vec::new();
        for w in &train_w {
            let ts: Vec<i64> = (0..l).map(|j| w.timestamp_at(j)).collect();
            let fv = extract_all(&WindowView::new(w.context.view(), &ts), &feature_config).unwrap();
            rows.push(fv.values().to_vec());
        }
        let catalog: Vec<String> = feature_config.catalog().into_iter().map(|e| e.name).collect();
        let matrix = Array2::from_shape_fn((rows.len(), catalog.len()), |(i, j)| rows[i][j]);
        let mask =
            select_features(matrix.view(), &catalog, None, &SelectMethod::redundancy()).unwrap();
        let keep = mask.indices_in(&catalog).unwrap();
        let masked = matrix.select(Axis(1), &keep);
        let forest =
            forest::fit(masked.view(), mask.names(), 32, 10, 0.5, 3).unwrap();

        Fixture {
            model,
            windows: val_w,
            feature_config,
            mask,
            forest,
        }
    }

    #[test]
    fn concatenation_has_context_width() {
        let f = fixture();
        let w = &f.windows[0];
        let cfg = ForecastConfig {
            num_samples: 2,
            seed: 1,
            ..ForecastConfig::default()
        };
        let r = anticipate(0, w, &f.model, &cfg, &f.feature_config, &f.mask, &f.forest, 0.5)
            .unwrap();
        assert_eq!(r.forecast.dim(), (1, 2));
        assert!(r.score > 0.0 && r.score < 1.0);
        assert_eq!(r.flag, u8::from(r.score >= 0.5));
        assert!(r.truth.is_some());
        assert!(r.forecast_secs >= 0.0 && r.feature_secs >= 0.0 && r.detect_secs >= 0.0);
    }

    #[test]
    fn future_block_never_leaks_into_the_forecast() {
        let f = fixture();
        let mut w = f.windows[1].clone();
        let cfg = ForecastConfig {
            num_samples: 2,
            seed: 9,
            ..ForecastConfig::default()
        };
        let a = anticipate(1, &w, &f.model, &cfg, &f.feature_config, &f.mask, &f.forest, 0.5)
            .unwrap();
        w.future.fill(0.0);
        let b = anticipate(1, &w, &f.model, &cfg, &f.feature_config, &f.mask, &f.forest, 0.5)
            .unwrap();
        assert_eq!(a.forecast, b.forecast);
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn binding_mismatch_is_rejected() {
        let f = fixture();
        let w = &f.windows[0];
        let cfg = ForecastConfig::default();
        let bogus = FeatureMask::new(vec!["point.m0.min".into(), "no.such.feature".into()]).unwrap();
        let err = anticipate(0, w, &f.model, &cfg, &f.feature_config, &bogus, &f.forest, 0.5)
            .unwrap_err();
        assert!(matches!(err, Error::BindingMismatch(_)));
    }

    #[test]
    fn parallel_and_serial_runs_agree() {
        let f = fixture();
        let windows = &f.windows[..6];
        let cfg = ForecastConfig {
            num_samples: 2,
            seed: 5,
            ..ForecastConfig::default()
        };
        let serial = anticipate_all(
            windows,
            &f.model,
            &cfg,
            &f.feature_config,
            &f.mask,
            &f.forest,
            0.5,
            1,
        )
        .unwrap();
        let parallel = anticipate_all(
            windows,
            &f.model,
            &cfg,
            &f.feature_config,
            &f.mask,
            &f.forest,
            0.5,
            4,
        )
        .unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.score, b.score);
            assert_eq!(a.forecast, b.forecast);
        }
    }

    #[test]
    fn results_file_roundtrips() {
        let f = fixture();
        let cfg = ForecastConfig {
            num_samples: 2,
            seed: 2,
            ..ForecastConfig::default()
        };
        let results = anticipate_all(
            &f.windows[..4],
            &f.model,
            &cfg,
            &f.feature_config,
            &f.mask,
            &f.forest,
            0.5,
            1,
        )
        .unwrap();
        let meta = ResultsMeta {
            num_metrics: 1,
            forecast_len: 2,
            interval: 60,
            seed: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results(&results, &meta, &path, false).unwrap();
        let (loaded, loaded_meta) = read_results(&path).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.len(), results.len());
        for (a, b) in results.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.score, b.score);
            assert_eq!(a.flag, b.flag);
            assert_eq!(a.label, b.label);
            assert_eq!(a.forecast, b.forecast);
            assert_eq!(a.truth, b.truth);
            assert_eq!(b.forecast_secs, 0.0); // timings off
        }

        // Empty result sets still produce a parseable file.
        let empty_path = dir.path().join("empty.csv");
        write_results(&[], &meta, &empty_path, false).unwrap();
        let (empty, _) = read_results(&empty_path).unwrap();
        assert!(empty.is_empty());
    }
}
