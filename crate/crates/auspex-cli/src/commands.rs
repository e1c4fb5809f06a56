//! The five pipeline commands: synth, train, fit-detector, anticipate and
//! evaluate. Each fails fast with a one-line diagnostic and writes
//! byte-stable outputs for a fixed seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Axis};

use auspex_core::diffusion::{
    load_model, save_model, train, ForecastConfig, ForecasterModel, ModelConfig,
};
use auspex_core::eval::{
    anticipate_all, evaluate_run, forecast_concat, read_results, window_seed, write_results,
    ResultsMeta,
};
use auspex_core::features::{
    extract_all, load_mask, save_mask, select_features, write_catalog, FeatureConfig, FeatureMask,
    SelectMethod, WindowView,
};
use auspex_core::forest::{incremental_fit, load_forest, save_forest, IsolationForest};
use auspex_core::series::{
    fit_scaler, load_frame, make_windows, split_chronological, synth_generate, write_frame,
    CovariateConfig, MetricFrame, Window,
};

use crate::config::{RunConfig, SelectKind};

pub fn cmd_synth(run: &RunConfig, out: &Path) -> Result<()> {
    let frame = synth_generate(&run.synth, run.seed)?;
    write_frame(&frame, out, run.delimiter)?;
    println!(
        "wrote {} ({} metrics x {} points, {} labeled)",
        out.display(),
        frame.num_metrics(),
        frame.len(),
        frame.labels().map_or(0, |l| l.iter().filter(|&&v| v == 1).count()),
    );
    Ok(())
}

fn covariates(run: &RunConfig) -> Result<CovariateConfig> {
    Ok(CovariateConfig::from_dates(run.special_dates.iter())?)
}

fn feature_config(run: &RunConfig, frame: &MetricFrame) -> Result<FeatureConfig> {
    let mut config = FeatureConfig::new(
        frame.names(),
        frame.aspects(),
        run.window.context_len,
    )?;
    if let Some(v) = run.features.acf_lags {
        config.acf_lags = v;
    }
    if let Some(v) = run.features.fourier_k {
        config.fourier_k = v;
    }
    if let Some(v) = &run.features.c3_lags {
        config.c3_lags = v.clone();
    }
    if let Some(v) = run.features.tlcc_max_lag {
        config.tlcc_max_lag = v;
    }
    if let Some(v) = run.features.mi_bins {
        config.mi_bins = v;
    }
    if let Some(v) = run.features.rolling_sub_len {
        config.rolling_sub_len = v;
    }
    if let Some(v) = run.features.z_threshold {
        config.z_threshold = v;
    }
    config.special_days = covariates(run)?.special_days;
    config.validate()?;
    Ok(config)
}

fn model_config(run: &RunConfig, num_metrics: usize) -> ModelConfig {
    let d = &run.diffusion;
    ModelConfig {
        num_metrics,
        window: run.window,
        cov_dim: auspex_core::series::COVARIATE_DIM,
        hidden: d.hidden,
        gru_layers: d.gru_layers,
        res_layers: d.res_layers,
        res_channels: d.res_channels,
        kernel_size: d.kernel_size,
        dilation_cycle: d.dilation_cycle,
        step_embed_dim: d.step_embed_dim,
        step_mlp_dim: d.step_mlp_dim,
        t_steps: d.t_steps,
        beta_start: d.beta_start,
        beta_end: d.beta_end,
        reverse_noise: d.reverse_noise,
    }
}

fn load_split(
    run: &RunConfig,
    data: &Path,
) -> Result<(MetricFrame, MetricFrame, MetricFrame, MetricFrame)> {
    let frame = load_frame(data, &run.schema())
        .with_context(|| format!("loading {}", data.display()))?;
    let (train_f, val_f, test_f) = split_chronological(&frame, &run.split)?;
    Ok((frame, train_f, val_f, test_f))
}

/// Windows for a split; an empty list when the split is shorter than one
/// full window.
fn windows_of(run: &RunConfig, frame: &MetricFrame) -> Result<Vec<Window>> {
    if frame.len() < run.window.context_len + run.window.forecast_len {
        return Ok(Vec::new());
    }
    Ok(make_windows(frame, &run.window, &covariates(run)?)?)
}

/// Feature rows over window contexts (the observed `l`-point blocks).
fn context_rows(windows: &[Window], config: &FeatureConfig) -> Result<Array2<f64>> {
    let mut rows = Vec::with_capacity(windows.len());
    for w in windows {
        let l = w.context_len();
        let ts: Vec<i64> = (0..l).map(|j| w.timestamp_at(j)).collect();
        let fv = extract_all(&WindowView::new(w.context.view(), &ts), config)?;
        rows.push(fv.values().to_vec());
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j]))
}

pub fn cmd_train(run: &RunConfig, data: &Path, out: &Path, losses: Option<&Path>) -> Result<()> {
    let (_, train_f, val_f, _) = load_split(run, data)?;
    let train_w = windows_of(run, &train_f)?;
    let val_w = windows_of(run, &val_f)?;
    if train_w.is_empty() {
        bail!(
            "training split ({} points) is shorter than one window ({})",
            train_f.len(),
            run.window.context_len + run.window.forecast_len
        );
    }

    let scaler = fit_scaler(&train_f);
    let mut model = ForecasterModel::init(model_config(run, train_f.num_metrics()), scaler, run.seed)?;
    let trace = train(&mut model, &train_w, &val_w, &run.train)?;
    save_model(&model, out)?;

    let losses_path = losses
        .map(Path::to_path_buf)
        .unwrap_or_else(|| derive_path(out, "losses.csv"));
    let mut body = String::from("epoch,train_loss,val_loss\n");
    for e in &trace.epochs {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        body.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, val));
    }
    std::fs::write(&losses_path, body)
        .with_context(|| format!("writing {}", losses_path.display()))?;

    let last = trace.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs (final train loss {:.6}); wrote {} and {}",
        trace.epochs.len(),
        last.train_loss,
        out.display(),
        losses_path.display()
    );
    Ok(())
}

fn derive_path(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    base.with_file_name(name)
}

fn select_mask(
    run: &RunConfig,
    config: &FeatureConfig,
    train_rows: &Array2<f64>,
    val_windows: &[Window],
) -> Result<FeatureMask> {
    let catalog: Vec<String> = config.catalog().into_iter().map(|e| e.name).collect();
    match run.features.select {
        SelectKind::None => Ok(FeatureMask::full(&catalog)?),
        SelectKind::Redundancy => Ok(select_features(
            train_rows.view(),
            &catalog,
            None,
            &SelectMethod::Redundancy {
                threshold: run.features.redundancy_threshold,
            },
        )?),
        SelectKind::Importance => {
            let labels: Option<Vec<u8>> = val_windows.iter().map(|w| w.label).collect();
            let labels = labels.context(
                "importance selection needs labeled validation windows; the data has no label column",
            )?;
            if val_windows.is_empty() {
                bail!("importance selection needs a validation split with at least one window");
            }
            let rows = context_rows(val_windows, config)?;
            Ok(select_features(
                rows.view(),
                &catalog,
                Some(&labels),
                &SelectMethod::Importance {
                    keep_fraction: run.features.keep_fraction,
                },
            )?)
        }
    }
}

pub fn cmd_fit_detector(
    run: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    mask_out: Option<&Path>,
    catalog_out: Option<&Path>,
    jobs: usize,
) -> Result<()> {
    let (_, train_f, val_f, _) = load_split(run, data)?;
    let model = load_model(checkpoint)?;
    if !model.is_trained() {
        bail!("{} holds an untrained model", checkpoint.display());
    }
    if model.config().window != run.window {
        bail!(
            "checkpoint was trained with window {:?}, config says {:?}",
            model.config().window,
            run.window
        );
    }
    let train_w = windows_of(run, &train_f)?;
    if train_w.is_empty() {
        bail!("training split has no full windows");
    }
    let val_w = windows_of(run, &val_f)?;
    let config = feature_config(run, &train_f)?;

    // Phase 1: forest over observed training windows.
    let train_rows = context_rows(&train_w, &config)?;
    let mask = select_mask(run, &config, &train_rows, &val_w)?;
    let catalog: Vec<String> = config.catalog().into_iter().map(|e| e.name).collect();
    let keep = mask.indices_in(&catalog)?;
    let masked_rows = train_rows.select(Axis(1), &keep);
    let forest = auspex_core::forest::fit(
        masked_rows.view(),
        mask.names(),
        run.forest.psi,
        run.forest.gamma,
        run.forest.iso_threshold,
        run.seed,
    )?;

    // Phase 2: forecast every training window, concatenate and refit.
    let fcfg = ForecastConfig {
        num_samples: run.forecast.num_samples,
        aggregation: run.forecast.aggregation,
        seed: run.seed,
    };
    let concat_rows = concat_feature_rows(&train_w, &model, &fcfg, &config, &mask, jobs)?;
    let forest = incremental_fit(
        &forest,
        concat_rows.view(),
        run.forest.psi,
        run.forest.gamma,
        run.seed,
    )?;

    save_forest(&forest, out)?;
    let mask_path = mask_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| derive_path(out, "mask.txt"));
    save_mask(&mask, &mask_path)?;
    if let Some(catalog_path) = catalog_out {
        write_catalog(&config.catalog(), catalog_path, run.delimiter)?;
    }
    println!(
        "fitted {} trees over {} features; wrote {} and {}",
        forest.num_trees(),
        mask.len(),
        out.display(),
        mask_path.display()
    );
    Ok(())
}

/// Masked feature rows over forecast concatenations, optionally in
/// parallel; per-window seeds keep output independent of worker count.
fn concat_feature_rows(
    windows: &[Window],
    model: &ForecasterModel,
    fcfg: &ForecastConfig,
    config: &FeatureConfig,
    mask: &FeatureMask,
    jobs: usize,
) -> Result<Array2<f64>> {
    let one = |(id, w): (usize, &Window)| -> Result<Vec<f64>> {
        let cfg = ForecastConfig {
            seed: window_seed(fcfg.seed, id),
            ..*fcfg
        };
        let (concat, timestamps, _) = forecast_concat(w, model, &cfg)?;
        let fv = extract_all(&WindowView::new(concat.view(), &timestamps), config)?;
        Ok(mask.project(&fv)?)
    };
    let rows: Vec<Vec<f64>> = if jobs <= 1 {
        windows.iter().enumerate().map(one).collect::<Result<_>>()?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        pool.install(|| windows.par_iter().enumerate().map(one).collect::<Result<_>>())?
    };
    let cols = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j]))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_anticipate(
    run: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    forest_path: &Path,
    mask_path: Option<&Path>,
    out: &Path,
    threshold: Option<f64>,
    timings: bool,
    jobs: usize,
) -> Result<()> {
    let (frame, _, _, test_f) = load_split(run, data)?;
    let model = load_model(checkpoint)?;
    let forest: IsolationForest = load_forest(forest_path)?;
    let mask = match mask_path {
        Some(p) => load_mask(p)?,
        None => FeatureMask::new(forest.feature_names().to_vec())?,
    };
    let config = feature_config(run, &frame)?;
    let threshold = threshold.unwrap_or(run.forest.detect_threshold);

    let test_w = windows_of(run, &test_f)?;
    let fcfg = ForecastConfig {
        num_samples: run.forecast.num_samples,
        aggregation: run.forecast.aggregation,
        seed: run.seed,
    };
    let results = anticipate_all(
        &test_w, &model, &fcfg, &config, &mask, &forest, threshold, jobs,
    )?;

    let meta = ResultsMeta {
        num_metrics: frame.num_metrics(),
        forecast_len: run.window.forecast_len,
        interval: frame.interval(),
        seed: run.seed,
    };
    write_results(&results, &meta, out, timings)?;
    println!(
        "anticipated {} windows ({} flagged); wrote {}",
        results.len(),
        results.iter().filter(|r| r.flag == 1).count(),
        out.display()
    );
    Ok(())
}

pub fn cmd_evaluate(results_path: &Path, labels_path: Option<&Path>, out: &Path) -> Result<()> {
    let (mut results, meta) = read_results(results_path)?;
    if let Some(labels_path) = labels_path {
        let overrides = read_label_file(labels_path)?;
        for r in &mut results {
            match overrides.get(&r.id) {
                Some(&label) => r.label = Some(label),
                None => bail!(
                    "window id {} from {} missing in {}",
                    r.id,
                    results_path.display(),
                    labels_path.display()
                ),
            }
        }
    }
    let report = evaluate_run(&results, meta.interval)?;
    std::fs::write(out, report.to_text()).with_context(|| format!("writing {}", out.display()))?;
    let jsonl_path = derive_path(out, "jsonl");
    std::fs::write(&jsonl_path, format!("{}\n", report.to_json_line()))
        .with_context(|| format!("writing {}", jsonl_path.display()))?;
    println!(
        "f1 {:.4} precision {:.4} recall {:.4} over {} windows; wrote {} and {}",
        report.f1,
        report.precision,
        report.recall,
        report.windows,
        out.display(),
        jsonl_path.display()
    );
    Ok(())
}

/// `id,label` rows, header optional.
fn read_label_file(path: &Path) -> Result<BTreeMap<usize, u8>> {
    let body =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("id")) {
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .with_context(|| format!("{}:{}: expected id,label", path.display(), lineno + 1))?;
        let id: usize = id
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad id", path.display(), lineno + 1))?;
        let label: u8 = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => bail!("{}:{}: label {other:?} is not 0/1", path.display(), lineno + 1),
        };
        out.insert(id, label);
    }
    Ok(out)
}
