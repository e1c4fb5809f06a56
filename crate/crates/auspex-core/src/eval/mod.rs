//! Evaluation: segment-level adjustment, classification and forecasting
//! metrics, the persistence baseline and per-run reports with phase
//! timings.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod anticipate;

pub use anticipate::{
    anticipate, anticipate_all, forecast_concat, read_results, window_seed, write_results,
    AnticipationResult, ResultsMeta,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

fn check_binary(seq: &[u8], what: &str) -> Result<()> {
    if seq.iter().any(|&v| v > 1) {
        return Err(Error::InvalidData(format!("{what} must be 0/1")));
    }
    Ok(())
}

/// Precision, recall and F1 (as `2 TP / (2 TP + FP + FN)`) with 0/0
/// conventions mapping to 0, plus the raw confusion counts.
pub fn classification_metrics(preds: &[u8], labels: &[u8]) -> Result<(f64, f64, f64, Confusion)> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    check_binary(preds, "predictions")?;
    check_binary(labels, "labels")?;
    let mut c = Confusion {
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        true_neg: 0,
    };
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.true_pos += 1,
            (1, 0) => c.false_pos += 1,
            (0, 1) => c.false_neg += 1,
            _ => c.true_neg += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos);
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg);
    let f1 = ratio(2 * c.true_pos, 2 * c.true_pos + c.false_pos + c.false_neg);
    Ok((precision, recall, f1, c))
}

/// Segment-level adjustment: within every maximal run of 1-labels, one hit
/// anywhere marks the whole run as detected. Predictions outside labeled
/// runs pass through unchanged.
pub fn point_adjust(preds: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    check_binary(preds, "predictions")?;
    check_binary(labels, "labels")?;
    let mut out = preds.to_vec();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 1 {
            let start = i;
            while i < labels.len() && labels[i] == 1 {
                i += 1;
            }
            if preds[start..i].iter().any(|&p| p == 1) {
                out[start..i].fill(1);
            }
        } else {
            i += 1;
        }
    }
    Ok(out)
}

/// MSE, MAE and sMAPE pooled over every entry. sMAPE divides by the mean
/// of the absolute values; 0/0 entries contribute 0.
pub fn forecast_metrics(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<(f64, f64, f64)> {
    if pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "forecast is {:?}, truth is {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let n = pred.len() as f64;
    let mut mse = 0.0;
    let mut mae = 0.0;
    let mut smape = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        let err = p - t;
        mse += err * err;
        mae += err.abs();
        let denom = (p.abs() + t.abs()) / 2.0;
        if denom > 0.0 {
            smape += err.abs() / denom;
        }
    }
    Ok((mse / n, mae / n, smape / n))
}

/// Naive baseline: repeat the last observed column `s` times.
pub fn persistence_forecast(context: ArrayView2<'_, f64>, s: usize) -> Array2<f64> {
    let m = context.nrows();
    let last = context.ncols() - 1;
    Array2::from_shape_fn((m, s), |(i, _)| context[[i, last]])
}

/// One run's evaluation summary. Field order is the machine-readable
/// record order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub windows: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
    pub mse: f64,
    pub mae: f64,
    pub smape: f64,
    /// How far ahead of real time a flag lands: `s * sampling interval`.
    pub advance_horizon_secs: i64,
    pub mean_forecast_secs: f64,
    pub mean_feature_secs: f64,
    pub mean_detect_secs: f64,
    pub total_inference_secs: f64,
}

impl EvalReport {
    /// Human-readable flat key-value form.
    pub fn to_text(&self) -> String {
        format!(
            "windows = {}\n\
             precision = {}\n\
             recall = {}\n\
             f1 = {}\n\
             true_pos = {}\n\
             false_pos = {}\n\
             false_neg = {}\n\
             true_neg = {}\n\
             mse = {}\n\
             mae = {}\n\
             smape = {}\n\
             advance_horizon_secs = {}\n\
             mean_forecast_secs = {}\n\
             mean_feature_secs = {}\n\
             mean_detect_secs = {}\n\
             total_inference_secs = {}\n",
            self.windows,
            self.precision,
            self.recall,
            self.f1,
            self.true_pos,
            self.false_pos,
            self.false_neg,
            self.true_neg,
            self.mse,
            self.mae,
            self.smape,
            self.advance_horizon_secs,
            self.mean_forecast_secs,
            self.mean_feature_secs,
            self.mean_detect_secs,
            self.total_inference_secs,
        )
    }

    /// One machine-readable record with fixed field order.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Builds the report for a labeled run: window flags are point-adjusted at
/// window granularity, classification metrics computed on the adjusted
/// sequence, forecast metrics pooled over windows carrying ground truth,
/// and per-phase durations averaged.
pub fn evaluate_run(results: &[AnticipationResult], sampling_interval: i64) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::InvalidData("no results to evaluate".into()));
    }
    let mut ordered: Vec<&AnticipationResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.id);

    let mut preds = Vec::with_capacity(ordered.len());
    let mut labels = Vec::with_capacity(ordered.len());
    for r in &ordered {
        let label = r
            .label
            .ok_or_else(|| Error::InvalidData(format!("window {} carries no label", r.id)))?;
        preds.push(r.flag);
        labels.push(label);
    }
    let adjusted = point_adjust(&preds, &labels)?;
    let (precision, recall, f1, confusion) = classification_metrics(&adjusted, &labels)?;

    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut sm = 0.0;
    let mut entries = 0usize;
    for r in &ordered {
        if let Some(truth) = &r.truth {
            let (mse_w, mae_w, smape_w) = forecast_metrics(r.forecast.view(), truth.view())?;
            let n = truth.len();
            sq += mse_w * n as f64;
            abs += mae_w * n as f64;
            sm += smape_w * n as f64;
            entries += n;
        }
    }
    let (mse, mae, smape) = if entries == 0 {
        (0.0, 0.0, 0.0)
    } else {
        (sq / entries as f64, abs / entries as f64, sm / entries as f64)
    };

    let n = ordered.len() as f64;
    let mean_forecast_secs = ordered.iter().map(|r| r.forecast_secs).sum::<f64>() / n;
    let mean_feature_secs = ordered.iter().map(|r| r.feature_secs).sum::<f64>() / n;
    let mean_detect_secs = ordered.iter().map(|r| r.detect_secs).sum::<f64>() / n;
    let s = ordered[0].forecast.ncols();

    Ok(EvalReport {
        windows: ordered.len(),
        precision,
        recall,
        f1,
        true_pos: confusion.true_pos,
        false_pos: confusion.false_pos,
        false_neg: confusion.false_neg,
        true_neg: confusion.true_neg,
        mse,
        mae,
        smape,
        advance_horizon_secs: s as i64 * sampling_interval,
        mean_forecast_secs,
        mean_feature_secs,
        mean_detect_secs,
        total_inference_secs: mean_forecast_secs + mean_feature_secs + mean_detect_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let (p, r, f1, c) = classification_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
        assert_eq!(c.true_pos, 2);
        assert_eq!(c.true_neg, 1);
    }

    #[test]
    fn degenerate_runs_report_zero_by_convention() {
        let (p, r, f1, _) = classification_metrics(&[0, 0], &[0, 0]).unwrap();
        assert_eq!((p, r, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn f1_matches_the_harmonic_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.gen_range(2..40);
            let preds: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
            let (p, r, f1, _) = classification_metrics(&preds, &labels).unwrap();
            if p + r > 0.0 {
                assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
            } else {
                assert_eq!(f1, 0.0);
            }
        }
    }

    #[test]
    fn point_adjust_fills_hit_segments() {
        let adjusted = point_adjust(&[0, 0, 1, 0, 0], &[0, 1, 1, 1, 0]).unwrap();
        assert_eq!(adjusted, vec![0, 1, 1, 1, 0]);
    }

    #[test]
    fn point_adjust_keeps_misses_and_outside_predictions() {
        // All-zero predictions stay zero.
        assert_eq!(
            point_adjust(&[0, 0, 0, 0], &[0, 1, 1, 0]).unwrap(),
            vec![0, 0, 0, 0]
        );
        // Two labeled runs, hit in the first only.
        let adjusted = point_adjust(&[1, 0, 0, 0, 0, 0], &[1, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(adjusted, vec![1, 1, 0, 0, 0, 0]);
        // False positives outside runs are untouched.
        let adjusted = point_adjust(&[1, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!(adjusted, vec![1, 0, 0]);
    }

    #[test]
    fn point_adjust_never_lowers_f1() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let n = rng.gen_range(1..60);
            let preds: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.25))).collect();
            let adjusted = point_adjust(&preds, &labels).unwrap();
            let (.., f1_raw, _) = classification_metrics(&preds, &labels).unwrap();
            let (.., f1_adj, _) = classification_metrics(&adjusted, &labels).unwrap();
            assert!(f1_adj >= f1_raw - 1e-12, "{preds:?} {labels:?}");
        }
    }

    #[test]
    fn forecast_metrics_match_hand_values() {
        let pred = Array2::from_shape_vec((1, 1), vec![3.0]).unwrap();
        let truth = Array2::from_shape_vec((1, 1), vec![1.0]).unwrap();
        let (mse, mae, smape) = forecast_metrics(pred.view(), truth.view()).unwrap();
        assert_eq!((mse, mae, smape), (4.0, 2.0, 1.0));

        let zero = Array2::zeros((2, 3));
        let (mse, mae, smape) = forecast_metrics(zero.view(), zero.view()).unwrap();
        assert_eq!((mse, mae, smape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn smape_stays_within_its_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let pred = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-10.0..10.0));
            let truth = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-10.0..10.0));
            let (_, _, smape) = forecast_metrics(pred.view(), truth.view()).unwrap();
            assert!((0.0..=2.0).contains(&smape));
        }
    }

    #[test]
    fn persistence_repeats_the_last_column() {
        let context = Array2::from_shape_vec((2, 3), vec![1.0, 9.0, 2.0, 4.0, 8.0, 5.0]).unwrap();
        let out = persistence_forecast(context.view(), 3);
        for j in 0..3 {
            assert_eq!(out[[0, j]], 2.0);
            assert_eq!(out[[1, j]], 5.0);
        }
        let single = persistence_forecast(context.view(), 1);
        assert_eq!(single.dim(), (2, 1));
        // Exact on constant series.
        let constant = Array2::from_elem((1, 4), 7.0);
        let fc = persistence_forecast(constant.view(), 2);
        let (mse, ..) = forecast_metrics(fc.view(), Array2::from_elem((1, 2), 7.0).view()).unwrap();
        assert_eq!(mse, 0.0);
    }

    fn result(id: usize, flag: u8, label: u8, fore: f64, truth: f64) -> AnticipationResult {
        AnticipationResult {
            id,
            score: flag as f64,
            flag,
            label: Some(label),
            forecast: Array2::from_elem((1, 3), fore),
            truth: Some(Array2::from_elem((1, 3), truth)),
            forecast_secs: 0.2,
            feature_secs: 0.05,
            detect_secs: 0.01,
        }
    }

    #[test]
    fn advance_horizon_is_steps_times_interval() {
        let results: Vec<AnticipationResult> = (0..4).map(|i| result(i, 0, 0, 1.0, 1.0)).collect();
        let report = evaluate_run(&results, 3600).unwrap();
        assert_eq!(report.advance_horizon_secs, 3 * 3600);
        let report = evaluate_run(&results, 60).unwrap();
        assert_eq!(report.advance_horizon_secs, 180);
    }

    #[test]
    fn durations_average_and_total() {
        let results: Vec<AnticipationResult> = (0..5).map(|i| result(i, 1, 1, 2.0, 1.0)).collect();
        let report = evaluate_run(&results, 60).unwrap();
        assert!((report.mean_forecast_secs - 0.2).abs() < 1e-12);
        assert!((report.mean_feature_secs - 0.05).abs() < 1e-12);
        assert!((report.mean_detect_secs - 0.01).abs() < 1e-12);
        assert!((report.total_inference_secs - 0.26).abs() < 1e-12);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.mse, 1.0);
        assert_eq!(report.mae, 1.0);
    }

    #[test]
    fn unlabeled_results_are_rejected() {
        let mut r = result(0, 1, 1, 1.0, 1.0);
        r.label = None;
        assert!(evaluate_run(&[r], 60).is_err());
    }

    #[test]
    fn report_serializes_both_ways() {
        let results: Vec<AnticipationResult> = (0..2).map(|i| result(i, 1, 1, 1.0, 1.0)).collect();
        let report = evaluate_run(&results, 60).unwrap();
        let text = report.to_text();
        assert!(text.contains("f1 = 1"));
        assert!(text.contains("advance_horizon_secs = 180"));
        let line = report.to_json_line();
        let parsed: EvalReport = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed, report);
    }
}
