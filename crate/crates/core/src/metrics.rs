//! Offline metrics and paired regime comparison.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::binary_ce;
use crate::error::{Error, Result};
use crate::nn::{clamp_prob, CtrModel};
use crate::world::{Impression, WorldTruth};

/// Mean binary cross entropy of clamped predictions.
pub fn log_loss_of(predictions: &[f64], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyWindow("log-loss window".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        total += binary_ce(if y { 1.0 } else { 0.0 }, clamp_prob(p))?;
    }
    Ok(total / predictions.len() as f64)
}

/// Rank-based AUC with average ranks for ties. `None` unless both classes
/// are present.
pub fn auc_of(predictions: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || predictions.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && predictions[order[j]] == predictions[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let rank = (i + 1 + j) as f64 / 2.0;
        pos_rank_sum += rank * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Clamped predictions for a window; values outside the model vocabulary
/// read as zero embeddings.
pub fn predictions(model: &CtrModel, window: &[Impression]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(window.len());
    for chunk in window.chunks(4096) {
        let idx = model.encode(chunk.iter().map(|i| &i.features[..]), true)?;
        out.extend(model.predict_batch(&idx)?);
    }
    Ok(out)
}

fn labels(window: &[Impression]) -> Vec<bool> {
    window.iter().map(|i| i.click).collect()
}

pub fn log_loss(model: &CtrModel, window: &[Impression]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::EmptyWindow("log-loss window".into()));
    }
    log_loss_of(&predictions(model, window)?, &labels(window))
}

pub fn auc(model: &CtrModel, window: &[Impression]) -> Result<Option<f64>> {
    Ok(auc_of(&predictions(model, window)?, &labels(window)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub n: usize,
    pub log_loss: Option<f64>,
    pub mean_predicted: Option<f64>,
    pub empirical_ctr: Option<f64>,
    /// Mean `|predicted - true|` click probability against the world truth.
    pub ctr_error: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgeBuckets {
    pub new: BucketMetrics,
    pub old: BucketMetrics,
}

/// An item is "new" at `reference_time` if it was born less than
/// `age_threshold` seconds before it (or later). `u64::MAX` makes every item new.
pub fn is_new(birth_time: u64, reference_time: u64, age_threshold: u64) -> bool {
    birth_time.saturating_add(age_threshold) > reference_time
}

#[derive(Default)]
struct Acc {
    n: usize,
    ce: f64,
    pred: f64,
    clicks: usize,
    err: f64,
}

impl Acc {
    fn finish(self) -> BucketMetrics {
        if self.n == 0 {
            return BucketMetrics::default();
        }
        let n = self.n as f64;
        BucketMetrics {
            n: self.n,
            log_loss: Some(self.ce / n),
            mean_predicted: Some(self.pred / n),
            empirical_ctr: Some(self.clicks as f64 / n),
            ctr_error: Some(self.err / n),
        }
    }
}

fn buckets_from(
    preds: &[f64],
    window: &[Impression],
    truth: &WorldTruth,
    reference_time: u64,
    age_threshold: u64,
) -> Result<AgeBuckets> {
    let (mut new, mut old) = (Acc::default(), Acc::default());
    for (imp, &p) in window.iter().zip(preds) {
        let birth = truth.birth_time(imp.item())?;
        let acc = if is_new(birth, reference_time, age_threshold) { &mut new } else { &mut old };
        acc.n += 1;
        acc.ce += binary_ce(if imp.click { 1.0 } else { 0.0 }, clamp_prob(p))?;
        acc.pred += p;
        acc.clicks += imp.click as usize;
        acc.err += (p - truth.true_ctr(imp)?).abs();
    }
    Ok(AgeBuckets { new: new.finish(), old: old.finish() })
}

/// Splits a window into new and old items and reports per-bucket metrics.
pub fn age_bucket_report(
    model: &CtrModel,
    window: &[Impression],
    truth: &WorldTruth,
    reference_time: u64,
    age_threshold: u64,
) -> Result<AgeBuckets> {
    buckets_from(&predictions(model, window)?, window, truth, reference_time, age_threshold)
}

/// Metrics of one deployed model on one evaluation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub regime: String,
    pub model_id: String,
    pub seed: u64,
    pub cycle_time: u64,
    pub window_start: u64,
    pub window_end: u64,
    pub n_examples: usize,
    pub log_loss: f64,
    pub auc: Option<f64>,
    pub mean_predicted: f64,
    pub empirical_ctr: f64,
    pub calibration_error: f64,
    pub new: BucketMetrics,
    pub old: BucketMetrics,
}

/// Where and how a report was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalContext<'a> {
    pub regime: &'a str,
    pub model_id: &'a str,
    pub seed: u64,
    pub cycle_time: u64,
    pub window_start: u64,
    pub window_end: u64,
    pub age_threshold: u64,
}

pub fn evaluate_window(
    model: &CtrModel,
    window: &[Impression],
    truth: &WorldTruth,
    ctx: &EvalContext<'_>,
) -> Result<MetricsReport> {
    if window.is_empty() {
        return Err(Error::EmptyWindow(format!("evaluation window at {}", ctx.cycle_time)));
    }
    let preds = predictions(model, window)?;
    let labels = labels(window);
    let n = window.len() as f64;
    let mean_predicted = preds.iter().sum::<f64>() / n;
    let empirical_ctr = labels.iter().filter(|&&y| y).count() as f64 / n;
    let buckets = buckets_from(&preds, window, truth, ctx.cycle_time, ctx.age_threshold)?;
    Ok(MetricsReport {
        regime: ctx.regime.into(),
        model_id: ctx.model_id.into(),
        seed: ctx.seed,
        cycle_time: ctx.cycle_time,
        window_start: ctx.window_start,
        window_end: ctx.window_end,
        n_examples: window.len(),
        log_loss: log_loss_of(&preds, &labels)?,
        auc: auc_of(&preds, &labels),
        mean_predicted,
        empirical_ctr,
        calibration_error: (mean_predicted - empirical_ctr).abs(),
        new: buckets.new,
        old: buckets.old,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    LogLoss,
    Auc,
    CalibrationError,
    NewLogLoss,
    OldLogLoss,
    NewCtrError,
    OldCtrError,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::LogLoss,
        Metric::Auc,
        Metric::CalibrationError,
        Metric::NewLogLoss,
        Metric::OldLogLoss,
        Metric::NewCtrError,
        Metric::OldCtrError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::LogLoss => "log_loss",
            Metric::Auc => "auc",
            Metric::CalibrationError => "calibration_error",
            Metric::NewLogLoss => "new_log_loss",
            Metric::OldLogLoss => "old_log_loss",
            Metric::NewCtrError => "new_ctr_error",
            Metric::OldCtrError => "old_ctr_error",
        }
    }

    pub fn value(self, r: &MetricsReport) -> Option<f64> {
        match self {
            Metric::LogLoss => Some(r.log_loss),
            Metric::Auc => r.auc,
            Metric::CalibrationError => Some(r.calibration_error),
            Metric::NewLogLoss => r.new.log_loss,
            Metric::OldLogLoss => r.old.log_loss,
            Metric::NewCtrError => r.new.ctr_error,
            Metric::OldCtrError => r.old.ctr_error,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedDelta {
    pub seed: u64,
    /// Windows where both regimes have a value for the metric.
    pub n_pairs: usize,
    /// Mean of `b - a` over those windows.
    pub mean_delta: Option<f64>,
}

/// Paired comparison of regime `b` against regime `a` on one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub a: String,
    pub b: String,
    pub metric: Metric,
    pub per_seed: Vec<SeedDelta>,
    /// Mean of the per-seed mean deltas.
    pub mean_delta: Option<f64>,
    pub b_lower: usize,
    pub b_higher: usize,
    pub ties: usize,
}

type WindowKey = (u64, u64, u64, u64);

fn key(r: &MetricsReport) -> WindowKey {
    (r.seed, r.cycle_time, r.window_start, r.window_end)
}

/// Pairs reports of regimes `a` and `b` by `(seed, cycle, window)` and
/// summarizes `b - a`. Refuses unless both regimes cover exactly the same keys.
pub fn compare_regimes(reports: &[MetricsReport], a: &str, b: &str, metric: Metric) -> Result<ComparisonTable> {
    let collect = |name: &str| -> Result<BTreeMap<WindowKey, &MetricsReport>> {
        let mut m = BTreeMap::new();
        for r in reports.iter().filter(|r| r.regime == name) {
            if m.insert(key(r), r).is_some() {
                return Err(Error::Misaligned(format!("regime `{name}` has two reports for window {:?}", key(r))));
            }
        }
        if m.is_empty() {
            return Err(Error::Misaligned(format!("no reports for regime `{name}`")));
        }
        Ok(m)
    };
    let ra = collect(a)?;
    let rb = collect(b)?;
    if ra.len() != rb.len() || ra.keys().zip(rb.keys()).any(|(x, y)| x != y) {
        return Err(Error::Misaligned(format!("regimes `{a}` and `{b}` were evaluated on different seeds or windows")));
    }

    let mut per_seed: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
    for (k, ra) in &ra {
        let entry = per_seed.entry(k.0).or_insert((0, 0.0));
        if let (Some(va), Some(vb)) = (metric.value(ra), metric.value(rb[k])) {
            entry.0 += 1;
            entry.1 += vb - va;
        }
    }
    let per_seed: Vec<SeedDelta> = per_seed
        .into_iter()
        .map(|(seed, (n, sum))| SeedDelta { seed, n_pairs: n, mean_delta: (n > 0).then(|| sum / n as f64) })
        .collect();
    let deltas: Vec<f64> = per_seed.iter().filter_map(|s| s.mean_delta).collect();
    Ok(ComparisonTable {
        a: a.into(),
        b: b.into(),
        metric,
        mean_delta: (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64),
        b_lower: deltas.iter().filter(|&&d| d < 0.0).count(),
        b_higher: deltas.iter().filter(|&&d| d > 0.0).count(),
        ties: deltas.iter().filter(|&&d| d == 0.0).count(),
        per_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn brute_auc(p: &[f64], y: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..p.len() {
            for j in 0..p.len() {
                if y[i] && !y[j] {
                    pairs += 1.0;
                    if p[i] > p[j] {
                        wins += 1.0;
                    } else if p[i] == p[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_of(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(auc_of(&[0.3; 5], &[false, true, true, false, true]), Some(0.5));
        assert_eq!(auc_of(&[0.3, 0.4], &[true, true]), None);
        let p = [0.2, 0.5, 0.5, 0.1, 0.9, 0.5];
        let y = [false, true, false, false, true, true];
        assert_eq!(auc_of(&p, &y), Some(brute_auc(&p, &y)));
    }

    #[test]
    fn log_loss_hand_sum() {
        let p = [0.9, 0.2, 0.6];
        let y = [true, false, false];
        let expected = (-libm::log(0.9) - libm::log(0.8) - libm::log(0.4)) / 3.0;
        assert!((log_loss_of(&p, &y).unwrap() - expected).abs() < 1e-15);
        assert!(log_loss_of(&[], &[]).is_err());
    }

    #[test]
    fn new_bucket_rule() {
        assert!(is_new(100, 150, 60));
        assert!(!is_new(100, 160, 60));
        assert!(is_new(200, 150, 60));
        assert!(is_new(0, u64::MAX - 1, u64::MAX));
    }

    fn report(regime: &str, seed: u64, cycle: u64, ll: f64) -> MetricsReport {
        MetricsReport {
            regime: regime.into(),
            model_id: "m".into(),
            seed,
            cycle_time: cycle,
            window_start: cycle,
            window_end: cycle + 10,
            n_examples: 1,
            log_loss: ll,
            auc: None,
            mean_predicted: 0.0,
            empirical_ctr: 0.0,
            calibration_error: 0.0,
            new: BucketMetrics::default(),
            old: BucketMetrics::default(),
        }
    }

    #[test]
    fn comparison_pairs_by_window() {
        let rs = vec![
            report("a", 1, 0, 0.5),
            report("a", 1, 10, 0.7),
            report("b", 1, 0, 0.4),
            report("b", 1, 10, 0.6),
            report("a", 2, 0, 0.5),
            report("b", 2, 0, 0.55),
        ];
        let t = compare_regimes(&rs, "a", "b", Metric::LogLoss).unwrap();
        assert_eq!(t.per_seed.len(), 2);
        assert!((t.per_seed[0].mean_delta.unwrap() + 0.1).abs() < 1e-12);
        assert_eq!((t.b_lower, t.b_higher, t.ties), (1, 1, 0));
        let same = compare_regimes(&rs, "a", "a", Metric::LogLoss).unwrap();
        assert!(same.per_seed.iter().all(|s| s.mean_delta == Some(0.0)));
        assert_eq!(compare_regimes(&rs, "a", "b", Metric::NewLogLoss).unwrap().mean_delta, None);
    }

    #[test]
    fn comparison_refuses_misaligned() {
        let rs = vec![report("a", 1, 0, 0.5), report("b", 1, 10, 0.4)];
        assert!(matches!(compare_regimes(&rs, "a", "b", Metric::LogLoss), Err(Error::Misaligned(_))));
        assert!(compare_regimes(&rs, "a", "c", Metric::LogLoss).is_err());
    }

    #[test]
    fn metric_names() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }
}
