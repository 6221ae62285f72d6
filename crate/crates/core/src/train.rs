//! Minibatch training of teachers and students.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distill::{binary_ce, ce_grad, kd_grad_unchecked, kd_loss, precompute_soft_targets, KdConfig};
use crate::error::{Error, Result};
use crate::nn::{
    clamp_prob, logistic, BackwardScratch, CtrModel, Gradients, ModelSpec, OptimizerState, Tape, Vocabulary,
};
use crate::rng;
use crate::warmstart::{expand_vocabulary, scratch_start, warm_start, warm_start_optimizer};
use crate::world::{Impression, FIELD_NAMES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Passes over a history window (teachers and scratch-started students).
    pub teacher_epochs: usize,
    /// Passes over a fresh window (warm-started students).
    pub student_epochs: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    /// Copy the teacher's Adagrad accumulators into warm-started students.
    pub carry_optimizer_state: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 64,
            teacher_epochs: 1,
            student_epochs: 2,
            embedding_dim: 8,
            hidden: alloc::vec![32, 16],
            carry_optimizer_state: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train: learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("train: batch_size and embedding_dim must be positive".into()));
        }
        self.model_spec().validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::uniform(&FIELD_NAMES, self.embedding_dim, self.hidden.clone())
    }
}

/// The four training configurations being compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Scratch init, history window, plain cross entropy.
    Baseline,
    /// Scratch init, history window, distillation objective.
    KdOnly,
    /// Warm start, fresh window, plain cross entropy.
    WsOnly,
    /// Warm start, fresh window, distillation objective.
    WsKd,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Baseline, Regime::KdOnly, Regime::WsOnly, Regime::WsKd];

    pub fn warm_start(self) -> bool {
        matches!(self, Regime::WsOnly | Regime::WsKd)
    }

    pub fn distill(self) -> bool {
        matches!(self, Regime::KdOnly | Regime::WsKd)
    }

    pub fn needs_teacher(self) -> bool {
        self.warm_start() || self.distill()
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::KdOnly => "kd-only",
            Regime::WsOnly => "ws-only",
            Regime::WsKd => "ws-kd",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    CrossEntropy,
    Distill(KdConfig),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// Distinct impressions in the training window.
    pub window_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub model: CtrModel,
    pub optimizer: OptimizerState,
    pub report: TrainReport,
}

const EPOCH_STREAM: u64 = 1 << 48;

/// Runs `epochs` shuffled minibatch passes of Adagrad over `data`.
///
/// The shuffle of epoch `e` is drawn from stream `(seed, e)`, so runs with
/// the same seed visit examples in the same order whatever the objective.
/// Every feature value must be in the model vocabulary. The distillation
/// objective requires a soft target on every impression.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &mut CtrModel,
    opt: &mut OptimizerState,
    data: &[Impression],
    objective: Objective,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<TrainReport> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if let Objective::Distill(kd) = &objective {
        kd.validate()?;
    }
    let nf = model.n_fields();
    let encoded = model.encode(data.iter().map(|i| &i.features[..]), false)?;
    let soft: Vec<f64> = match objective {
        Objective::CrossEntropy => Vec::new(),
        Objective::Distill(_) => data
            .iter()
            .enumerate()
            .map(|(k, i)| {
                i.soft_target.ok_or_else(|| Error::InvalidArgument(format!("impression {k} has no soft target")))
            })
            .collect::<Result<_>>()?,
    };

    let mut report = TrainReport { window_samples: data.len(), ..Default::default() };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(model);
    let mut tape = Tape::default();
    let mut scratch = BackwardScratch::default();
    let mut idx = Vec::with_capacity(batch_size * nf);
    let mut dlogits = Vec::with_capacity(batch_size);

    for epoch in 0..epochs {
        let mut rng = rng::stream(seed, EPOCH_STREAM + epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            idx.clear();
            for &k in batch {
                idx.extend_from_slice(&encoded[k * nf..(k + 1) * nf]);
            }
            model.forward_tape(&idx, &mut tape)?;
            let scale = 1.0 / batch.len() as f64;
            dlogits.clear();
            for (&k, &z) in batch.iter().zip(&tape.logits) {
                let click = data[k].click;
                let (loss, g) = match &objective {
                    Objective::CrossEntropy => {
                        let y = if click { 1.0 } else { 0.0 };
                        (binary_ce(y, clamp_prob(logistic(z)))?, ce_grad(click, z))
                    }
                    Objective::Distill(kd) => {
                        (kd_loss(click, z, soft[k], kd)?, kd_grad_unchecked(click, z, soft[k], kd))
                    }
                };
                total += loss;
                dlogits.push(g * scale);
            }
            model.backward_tape(&idx, &tape, &dlogits, &mut grads, &mut scratch)?;
            opt.apply(model, &grads, learning_rate)?;
            report.steps += 1;
        }
        report.epoch_losses.push(total / data.len().max(1) as f64);
    }
    Ok(report)
}

fn label_rate(data: &[Impression]) -> f64 {
    data.iter().filter(|i| i.click).count() as f64 / data.len() as f64
}

/// Scratch teacher trained with plain cross entropy on a history window.
pub fn train_teacher(history: &[Impression], cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if history.is_empty() {
        return Err(Error::EmptyWindow("teacher history window".into()));
    }
    let vocab = expand_vocabulary(&Vocabulary::default(), history);
    let mut model = scratch_start(&cfg.model_spec(), &vocab, seed)?;
    let mut optimizer = OptimizerState::zeros_like(&model);
    let report = fit(
        &mut model,
        &mut optimizer,
        history,
        Objective::CrossEntropy,
        cfg.learning_rate,
        cfg.batch_size,
        cfg.teacher_epochs,
        seed,
    )?;
    model.meta.label_prior = label_rate(history);
    Ok(Trained { model, optimizer, report })
}

/// Trains one student under `regime`.
///
/// Warm-start regimes read only `fresh`; scratch regimes read only `history`.
/// Distillation regimes attach the teacher's soft targets to the window once,
/// before the optimization loop.
pub fn train_student(
    regime: Regime,
    teacher: Option<&Trained>,
    history: &[Impression],
    fresh: &[Impression],
    cfg: &TrainConfig,
    kd: &KdConfig,
    seed: u64,
) -> Result<Trained> {
    cfg.validate()?;
    let teacher = match (regime.needs_teacher(), teacher) {
        (true, None) => return Err(Error::MissingTeacher(regime.name())),
        (true, t) => t,
        (false, _) => None,
    };
    let (window, epochs) =
        if regime.warm_start() { (fresh, cfg.student_epochs) } else { (history, cfg.teacher_epochs) };
    if window.is_empty() {
        let which = if regime.warm_start() { "fresh" } else { "history" };
        return Err(Error::EmptyWindow(format!("{which} window for regime {regime}")));
    }

    let (mut model, mut optimizer) = match teacher {
        Some(t) if regime.warm_start() => {
            let vocab = expand_vocabulary(&t.model.vocab, window);
            let model = warm_start(&t.model, &vocab, seed)?;
            let opt = warm_start_optimizer(Some(&t.optimizer), &model, cfg.carry_optimizer_state);
            (model, opt)
        }
        _ => {
            let vocab = expand_vocabulary(&Vocabulary::default(), window);
            let mut model = scratch_start(&cfg.model_spec(), &vocab, seed)?;
            model.meta.label_prior = label_rate(window);
            if let Some(t) = teacher {
                model.meta.teacher_hash = t.model.meta.config_hash;
            }
            let opt = OptimizerState::zeros_like(&model);
            (model, opt)
        }
    };

    let report = match teacher {
        Some(t) if regime.distill() => {
            kd.validate()?;
            let annotated = precompute_soft_targets(&t.model, window, kd.temperature)?;
            fit(
                &mut model,
                &mut optimizer,
                &annotated,
                Objective::Distill(*kd),
                cfg.learning_rate,
                cfg.batch_size,
                epochs,
                seed,
            )?
        }
        _ => fit(
            &mut model,
            &mut optimizer,
            window,
            Objective::CrossEntropy,
            cfg.learning_rate,
            cfg.batch_size,
            epochs,
            seed,
        )?,
    };
    Ok(Trained { model, optimizer, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_stream, WorldConfig, HOUR};

    fn world() -> WorldConfig {
        WorldConfig {
            n_items_initial: 30,
            n_publishers: 5,
            n_user_segments: 3,
            impressions_per_hour: 300,
            base_ctr: 0.1,
            new_item_rate: 1.0,
            seed: 4,
            ..Default::default()
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig { hidden: alloc::vec![8], embedding_dim: 4, batch_size: 32, ..Default::default() }
    }

    #[test]
    fn teacher_loss_decreases_and_is_reproducible() {
        let (data, _) = generate_stream(&world(), 0, 24 * HOUR).unwrap();
        let c = TrainConfig { teacher_epochs: 3, ..cfg() };
        let t = train_teacher(&data, &c, 1).unwrap();
        let l = &t.report.epoch_losses;
        assert!(l[2] < l[0], "{l:?}");
        assert_eq!(t, train_teacher(&data, &c, 1).unwrap());
        let rate = data.iter().filter(|i| i.click).count() as f64 / data.len() as f64;
        assert_eq!(t.model.meta.label_prior, rate);
    }

    #[test]
    fn all_negative_teacher() {
        let (mut data, _) = generate_stream(&world(), 0, 6 * HOUR).unwrap();
        data.iter_mut().for_each(|i| i.click = false);
        let c = TrainConfig { teacher_epochs: 4, ..cfg() };
        let t = train_teacher(&data, &c, 1).unwrap();
        assert_eq!(t.model.meta.label_prior, 0.0);
        let p = t.model.predict(&data[0].features).unwrap();
        assert!(p < 0.01, "{p}");
    }

    #[test]
    fn empty_windows_and_missing_teacher() {
        assert!(matches!(train_teacher(&[], &cfg(), 0), Err(Error::EmptyWindow(_))));
        let (data, _) = generate_stream(&world(), 0, 2 * HOUR).unwrap();
        let kd = KdConfig::default();
        for r in [Regime::KdOnly, Regime::WsOnly, Regime::WsKd] {
            assert!(matches!(train_student(r, None, &data, &data, &cfg(), &kd, 0), Err(Error::MissingTeacher(_))));
        }
        let t = train_teacher(&data, &cfg(), 0).unwrap();
        assert!(matches!(
            train_student(Regime::WsKd, Some(&t), &data, &[], &cfg(), &kd, 0),
            Err(Error::EmptyWindow(_))
        ));
        assert!(matches!(
            train_student(Regime::Baseline, None, &[], &data, &cfg(), &kd, 0),
            Err(Error::EmptyWindow(_))
        ));
    }

    #[test]
    fn zero_epoch_student_equals_warm_start() {
        let (data, _) = generate_stream(&world(), 0, 30 * HOUR).unwrap();
        let hist = crate::world::slice_window(&data, 0, 24 * HOUR);
        let fresh = crate::world::slice_window(&data, 26 * HOUR, 30 * HOUR);
        let t = train_teacher(hist, &cfg(), 0).unwrap();
        let c = TrainConfig { student_epochs: 0, ..cfg() };
        let s = train_student(Regime::WsOnly, Some(&t), hist, fresh, &c, &KdConfig::default(), 9).unwrap();
        let vocab = expand_vocabulary(&t.model.vocab, fresh);
        assert_eq!(s.model, warm_start(&t.model, &vocab, 9).unwrap());
        assert!(s.model.vocab.len(0) > t.model.vocab.len(0));
    }

    #[test]
    fn alpha_zero_collapses_to_plain_ce() {
        let (data, _) = generate_stream(&world(), 0, 30 * HOUR).unwrap();
        let hist = crate::world::slice_window(&data, 0, 24 * HOUR);
        let fresh = crate::world::slice_window(&data, 26 * HOUR, 30 * HOUR);
        let t = train_teacher(hist, &cfg(), 0).unwrap();
        let kd = KdConfig::new(0.0, 2.0);
        let a = train_student(Regime::WsKd, Some(&t), hist, fresh, &cfg(), &kd, 3).unwrap();
        let b = train_student(Regime::WsOnly, Some(&t), hist, fresh, &cfg(), &kd, 3).unwrap();
        assert_eq!(a.model.blocks(), b.model.blocks());
        assert_eq!(a.optimizer, b.optimizer);
        let a = train_student(Regime::KdOnly, Some(&t), hist, fresh, &cfg(), &kd, 3).unwrap();
        let b = train_student(Regime::Baseline, None, hist, fresh, &cfg(), &kd, 3).unwrap();
        assert_eq!(a.model.blocks(), b.model.blocks());
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("nope".parse::<Regime>().is_err());
    }
}
