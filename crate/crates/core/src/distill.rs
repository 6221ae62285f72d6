//! Distillation objective for binary click prediction.
//!
//! The student loss is the hard-label cross entropy plus `alpha` times the
//! cross entropy between the teacher's soft target and the student's
//! temperature-softened prediction:
//!
//! ```text
//! L = CE(y, σ(z)) + α · λ · CE(t, σ(z / T)),   λ = T² if scale_distill_by_t2 else 1
//! ```
//!
//! Temperature never touches the hard-label term. Soft targets are computed
//! once per training window by [`precompute_soft_targets`].

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{clamp_prob, logistic, CtrModel, PROB_EPS};
use crate::world::Impression;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub scale_distill_by_t2: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig { alpha: 0.5, temperature: 2.0, scale_distill_by_t2: false }
    }
}

impl KdConfig {
    pub fn new(alpha: f64, temperature: f64) -> Self {
        KdConfig { alpha, temperature, scale_distill_by_t2: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.temperature >= 1.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be >= 1, got {}", self.temperature)));
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        if self.scale_distill_by_t2 {
            self.temperature * self.temperature
        } else {
            1.0
        }
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability {p} outside [{PROB_EPS}, 1 - {PROB_EPS}]")))
    }
}

/// `-(t·ln p + (1-t)·ln(1-p))` for a hard or soft target `t`.
pub fn binary_ce(target: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidArgument(format!("target {target} outside [0, 1]")));
    }
    check_prob(p)?;
    Ok(-(target * libm::log(p) + (1.0 - target) * libm::log(1.0 - p)))
}

/// Temperature-softened, clamped click probability.
pub fn soften(logit: f64, temperature: f64) -> f64 {
    clamp_prob(logistic(logit / temperature))
}

fn label(click: bool) -> f64 {
    if click {
        1.0
    } else {
        0.0
    }
}

/// Student loss for one example given its logit.
pub fn kd_loss(click: bool, student_logit: f64, soft_target: f64, cfg: &KdConfig) -> Result<f64> {
    cfg.validate()?;
    check_prob(soft_target)?;
    let hard = binary_ce(label(click), clamp_prob(logistic(student_logit)))?;
    if cfg.alpha == 0.0 {
        return Ok(hard);
    }
    let soft = binary_ce(soft_target, soften(student_logit, cfg.temperature))?;
    Ok(hard + cfg.alpha * cfg.lambda() * soft)
}

/// `dL/dz = (σ(z) - y) + α·λ·(σ(z/T) - t) / T`.
pub fn kd_loss_grad(click: bool, student_logit: f64, soft_target: f64, cfg: &KdConfig) -> Result<f64> {
    cfg.validate()?;
    check_prob(soft_target)?;
    Ok(kd_grad_unchecked(click, student_logit, soft_target, cfg))
}

/// Plain cross-entropy gradient with respect to the logit.
#[inline]
pub fn ce_grad(click: bool, logit: f64) -> f64 {
    logistic(logit) - label(click)
}

#[inline]
pub(crate) fn kd_grad_unchecked(click: bool, z: f64, soft_target: f64, cfg: &KdConfig) -> f64 {
    let hard = ce_grad(click, z);
    if cfg.alpha == 0.0 {
        return hard;
    }
    let t = cfg.temperature;
    hard + cfg.alpha * cfg.lambda() * (logistic(z / t) - soft_target) / t
}

/// Soft target for one impression: `soften(teacher_logit, T)`, or the
/// teacher's label prior (softened the same way) when any feature value is
/// outside the teacher's vocabulary.
pub fn soft_target_for(teacher: &CtrModel, logit: Option<f64>, temperature: f64) -> f64 {
    match logit {
        Some(z) => soften(z, temperature),
        None => {
            let prior = clamp_prob(teacher.meta.label_prior);
            soften(libm::log(prior / (1.0 - prior)), temperature)
        }
    }
}

/// Returns a copy of `data` with every impression's `soft_target` set from
/// the teacher. The teacher is only read; output order equals input order.
pub fn precompute_soft_targets(teacher: &CtrModel, data: &[Impression], temperature: f64) -> Result<Vec<Impression>> {
    let mut out = data.to_vec();
    annotate_soft_targets(teacher, &mut out, temperature)?;
    Ok(out)
}

/// In-place form of [`precompute_soft_targets`].
pub fn annotate_soft_targets(teacher: &CtrModel, data: &mut [Impression], temperature: f64) -> Result<()> {
    if !(temperature >= 1.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be >= 1, got {temperature}")));
    }
    const CHUNK: usize = 1024;
    let nf = teacher.n_fields();
    for chunk in data.chunks_mut(CHUNK) {
        let idx = teacher.encode(chunk.iter().map(|imp| &imp.features[..]), true)?;
        let logits = teacher.forward(&idx)?;
        for (k, imp) in chunk.iter_mut().enumerate() {
            let known = idx[k * nf..(k + 1) * nf].iter().all(Option::is_some);
            let z = if known { Some(logits[k]) } else { None };
            imp.soft_target = Some(soft_target_for(teacher, z, temperature));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn binary_ce_examples() {
        assert!(binary_ce(1.0, 1.0 - PROB_EPS).unwrap() <= 2e-7);
        // −ln 0.8
        assert!(close(binary_ce(1.0, 0.8).unwrap(), 0.223_143_551_314_209_7, 1e-12));
        // −(0.6 ln 0.8 + 0.4 ln 0.2)
        assert!(close(binary_ce(0.6, 0.8).unwrap(), 0.777_661_295_762_166, 1e-12));
        assert!(binary_ce(1.0, 1.0).is_err());
        assert!(binary_ce(1.0, 0.0).is_err());
        assert!(binary_ce(1.5, 0.5).is_err());
    }

    #[test]
    fn soften_examples() {
        for z in [-30.0, -1.0, 0.0, 2.5, 40.0] {
            assert!(close(soften(z, 1e9), 0.5, 1e-6));
            assert_eq!(soften(z, 1.0), clamp_prob(logistic(z)));
        }
        assert!(close(soften(2.0, 2.0), 0.731_058_578_630_004_9, 1e-15));
    }

    #[test]
    fn kd_loss_examples() {
        let cfg = KdConfig { alpha: 0.0, temperature: 2.0, scale_distill_by_t2: true };
        for z in [-3.0, 0.1, 4.0] {
            for st in [0.1, 0.9] {
                assert_eq!(kd_loss(true, z, st, &cfg).unwrap(), binary_ce(1.0, clamp_prob(logistic(z))).unwrap());
            }
        }
        let cfg = KdConfig::new(0.5, 1.0);
        let l = kd_loss(true, libm::log(4.0), 0.6, &cfg).unwrap();
        assert!(close(l, 0.611_974_199_195_292_7, 1e-6), "{l}");
        let cfg = KdConfig::new(1.0, 1.0);
        // both terms at the clamp; what remains is the entropy of a 1 - 1e-7 target
        assert!(kd_loss(true, 40.0, 1.0 - PROB_EPS, &cfg).unwrap() < 2e-6);
    }

    #[test]
    fn kd_grad_examples() {
        let cfg = KdConfig::new(0.5, 2.0);
        let z = 0.3;
        // y = σ(z) is not a hard label, so check the stationary point on the
        // soft term alone combined with a matching hard gradient.
        let g_soft = kd_loss_grad(true, z, logistic(z / 2.0), &cfg).unwrap();
        assert_eq!(g_soft, ce_grad(true, z));
        assert_eq!(kd_loss_grad(true, 0.0, 0.7, &KdConfig::new(0.0, 2.0)).unwrap(), -0.5);
        let g = kd_loss_grad(true, 0.0, 0.6, &KdConfig::new(0.5, 2.0)).unwrap();
        assert!(close(g, -0.525, 1e-15), "{g}");
    }

    #[test]
    fn t2_scaling() {
        let base = KdConfig::new(0.5, 2.0);
        let scaled = KdConfig { scale_distill_by_t2: true, ..base };
        let hard = kd_loss(false, 0.4, 0.3, &KdConfig::new(0.0, 2.0)).unwrap();
        let a = kd_loss(false, 0.4, 0.3, &base).unwrap() - hard;
        let b = kd_loss(false, 0.4, 0.3, &scaled).unwrap() - hard;
        assert!(close(b, 4.0 * a, 1e-12));
    }

    #[test]
    fn config_validation() {
        assert!(KdConfig::new(-0.1, 2.0).validate().is_err());
        assert!(KdConfig::new(0.1, 0.5).validate().is_err());
        assert!(kd_loss(true, 0.0, 0.0, &KdConfig::default()).is_err());
    }
}
