//! TOML configuration.
//!
//! ```toml
//! [world]      # WorldConfig keys, e.g. impressions_per_hour = 2000
//! [schedule]   # teacher_period_hours, teacher_window_hours,
//!              # student_period_hours, student_window_hours, days
//! [train]      # learning_rate, batch_size, teacher_epochs, student_epochs,
//!              # embedding_dim, hidden, carry_optimizer_state, seed
//! [kd]         # alpha, temperature, scale_distill_by_t2
//! [regimes]    # enabled = ["baseline", "kd-only", "ws-only", "ws-kd"], parallel
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::path::Path;

use ctr_incr_core::world::HOUR;
use ctr_incr_core::{KdConfig, Regime, TrainConfig, WorldConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Training cadence in simulated hours.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub teacher_period_hours: u64,
    pub teacher_window_hours: u64,
    pub student_period_hours: u64,
    pub student_window_hours: u64,
    /// Simulated days after the warm-up history.
    pub days: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            teacher_period_hours: 24,
            teacher_window_hours: 14 * 24,
            student_period_hours: 4,
            student_window_hours: 4,
            days: 1,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("schedule: {m}")));
        if self.teacher_period_hours == 0
            || self.teacher_window_hours == 0
            || self.student_period_hours == 0
            || self.student_window_hours == 0
        {
            return bad("periods and windows must be positive");
        }
        if self.student_period_hours > self.teacher_period_hours {
            return bad("student_period_hours exceeds teacher_period_hours");
        }
        if !self.teacher_period_hours.is_multiple_of(self.student_period_hours) {
            return bad("teacher_period_hours must be a multiple of student_period_hours");
        }
        Ok(())
    }

    pub fn teacher_period(&self) -> u64 {
        self.teacher_period_hours * HOUR
    }
    pub fn teacher_window(&self) -> u64 {
        self.teacher_window_hours * HOUR
    }
    pub fn student_period(&self) -> u64 {
        self.student_period_hours * HOUR
    }
    pub fn student_window(&self) -> u64 {
        self.student_window_hours * HOUR
    }
    /// First tick: the end of the warm-up history.
    pub fn start(&self) -> u64 {
        self.teacher_window()
    }
    /// End of the simulated range, including the last evaluation window.
    pub fn horizon(&self) -> u64 {
        self.start() + self.days * self.teacher_period()
    }
    pub fn students_per_teacher(&self) -> u64 {
        self.teacher_period_hours / self.student_period_hours
    }
    /// Student ticks in order.
    pub fn ticks(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.days * self.students_per_teacher()).map(|k| self.start() + k * self.student_period())
    }
    pub fn is_teacher_tick(&self, t: u64) -> bool {
        t >= self.start() && (t - self.start()).is_multiple_of(self.teacher_period())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSet {
    pub enabled: Vec<Regime>,
    /// Train the regimes of one tick on separate threads.
    pub parallel: bool,
}

impl Default for RegimeSet {
    fn default() -> Self {
        RegimeSet { enabled: Regime::ALL.to_vec(), parallel: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub world: WorldConfig,
    pub schedule: Schedule,
    pub train: TrainConfig,
    pub kd: KdConfig,
    pub regimes: RegimeSet,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.schedule.validate()?;
        self.train.validate()?;
        self.kd.validate()?;
        let mut seen = self.regimes.enabled.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.regimes.enabled.len() {
            return Err(Error::Config("regimes: duplicate entry in enabled".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering; equal configs render identically.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First eight bytes of the SHA-256 of the canonical rendering, with
    /// `regimes.parallel` left out since it cannot change any result.
    pub fn hash(&self) -> u64 {
        let mut c = self.clone();
        c.regimes.parallel = RegimeSet::default().parallel;
        hash_parts(&[c.to_toml().as_bytes()])
    }
}

pub(crate) fn hash_parts(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.schedule.students_per_teacher(), 6);
        assert_eq!(cfg.regimes.enabled.len(), 4);
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn parses_sections() {
        let text = r#"
            [world]
            impressions_per_hour = 100
            seed = 7
            trend_events = [{ time = 7200, duration = 3600, target = { item = 3 }, logit_shift = 1.5 }]
            [schedule]
            teacher_window_hours = 48
            days = 2
            [train]
            hidden = [8]
            [kd]
            alpha = 0.0
            [regimes]
            enabled = ["ws-only", "ws-kd"]
            parallel = false
        "#;
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.world.impressions_per_hour, 100);
        assert_eq!(cfg.world.trend_events.len(), 1);
        assert_eq!(cfg.schedule.horizon(), (48 + 48) * HOUR);
        assert_eq!(cfg.regimes.enabled, vec![Regime::WsOnly, Regime::WsKd]);
        assert_eq!(cfg.schedule.ticks().count(), 12);
        assert_ne!(cfg.hash(), PipelineConfig::default().hash());
        let mut seq = cfg.clone();
        seq.regimes.parallel = !seq.regimes.parallel;
        assert_eq!(seq.hash(), cfg.hash());
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[schedule]\nstudent_period_hours = 5",
            "[schedule]\nstudent_period_hours = 48",
            "[schedule]\nteacher_window_hours = 0",
            "[train]\nbogus = 1",
            "[kd]\ntemperature = 0.0",
            "[regimes]\nenabled = [\"ws-kd\", \"ws-kd\"]",
            "[regimes]\nenabled = [\"nope\"]",
            "[mystery]",
        ] {
            assert!(matches!(PipelineConfig::from_toml(text), Err(Error::Config(_) | Error::Core(_))), "{text}");
        }
    }
}
