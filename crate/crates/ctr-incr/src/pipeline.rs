//! Simulated deployment cadence: daily teachers, students every few hours,
//! prequential evaluation of every deployed model.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use ctr_incr_core::metrics::{evaluate_window, EvalContext};
use ctr_incr_core::rng::mix;
use ctr_incr_core::world::slice_window;
use ctr_incr_core::{
    generate_stream, train_student, train_teacher, Impression, MetricsReport, Regime, Trained, WorldTruth,
};
use serde::{Deserialize, Serialize};

use crate::config::{hash_parts, PipelineConfig};
use crate::error::{Error, Result};

pub const TEACHER_ROLE: &str = "teacher";

/// One deployed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub deploy_time: u64,
    pub model_id: String,
    /// `teacher` or a regime name.
    pub role: String,
    pub train_start: u64,
    pub train_end: u64,
    pub parent_teacher: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub epochs: usize,
    pub samples: usize,
    pub steps: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRegistry {
    entries: Vec<RegistryEntry>,
}

impl DeploymentRegistry {
    /// Appends `entry`. Deploy times must strictly increase within a role,
    /// model ids must be unique and the parent must be an already deployed
    /// teacher.
    pub fn deploy(&mut self, entry: RegistryEntry) -> Result<()> {
        if self.entries.iter().any(|e| e.model_id == entry.model_id) {
            return Err(Error::Config(format!("model id `{}` deployed twice", entry.model_id)));
        }
        if let Some(prev) = self.latest(&entry.role) {
            if entry.deploy_time <= prev.deploy_time {
                return Err(Error::Config(format!(
                    "{} deployed at {} after {} at {}",
                    entry.model_id, entry.deploy_time, prev.model_id, prev.deploy_time
                )));
            }
        }
        if let Some(parent) = &entry.parent_teacher {
            match self.get(parent) {
                Some(p) if p.role == TEACHER_ROLE && p.deploy_time <= entry.deploy_time => {}
                _ => return Err(Error::Config(format!("{}: parent `{parent}` does not resolve", entry.model_id))),
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn get(&self, model_id: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.model_id == model_id)
    }

    pub fn by_role<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a RegistryEntry> + 'a {
        self.entries.iter().filter(move |e| e.role == role)
    }

    fn latest(&self, role: &str) -> Option<&RegistryEntry> {
        self.entries.iter().rev().find(|e| e.role == role)
    }

    /// The model of `role` serving at time `t`.
    pub fn active(&self, role: &str, t: u64) -> Option<&RegistryEntry> {
        self.entries.iter().filter(|e| e.role == role).take_while(|e| e.deploy_time <= t).last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Train,
    Evaluate,
}

/// One window handed out by an [`ImpressionStore`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub model_id: String,
    pub purpose: Purpose,
    pub start: u64,
    pub end: u64,
    pub n: usize,
    pub first_timestamp: Option<u64>,
    pub last_timestamp: Option<u64>,
}

/// Time-ordered impressions that are only reachable through logged window
/// requests.
pub struct ImpressionStore {
    data: Vec<Impression>,
    log: Mutex<Vec<AccessRecord>>,
}

impl ImpressionStore {
    pub fn new(data: Vec<Impression>) -> Self {
        ImpressionStore { data, log: Mutex::new(Vec::new()) }
    }

    pub fn window(&self, model_id: &str, purpose: Purpose, start: u64, end: u64) -> &[Impression] {
        let w = slice_window(&self.data, start, end);
        self.log.lock().unwrap().push(AccessRecord {
            model_id: model_id.into(),
            purpose,
            start,
            end,
            n: w.len(),
            first_timestamp: w.first().map(|i| i.timestamp),
            last_timestamp: w.last().map(|i| i.timestamp),
        });
        w
    }

    pub fn access_log(&self) -> Vec<AccessRecord> {
        self.log.lock().unwrap().clone()
    }
}

/// Samples and wall time of one training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingCost {
    pub model_id: String,
    pub role: String,
    pub samples: usize,
    pub epochs: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct DeployedModel {
    pub model_id: String,
    pub trained: Trained,
}

/// Everything a run produced. `costs` holds wall times and is therefore the
/// only part that differs between identical runs.
#[derive(Clone, Debug, Default)]
pub struct PipelineRun {
    pub config_hash: u64,
    pub registry: DeploymentRegistry,
    pub reports: Vec<MetricsReport>,
    pub costs: Vec<TrainingCost>,
    pub access_log: Vec<AccessRecord>,
    pub models: Vec<DeployedModel>,
}

impl PipelineRun {
    pub fn model(&self, model_id: &str) -> Option<&Trained> {
        self.models.iter().find(|m| m.model_id == model_id).map(|m| &m.trained)
    }
}

pub fn model_id(role: &str, t: u64) -> String {
    format!("{role}@{:05}h", t / ctr_incr_core::world::HOUR)
}

/// Seed of the teacher trained at tick `t`.
pub fn teacher_seed(seed: u64, t: u64) -> u64 {
    mix(mix(seed, t), 0)
}

/// Seed shared by every student trained at tick `t`.
pub fn student_seed(seed: u64, t: u64) -> u64 {
    mix(mix(seed, t), 1)
}

/// Per-model hash recorded in checkpoint metadata.
pub fn model_hash(config_hash: u64, model_id: &str) -> u64 {
    hash_parts(&[&config_hash.to_le_bytes(), model_id.as_bytes()])
}

fn at_hour(t: u64) -> impl Fn(Error) -> Error {
    move |e| Error::Cycle { hour: t / ctr_incr_core::world::HOUR, source: Box::new(e) }
}

/// Generates the world stream for `cfg` and runs the full schedule on it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    if cfg.schedule.days == 0 {
        return Err(Error::Config("schedule: horizon too short (days must be at least 1)".into()));
    }
    let (data, truth) = generate_stream(&cfg.world, 0, cfg.schedule.horizon())?;
    run_on_stream(cfg, data, &truth)
}

/// Runs the schedule of `cfg` over an existing stream covering
/// `[0, cfg.schedule.horizon())`.
pub fn run_on_stream(cfg: &PipelineConfig, data: Vec<Impression>, truth: &WorldTruth) -> Result<PipelineRun> {
    cfg.validate()?;
    let sched = &cfg.schedule;
    if sched.days == 0 {
        return Err(Error::Config("schedule: horizon too short (days must be at least 1)".into()));
    }
    if truth.horizon < sched.horizon() {
        return Err(Error::Config(format!("stream ends at {} before horizon {}", truth.horizon, sched.horizon())));
    }
    let store = ImpressionStore::new(data);
    let config_hash = cfg.hash();
    let mut run = PipelineRun { config_hash, ..Default::default() };
    let mut teacher: Option<(String, Trained)> = None;
    let mut regimes = cfg.regimes.enabled.clone();
    regimes.sort();

    for t in sched.ticks() {
        let err = at_hour(t);
        if sched.is_teacher_tick(t) {
            let id = model_id(TEACHER_ROLE, t);
            let start = t - sched.teacher_window();
            let history = store.window(&id, Purpose::Train, start, t);
            let seed = teacher_seed(cfg.train.seed, t);
            let clock = Instant::now();
            let mut trained = train_teacher(history, &cfg.train, seed).map_err(|e| err(e.into()))?;
            let wall_seconds = clock.elapsed().as_secs_f64();
            trained.model.meta.config_hash = model_hash(config_hash, &id);
            run.costs.push(TrainingCost {
                model_id: id.clone(),
                role: TEACHER_ROLE.into(),
                samples: history.len(),
                epochs: cfg.train.teacher_epochs,
                wall_seconds,
            });
            run.registry
                .deploy(entry(&id, TEACHER_ROLE, t, start, None, &trained, cfg.train.teacher_epochs))
                .map_err(&err)?;
            teacher = Some((id, trained));
        }
        let (teacher_id, teacher_model) = teacher.as_ref().expect("first tick trains a teacher");

        let seed = student_seed(cfg.train.seed, t);
        let jobs: Vec<(Regime, String, u64, &[Impression])> = regimes
            .iter()
            .map(|&r| {
                let id = model_id(r.name(), t);
                let start = if r.warm_start() { t - sched.student_window() } else { t - sched.teacher_window() };
                let w = store.window(&id, Purpose::Train, start, t);
                (r, id, start, w)
            })
            .collect();
        let train_one = |regime: Regime, window: &[Impression]| {
            let (history, fresh): (&[Impression], &[Impression]) =
                if regime.warm_start() { (&[], window) } else { (window, &[]) };
            let clock = Instant::now();
            let r = train_student(regime, Some(teacher_model), history, fresh, &cfg.train, &cfg.kd, seed);
            (r, clock.elapsed().as_secs_f64())
        };
        let results: Vec<_> = if cfg.regimes.parallel && jobs.len() > 1 {
            thread::scope(|s| {
                let handles: Vec<_> = jobs.iter().map(|j| s.spawn(move || train_one(j.0, j.3))).collect();
                handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
            })
        } else {
            jobs.iter().map(|j| train_one(j.0, j.3)).collect()
        };

        let mut deployed = Vec::with_capacity(jobs.len());
        for ((regime, id, start, window), (result, wall_seconds)) in jobs.into_iter().zip(results) {
            let mut trained = result.map_err(|e| err(Error::Core(e)))?;
            trained.model.meta.config_hash = model_hash(config_hash, &id);
            let parent = regime.needs_teacher().then(|| teacher_id.clone());
            let epochs = if regime.warm_start() { cfg.train.student_epochs } else { cfg.train.teacher_epochs };
            run.costs.push(TrainingCost {
                model_id: id.clone(),
                role: regime.name().into(),
                samples: window.len(),
                epochs,
                wall_seconds,
            });
            run.registry.deploy(entry(&id, regime.name(), t, start, parent, &trained, epochs)).map_err(&err)?;
            deployed.push((regime.name().to_string(), id, trained));
        }

        let eval_end = t + sched.student_period();
        let mut scored: Vec<(&str, &str, &Trained)> = vec![(TEACHER_ROLE, teacher_id, teacher_model)];
        scored.extend(deployed.iter().map(|(role, id, m)| (role.as_str(), id.as_str(), m)));
        for (role, id, m) in scored {
            let window = store.window(id, Purpose::Evaluate, t, eval_end);
            let ctx = EvalContext {
                regime: role,
                model_id: id,
                seed: cfg.world.seed,
                cycle_time: t,
                window_start: t,
                window_end: eval_end,
                age_threshold: sched.teacher_period(),
            };
            run.reports.push(evaluate_window(&m.model, window, truth, &ctx).map_err(|e| err(e.into()))?);
        }

        if sched.is_teacher_tick(t) {
            let (id, m) = teacher.as_ref().unwrap();
            run.models.push(DeployedModel { model_id: id.clone(), trained: m.clone() });
        }
        run.models.extend(deployed.into_iter().map(|(_, model_id, trained)| DeployedModel { model_id, trained }));
    }
    run.access_log = store.access_log();
    Ok(run)
}

fn entry(
    id: &str,
    role: &str,
    t: u64,
    start: u64,
    parent: Option<String>,
    trained: &Trained,
    epochs: usize,
) -> RegistryEntry {
    RegistryEntry {
        deploy_time: t,
        model_id: id.into(),
        role: role.into(),
        train_start: start,
        train_end: t,
        parent_teacher: parent,
        config_hash: format!("{:016x}", trained.model.meta.config_hash),
        seed: trained.model.meta.seed,
        epochs,
        samples: trained.report.window_samples,
        steps: trained.report.steps,
    }
}

/// Mean samples and wall time of one role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleCost {
    pub role: String,
    pub jobs: usize,
    pub mean_samples: f64,
    pub mean_wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub jobs: Vec<TrainingCost>,
    pub roles: Vec<RoleCost>,
    /// Mean teacher samples over mean student samples, all student roles pooled.
    pub sample_ratio: Option<f64>,
    /// Mean teacher wall time over mean student wall time.
    pub wall_ratio: Option<f64>,
}

pub fn measure_training_cost(run: &PipelineRun) -> CostReport {
    let mut by_role: BTreeMap<&str, Vec<&TrainingCost>> = BTreeMap::new();
    for c in &run.costs {
        by_role.entry(&c.role).or_default().push(c);
    }
    let mean =
        |xs: &[&TrainingCost], f: fn(&TrainingCost) -> f64| xs.iter().map(|c| f(c)).sum::<f64>() / xs.len() as f64;
    let roles: Vec<RoleCost> = by_role
        .iter()
        .map(|(role, xs)| RoleCost {
            role: role.to_string(),
            jobs: xs.len(),
            mean_samples: mean(xs, |c| c.samples as f64),
            mean_wall_seconds: mean(xs, |c| c.wall_seconds),
        })
        .collect();
    let teacher: Vec<&TrainingCost> = run.costs.iter().filter(|c| c.role == TEACHER_ROLE).collect();
    let students: Vec<&TrainingCost> = run.costs.iter().filter(|c| c.role != TEACHER_ROLE).collect();
    let ratio = |f: fn(&TrainingCost) -> f64| {
        (!teacher.is_empty() && !students.is_empty()).then(|| mean(&teacher, f) / mean(&students, f))
    };
    CostReport {
        jobs: run.costs.clone(),
        roles,
        sample_ratio: ratio(|c| c.samples as f64),
        wall_ratio: ratio(|c| c.wall_seconds),
    }
}
