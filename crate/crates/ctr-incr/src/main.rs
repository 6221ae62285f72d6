use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ctr_incr::checkpoint::{load_checkpoint, save_checkpoint};
use ctr_incr::config::PipelineConfig;
use ctr_incr::dataset::{read_dataset, write_dataset};
use ctr_incr::pipeline::{measure_training_cost, model_hash, model_id, student_seed, teacher_seed, TEACHER_ROLE};
use ctr_incr::report::{comparison_table, read_jsonl, summary_table, write_run};
use ctr_incr::truth::{read_truth, write_truth};
use ctr_incr_core::metrics::{evaluate_window, EvalContext};
use ctr_incr_core::train::TrainReport;
use ctr_incr_core::world::{slice_window, HOUR};
use ctr_incr_core::{
    compare_regimes, generate_stream, precompute_soft_targets, train_student, train_teacher, Metric, MetricsReport,
    OptimizerState, Regime, Trained,
};

#[derive(Parser)]
#[command(name = "ctr-incr", version, about = "Incremental CTR training on a synthetic drifting stream")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an impression stream and its ground-truth sidecar.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// First simulated hour (inclusive).
        #[arg(long, default_value_t = 0)]
        start_hour: u64,
        /// Last simulated hour (exclusive); defaults to the schedule horizon.
        #[arg(long)]
        end_hour: Option<u64>,
    },
    /// Train a teacher on the history window ending at `--at-hour`.
    TrainTeacher {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        at_hour: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one student at `--at-hour` under a regime.
    TrainStudent {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        regime: Regime,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        at_hour: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach teacher soft targets to every record of a dataset.
    Annotate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full schedule and write every artifact into a directory.
    RunPipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the student period starting at `--at-hour`.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        at_hour: u64,
        /// Role recorded in the report.
        #[arg(long, default_value = "model")]
        label: String,
        /// Append the report to this file instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired comparison of two roles across metrics files.
    Compare {
        #[arg(long = "metrics", required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value = "log_loss")]
        metric: Metric,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_trained(path: &Path) -> Result<Trained> {
    let (model, opt) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let optimizer = opt.unwrap_or_else(|| OptimizerState::zeros_like(&model));
    Ok(Trained { model, optimizer, report: TrainReport::default() })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, truth, start_hour, end_hour } => {
            let cfg = load_config(config.as_deref())?;
            let end = end_hour.map_or(cfg.schedule.horizon(), |h| h * HOUR);
            if start_hour * HOUR >= end {
                bail!("empty range: start hour {start_hour} is not before end");
            }
            let (data, world) = generate_stream(&cfg.world, start_hour * HOUR, end)?;
            write_dataset(&out, &data)?;
            if let Some(t) = truth {
                write_truth(&t, &world)?;
            }
            eprintln!("wrote {} impressions to {}", data.len(), out.display());
        }
        Command::TrainTeacher { config, data, at_hour, out } => {
            let cfg = load_config(config.as_deref())?;
            let t = at_hour * HOUR;
            let Some(start) = t.checked_sub(cfg.schedule.teacher_window()) else {
                bail!("--at-hour {at_hour} is inside the first teacher window");
            };
            let stream = read_dataset(&data)?;
            let id = model_id(TEACHER_ROLE, t);
            let mut trained =
                train_teacher(slice_window(&stream, start, t), &cfg.train, teacher_seed(cfg.train.seed, t))?;
            trained.model.meta.config_hash = model_hash(cfg.hash(), &id);
            save_checkpoint(&out, &trained.model, Some(&trained.optimizer))?;
            eprintln!(
                "{id}: {} samples, epoch losses {:?}",
                trained.report.window_samples, trained.report.epoch_losses
            );
        }
        Command::TrainStudent { config, data, regime, teacher, at_hour, out } => {
            let cfg = load_config(config.as_deref())?;
            let t = at_hour * HOUR;
            let teacher = teacher.as_deref().map(load_trained).transpose()?;
            if regime.needs_teacher() && teacher.is_none() {
                bail!("regime {regime} needs --teacher");
            }
            let stream = read_dataset(&data)?;
            let window =
                if regime.warm_start() { cfg.schedule.student_window() } else { cfg.schedule.teacher_window() };
            let Some(start) = t.checked_sub(window) else {
                bail!("--at-hour {at_hour} is inside the first training window");
            };
            let w = slice_window(&stream, start, t);
            let (history, fresh) = if regime.warm_start() { (&[][..], w) } else { (w, &[][..]) };
            let id = model_id(regime.name(), t);
            let mut trained = train_student(
                regime,
                teacher.as_ref(),
                history,
                fresh,
                &cfg.train,
                &cfg.kd,
                student_seed(cfg.train.seed, t),
            )?;
            trained.model.meta.config_hash = model_hash(cfg.hash(), &id);
            save_checkpoint(&out, &trained.model, Some(&trained.optimizer))?;
            eprintln!(
                "{id}: {} samples, epoch losses {:?}",
                trained.report.window_samples, trained.report.epoch_losses
            );
        }
        Command::Annotate { config, data, teacher, out } => {
            let cfg = load_config(config.as_deref())?;
            let (model, _) = load_checkpoint(&teacher)?;
            let annotated = precompute_soft_targets(&model, &read_dataset(&data)?, cfg.kd.temperature)?;
            write_dataset(&out, &annotated)?;
        }
        Command::RunPipeline { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let run = ctr_incr::run_pipeline(&cfg)?;
            write_run(&out, &cfg, &run)?;
            print!("{}", summary_table(&run.reports));
            let cost = measure_training_cost(&run);
            if let (Some(s), Some(w)) = (cost.sample_ratio, cost.wall_ratio) {
                eprintln!("teacher/student samples {s:.2}, wall time {w:.2}");
            }
        }
        Command::Evaluate { config, data, truth, model, at_hour, label, out } => {
            let cfg = load_config(config.as_deref())?;
            let (m, _) = load_checkpoint(&model)?;
            let stream = read_dataset(&data)?;
            let world = read_truth(&truth)?;
            let t = at_hour * HOUR;
            let end = t + cfg.schedule.student_period();
            let id = model.file_stem().map_or_else(|| label.clone(), |s| s.to_string_lossy().into_owned());
            let ctx = EvalContext {
                regime: &label,
                model_id: &id,
                seed: cfg.world.seed,
                cycle_time: t,
                window_start: t,
                window_end: end,
                age_threshold: cfg.schedule.teacher_period(),
            };
            let report = evaluate_window(&m, slice_window(&stream, t, end), &world, &ctx)?;
            let line = serde_json::to_string(&report)? + "\n";
            match out {
                Some(p) => OpenOptions::new().create(true).append(true).open(&p)?.write_all(line.as_bytes())?,
                None => print!("{line}"),
            }
        }
        Command::Compare { metrics, a, b, metric, out } => {
            let mut reports: Vec<MetricsReport> = Vec::new();
            for p in &metrics {
                reports.extend(read_jsonl::<MetricsReport>(p).with_context(|| format!("reading {}", p.display()))?);
            }
            let table = compare_regimes(&reports, &a, &b, metric)?;
            emit(out.as_deref(), &comparison_table(&table))?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
