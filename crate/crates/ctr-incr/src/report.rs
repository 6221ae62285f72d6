//! Line-delimited JSON records and tab-separated summary tables.
//!
//! A run directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | canonical rendering of the config |
//! | `registry.jsonl` | one [`RegistryEntry`](crate::pipeline::RegistryEntry) per deployment |
//! | `metrics.jsonl` | one [`MetricsReport`] per model and evaluation window |
//! | `access.jsonl` | every window handed to training or evaluation |
//! | `summary.tsv` | per-role means over all evaluation windows |
//! | `checkpoints/<model_id>.ckpt` | every deployed model with its optimizer state |
//! | `costs.jsonl` | samples and wall time per training job |
//!
//! Everything except `costs.jsonl` is byte-identical across repeated runs.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ctr_incr_core::{ComparisonTable, Metric, MetricsReport};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::checkpoint::save_checkpoint;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::{measure_training_cost, PipelineRun};

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::Corrupt(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (k, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Malformed { line: k + 1, reason: e.to_string() })?);
    }
    Ok(items)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Per-role means over every report, roles in first-seen order.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        if !groups.contains_key(r.regime.as_str()) {
            order.push(&r.regime);
        }
        groups.entry(&r.regime).or_default().push(r);
    }
    let mut s = String::from("role\twindows\texamples");
    for m in Metric::ALL {
        s.push('\t');
        s.push_str(m.name());
    }
    s.push('\n');
    for role in order {
        let rs = &groups[role];
        let n: usize = rs.iter().map(|r| r.n_examples).sum();
        s.push_str(&format!("{role}\t{}\t{n}", rs.len()));
        for m in Metric::ALL {
            let vals: Vec<f64> = rs.iter().filter_map(|r| m.value(r)).collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            s.push('\t');
            s.push_str(&cell(mean));
        }
        s.push('\n');
    }
    s
}

/// One row per seed plus an `all` row with the sign counts.
pub fn comparison_table(t: &ComparisonTable) -> String {
    let mut s = String::from("a\tb\tmetric\tseed\tpairs\tmean_delta\tb_lower\tb_higher\tties\n");
    for d in &t.per_seed {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t\t\t\n",
            t.a,
            t.b,
            t.metric.name(),
            d.seed,
            d.n_pairs,
            cell(d.mean_delta)
        ));
    }
    let pairs: usize = t.per_seed.iter().map(|d| d.n_pairs).sum();
    s.push_str(&format!(
        "{}\t{}\t{}\tall\t{pairs}\t{}\t{}\t{}\t{}\n",
        t.a,
        t.b,
        t.metric.name(),
        cell(t.mean_delta),
        t.b_lower,
        t.b_higher,
        t.ties
    ));
    s
}

/// Writes every artifact of `run` into `dir`, creating it if needed.
pub fn write_run(dir: impl AsRef<Path>, cfg: &PipelineConfig, run: &PipelineRun) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    write_jsonl(dir.join("registry.jsonl"), run.registry.entries())?;
    write_jsonl(dir.join("metrics.jsonl"), &run.reports)?;
    write_jsonl(dir.join("access.jsonl"), &run.access_log)?;
    fs::write(dir.join("summary.tsv"), summary_table(&run.reports))?;
    for m in &run.models {
        save_checkpoint(
            dir.join("checkpoints").join(format!("{}.ckpt", m.model_id)),
            &m.trained.model,
            Some(&m.trained.optimizer),
        )?;
    }
    write_jsonl(dir.join("costs.jsonl"), &measure_training_cost(run).jobs)?;
    Ok(())
}
