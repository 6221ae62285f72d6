use std::path::Path;
use std::process::Command;

use ctr_incr::checkpoint::load_checkpoint;
use ctr_incr::dataset::read_dataset;
use ctr_incr::report::read_jsonl;
use ctr_incr_core::MetricsReport;

const CONFIG: &str = r#"
[world]
n_items_initial = 20
n_publishers = 4
n_user_segments = 3
impressions_per_hour = 80
base_ctr = 0.1
seed = 2

[schedule]
teacher_window_hours = 24

[train]
hidden = [6]
embedding_dim = 3

[kd]
alpha = 0.5
temperature = 2.0

[regimes]
enabled = ["ws-only", "ws-kd"]
"#;

fn cli(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ctr-incr")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("c.toml"), CONFIG).unwrap();
    cli(d, &["generate", "--config", "c.toml", "--out", "data.tsv", "--truth", "truth.json"]);
    assert_eq!(read_dataset(d.join("data.tsv")).unwrap().len(), 48 * 80);

    cli(d, &["train-teacher", "--config", "c.toml", "--data", "data.tsv", "--at-hour", "24", "--out", "t.ckpt"]);
    let args = ["train-student", "--config", "c.toml", "--data", "data.tsv", "--teacher", "t.ckpt", "--at-hour", "28"];
    cli(d, &[&args[..], &["--regime", "ws-kd", "--out", "s.ckpt"]].concat());
    let (teacher, _) = load_checkpoint(d.join("t.ckpt")).unwrap();
    let (student, opt) = load_checkpoint(d.join("s.ckpt")).unwrap();
    assert_eq!(student.meta.teacher_hash, teacher.meta.config_hash);
    assert!(opt.is_some());

    cli(d, &["annotate", "--config", "c.toml", "--data", "data.tsv", "--teacher", "t.ckpt", "--out", "soft.tsv"]);
    assert!(read_dataset(d.join("soft.tsv")).unwrap().iter().all(|i| i.soft_target.is_some()));

    for (model, label) in [("t.ckpt", "teacher"), ("s.ckpt", "ws-kd")] {
        let eval = ["evaluate", "--config", "c.toml", "--data", "data.tsv", "--truth", "truth.json", "--at-hour", "28"];
        cli(d, &[&eval[..], &["--model", model, "--label", label, "--out", "m.jsonl"]].concat());
    }
    let reports: Vec<MetricsReport> = read_jsonl(d.join("m.jsonl")).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].n_examples, 4 * 80);
    let table = cli(d, &["compare", "--metrics", "m.jsonl", "--a", "teacher", "--b", "ws-kd", "--metric", "log_loss"]);
    assert!(table.starts_with("a\tb\tmetric\tseed"));
    assert!(table.lines().last().unwrap().starts_with("teacher\tws-kd\tlog_loss\tall\t1\t"));

    let summary = cli(d, &["run-pipeline", "--config", "c.toml", "--out", "run"]);
    assert!(summary.lines().next().unwrap().starts_with("role\t"));
    for f in ["registry.jsonl", "metrics.jsonl", "summary.tsv", "access.jsonl", "costs.jsonl", "config.toml"] {
        assert!(d.join("run").join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(d.join("run/checkpoints")).unwrap().count(), 13);
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.toml"), "[schedule]\nstudent_period_hours = 5\n").unwrap();
    for args in [
        &["run-pipeline", "--config", "bad.toml", "--out", "x"][..],
        &["train-student", "--data", "missing.tsv", "--regime", "ws-kd", "--at-hour", "400", "--out", "s.ckpt"][..],
        &["compare", "--metrics", "missing.jsonl", "--a", "a", "--b", "b"][..],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_ctr-incr")).current_dir(d).args(args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}
