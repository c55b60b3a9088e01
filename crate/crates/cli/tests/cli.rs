use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_CONFIG: &str = r#"
seed = 3
initial_hpo_budget = 2
adaptation_hpo_budget = 2
hpo_n_init = 2
window_stride = 4

[search_space]
learning_rate_choices = [0.01]
dropout_rate_choices = [0.0, 0.1]
n_units_choices = [4, 8]
structural_frozen = false

[train]
epochs = 5
incremental_epochs = 2

[detector]
load_bandwidth = 0.15

[duration_model]
kind = "synthetic"
secs_per_window_epoch = 0.01
"#;

const PROFILE: &str = r#"
noise_sd = 0.1

[profile]
day_level_sd = 0.1

[[events]]
day = 15
kind = "mean-shift"
magnitude = 0.8
"#;

fn driftcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftcast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = driftcast(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        std::fs::write(ws.path("run.toml"), TINY_CONFIG).unwrap();
        std::fs::write(ws.path("profile.toml"), PROFILE).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Synthetic CSV ingested into a series file; returns the series path.
    fn series(&self, name: &str, seed: u64) -> PathBuf {
        let csv = self.path(&format!("{name}.csv"));
        let series = self.path(&format!("{name}.json"));
        ok(&["synth", "--profile", s(&self.path("profile.toml")), "--seed", &seed.to_string(), "--days", "20", "--out", s(&csv)]);
        ok(&["ingest", s(&csv), "--out", s(&series)]);
        series
    }

    fn run(&self, series: &Path, mode: &[&str], out: &str) -> PathBuf {
        let out = self.path(out);
        let cfg = self.path("run.toml");
        let mut args = vec!["run", "--config", s(&cfg), "--input", s(series), "--out", s(&out)];
        args.extend_from_slice(mode);
        ok(&args);
        out
    }
}

#[test]
fn ingest_prints_segmentation_report() {
    let ws = Workspace::new();
    let csv = ws.path("a.csv");
    ok(&["synth", "--seed", "1", "--days", "3", "--out", s(&csv)]);
    let out = ok(&["ingest", s(&csv), "--out", s(&ws.path("a.json"))]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["n_days"], 3);
    assert_eq!(report["readings_per_day"], 144);
}

#[test]
fn end_to_end_run_compare_and_report() {
    let ws = Workspace::new();
    let series = ws.series("house", 1);
    let baseline = ws.run(&series, &["--mode", "baseline"], "baseline.json");
    let passive = ws.run(&series, &["--mode", "passive"], "passive.json");
    let active = ws.run(&series, &["--mode", "active", "--tau", "0.15"], "active.json");

    let p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&passive).unwrap()).unwrap();
    assert_eq!(p["adaptation_count"], p["split"]["test_days"]);
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&active).unwrap()).unwrap();
    assert_eq!(a["mode"]["tau"], 0.15);

    let table = ws.path("table.json");
    let out = ok(&["compare", "--baseline", s(&baseline), "--candidate", s(&passive), "--candidate", s(&active), "--out", s(&table)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("active(0.15)"));
    let t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&table).unwrap()).unwrap();
    assert_eq!(t["rows"].as_array().unwrap().len(), 2);

    let text = ok(&["report", "--in", s(&passive)]);
    assert!(!text.stdout.is_empty());
    let csv = String::from_utf8(ok(&["report", "--in", s(&passive), "--format", "csv"]).stdout).unwrap();
    assert_eq!(csv.lines().count(), 1 + p["split"]["test_days"].as_u64().unwrap() as usize);
}

#[test]
fn repeated_runs_write_identical_reports() {
    let ws = Workspace::new();
    let series = ws.series("house", 2);
    let a = ws.run(&series, &["--mode", "active", "--tau", "0.1"], "a.json");
    let b = ws.run(&series, &["--mode", "active", "--tau", "0.1"], "b.json");
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn parallel_inputs_match_sequential_ones() {
    let ws = Workspace::new();
    let (h1, h2) = (ws.series("h1", 4), ws.series("h2", 5));
    let cfg = ws.path("run.toml");
    for (jobs, dir) in [("1", "seq"), ("2", "par")] {
        let out = ws.path(dir);
        ok(&["run", "--config", s(&cfg), "--mode", "passive", "--input", s(&h1), "--input", s(&h2), "--jobs", jobs, "--out", s(&out)]);
    }
    for name in ["h1.passive.json", "h2.passive.json"] {
        let seq = std::fs::read(ws.path("seq").join(name)).unwrap();
        assert_eq!(seq, std::fs::read(ws.path("par").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    let cfg = ws.path("run.toml");
    let code = |out: Output| out.status.code().unwrap();

    let missing = driftcast(&["run", "--config", s(&cfg), "--mode", "baseline", "--input", s(&ws.path("none.json"))]);
    assert_eq!(code(missing), 2);

    let bad_csv = ws.path("bad.csv");
    std::fs::write(&bad_csv, "timestamp,consumption_kwh\nyesterday,1.0\n").unwrap();
    assert_eq!(code(driftcast(&["ingest", s(&bad_csv), "--out", s(&ws.path("x.json"))])), 2);

    let series = ws.series("house", 6);
    assert_eq!(code(driftcast(&["run", "--config", s(&cfg), "--mode", "active", "--input", s(&series)])), 3);
    assert_eq!(code(driftcast(&["run", "--config", s(&cfg), "--mode", "passive", "--tau", "0.1", "--input", s(&series)])), 3);

    let typo = ws.path("typo.toml");
    std::fs::write(&typo, "sede = 3\n").unwrap();
    assert_eq!(code(driftcast(&["run", "--config", s(&typo), "--input", s(&series)])), 3);

    let other = ws.series("other", 7);
    let base = ws.run(&series, &["--mode", "baseline"], "base.json");
    let cand = ws.run(&other, &["--mode", "passive"], "cand.json");
    assert_eq!(code(driftcast(&["compare", "--baseline", s(&base), "--candidate", s(&cand)])), 2);
}
