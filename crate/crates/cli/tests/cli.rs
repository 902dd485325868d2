use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn xmc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = xmc(args, cwd);
    assert!(
        out.status.success(),
        "xmc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text).unwrap()
}

/// Tiny deterministic data set: label `l` lights up features `3l..3l+3`.
fn write_data(path: &Path, n: usize, offset: usize) {
    let (labels, dim) = (12, 40);
    let mut s = format!("{n} {dim} {labels}\n");
    for i in 0..n {
        let l = (i * 7 + offset) % labels;
        let noise = 36 + (i + offset) % 4;
        let mut feats = [(3 * l, 1.0), (3 * l + 1, 0.8), (3 * l + 2, 0.6), (noise, 0.3)];
        feats.sort_by_key(|f| f.0);
        let feats: Vec<String> = feats.iter().map(|(j, v)| format!("{j}:{v}")).collect();
        let mut lab = vec![l];
        if i % 3 == 0 {
            lab.push((l + 1) % labels);
            lab.sort();
        }
        let lab: Vec<String> = lab.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{} {}", lab.join(","), feats.join(" ")).unwrap();
    }
    fs::write(path, s).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_data(&dir.path().join("train.txt"), 240, 0);
        write_data(&dir.path().join("test.txt"), 60, 5);
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let mut args = vec!["train", "--train", "train.txt", "-o", out, "-B", "2", "--max-leaf", "3"];
        args.extend_from_slice(extra);
        ok(&args, self.path());
    }
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_model_directory_has_every_layer() {
    let f = Fixture::new();
    f.train("m", &[]);
    let meta = json(&fs::read_to_string(f.path().join("m/meta.json")).unwrap());
    let depth = meta["depth"].as_u64().unwrap();
    assert!(depth >= 2);
    for t in 1..=depth {
        assert!(f.path().join(format!("m/C_{t}.bin")).exists());
        assert!(f.path().join(format!("m/W_{t}.bin")).exists());
    }
    assert_eq!(meta["features_normalized"], true);
    assert_eq!(meta["config"]["branching"], 2);
    assert_eq!(meta["config"]["scheme"], "single");
}

#[test]
fn boosted_bagging_records_members_and_alpha() {
    let f = Fixture::new();
    f.train("e", &["--scheme", "boosted-bagging", "-M", "10", "--alpha", "0.5"]);
    let meta = json(&fs::read_to_string(f.path().join("e/ensemble.json")).unwrap());
    assert_eq!(meta["members"], 10);
    assert_eq!(meta["alpha"], 0.5);
    assert_eq!(meta["scheme"], "boosted-bagging");
    assert_eq!(meta["weights"].as_array().unwrap().len(), 10);
    assert!(f.path().join("e/member_009/meta.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let f = Fixture::new();
    f.train("a", &["--scheme", "bagging", "-M", "3", "--seed", "4", "--threads", "1"]);
    f.train("b", &["--scheme", "bagging", "-M", "3", "--seed", "4", "--threads", "3"]);
    assert_eq!(files(&f.path().join("a")), files(&f.path().join("b")));
    for (model, out, threads) in [("a", "ra.tsv", "1"), ("b", "rb.tsv", "4")] {
        ok(&["uncertainty", "--model", model, "--test", "test.txt", "-o", out, "--threads", threads], f.path());
    }
    assert_eq!(fs::read(f.path().join("ra.tsv")).unwrap(), fs::read(f.path().join("rb.tsv")).unwrap());
    assert_eq!(
        fs::read(f.path().join("ra.tsv.meta.json")).unwrap(),
        fs::read(f.path().join("rb.tsv.meta.json")).unwrap()
    );
}

#[test]
fn predictions_cover_every_instance_and_full_width_is_exhaustive() {
    let f = Fixture::new();
    f.train("m", &["--scheme", "bagging", "-M", "2"]);
    ok(&["predict", "--model", "m", "--test", "test.txt", "-o", "p.txt"], f.path());
    let text = fs::read_to_string(f.path().join("p.txt")).unwrap();
    assert_eq!(text.lines().count(), 60);
    let side = json(&fs::read_to_string(f.path().join("p.txt.meta.json")).unwrap());
    assert_eq!((side["config"]["beam"].as_u64(), side["config"]["top_k"].as_u64()), (Some(50), Some(100)));
    assert!(side["software_version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));

    ok(&["predict", "--model", "m", "--test", "test.txt", "-o", "full.txt", "--full-width", "-k", "5"], f.path());
    ok(&["predict", "--model", "m", "--test", "test.txt", "-o", "ex.txt", "--exhaustive", "-k", "5"], f.path());
    assert_eq!(fs::read(f.path().join("full.txt")).unwrap(), fs::read(f.path().join("ex.txt")).unwrap());
}

#[test]
fn uncertainty_report_and_exact_comparison() {
    let f = Fixture::new();
    f.train("e", &["--scheme", "bagging", "-M", "3"]);
    let summary = ok(
        &["uncertainty", "--model", "e", "--test", "test.txt", "-o", "r.tsv", "-b", "2", "-k", "3", "--compare-exact"],
        f.path(),
    );
    let s = json(&summary);
    assert!(s["max_label_tu_diff"].as_f64().unwrap() >= 0.0);
    let report = fs::read_to_string(f.path().join("r.tsv")).unwrap();
    let header: Vec<&str> = report.lines().next().unwrap().split('\t').collect();
    for col in ["pv", "tu", "ku"] {
        assert!(header.contains(&col));
    }
    assert_eq!(report.lines().filter(|l| l.split('\t').nth(1) == Some("all")).count(), 60);

    let refused = xmc(
        &["uncertainty", "--model", "e", "--test", "test.txt", "-o", "x.tsv", "--mode", "exact", "--max-exact-labels", "5"],
        f.path(),
    );
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--max-exact-labels"));
}

#[test]
fn eval_tasks_emit_metrics() {
    let f = Fixture::new();
    f.train("e", &["--scheme", "bagging", "-M", "3"]);
    ok(&["predict", "--model", "e", "--test", "test.txt", "-o", "p.txt"], f.path());
    ok(&["uncertainty", "--model", "e", "--test", "test.txt", "-o", "r.tsv"], f.path());
    let rank = json(&ok(&["eval", "--task", "rank", "--truth", "test.txt", "--predictions", "p.txt"], f.path()));
    for key in ["P@1", "P@3", "P@5", "R@1", "R@3", "R@5"] {
        let v = rank[key].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&v), "{key} = {v}");
    }
    assert!(rank["P@1"].as_f64().unwrap() > 50.0);
    let miscls = json(&ok(
        &["eval", "--task", "miscls", "--truth", "test.txt", "--predictions", "p.txt", "--report", "r.tsv", "--metric", "pv"],
        f.path(),
    ));
    assert!(miscls.get("mean_auroc").is_some());
    let skipped = miscls["skipped_single_class"].as_u64().unwrap();
    assert_eq!(miscls["evaluated"].as_u64().unwrap() + skipped, 60);

    ok(&["uncertainty", "--model", "e", "--test", "train.txt", "-o", "r2.tsv"], f.path());
    let ood = json(&ok(
        &["eval", "--task", "ood", "--report", "r.tsv", "--ood-report", "r2.tsv", "--metric", "joint-energy"],
        f.path(),
    ));
    let a = ood["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&a));
}

#[test]
fn bench_reports_timings_and_sweeps() {
    let f = Fixture::new();
    f.train("m", &[]);
    let t = json(&ok(&["bench", "--model", "m", "--test", "test.txt", "--limit", "10"], f.path()));
    for key in ["naive_seconds", "beam_seconds", "speedup"] {
        assert!(t[key].as_f64().unwrap() >= 0.0);
    }
    let refused = xmc(&["bench", "--model", "m", "--test", "test.txt", "--max-exact-labels", "4"], f.path());
    assert_eq!(refused.status.code(), Some(2));
    let sweep = json(&ok(&["bench", "--sweep", "--sizes", "64:2,256:4,1024:5", "--queries", "5", "--reps", "1"], f.path()));
    assert_eq!(sweep["points"].as_array().unwrap().len(), 3);
    assert!(sweep["fits"]["beam_vs_ln_l"]["r2"].is_number());
}

#[test]
fn flags_override_config_file_over_defaults() {
    let f = Fixture::new();
    f.train("m", &[]);
    fs::write(f.path().join("cfg.json"), r#"{"beam": 7, "top_k": 4}"#).unwrap();
    ok(&["predict", "--config", "cfg.json", "--model", "m", "--test", "test.txt", "-o", "a.txt"], f.path());
    ok(&["predict", "--config", "cfg.json", "-b", "9", "--model", "m", "--test", "test.txt", "-o", "b.txt"], f.path());
    let a = json(&fs::read_to_string(f.path().join("a.txt.meta.json")).unwrap());
    let b = json(&fs::read_to_string(f.path().join("b.txt.meta.json")).unwrap());
    assert_eq!((a["config"]["beam"].as_u64(), a["config"]["top_k"].as_u64()), (Some(7), Some(4)));
    assert_eq!((b["config"]["beam"].as_u64(), b["config"]["top_k"].as_u64()), (Some(9), Some(4)));
    assert_eq!(a["config"]["alpha"], 0.5);
    let line = fs::read_to_string(f.path().join("a.txt")).unwrap();
    assert_eq!(line.lines().next().unwrap().split('\t').count(), 4);

    fs::write(f.path().join("bad.json"), r#"{"beem": 7}"#).unwrap();
    let out = xmc(&["predict", "--config", "bad.json", "--model", "m", "--test", "test.txt", "-o", "c.txt"], f.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    assert_eq!(xmc(&["no-such-command"], f.path()).status.code(), Some(2));
    assert_eq!(xmc(&["train", "--train", "train.txt"], f.path()).status.code(), Some(2));
    assert_eq!(xmc(&["train", "--train", "train.txt", "-o", "m", "--alpha", "2"], f.path()).status.code(), Some(2));
    fs::write(f.path().join("broken.txt"), "2 3 2\n0 9:1.0\n").unwrap();
    let out = xmc(&["train", "--train", "broken.txt", "-o", "m"], f.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert_eq!(xmc(&["predict", "--model", "missing", "--test", "test.txt", "-o", "p"], f.path()).status.code(), Some(3));
    let v = xmc(&["--version"], f.path());
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}
