use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spdz-gwas"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn binary")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Case and control genotypes plus a basis spanning the cases.
    fn new(cases: usize, controls: usize, snps: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Fixture { dir };
        let (n, c, m) = (cases.to_string(), controls.to_string(), snps.to_string());
        ok(&["synth", "--samples", &n, "--snps", &m, "--freq", "0.3", "--seed", "1", "--out", s(&f.path("case.csv"))]);
        ok(&["synth", "--samples", &c, "--snps", &m, "--freq", "0.3", "--seed", "2", "--out", s(&f.path("ctrl.csv"))]);
        ok(&["synth-basis", "--rank", &n, "--span", s(&f.path("case.csv")), "--seed", "3", "--out", s(&f.path("basis.csv"))]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run_args(&self) -> Vec<String> {
        ["run", "--case", "case.csv", "--basis", "basis.csv", "--controls", "ctrl.csv"]
            .iter()
            .map(|a| match *a {
                "case.csv" | "basis.csv" | "ctrl.csv" => s(&self.path(a)).to_string(),
                other => other.to_string(),
            })
            .collect()
    }

    fn report(&self, extra: &[&str]) -> Value {
        let mut args = self.run_args();
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        serde_json::from_slice(&ok(&refs).stdout).unwrap()
    }
}

#[test]
fn secure_run_matches_plaintext_oracle() {
    let f = Fixture::new(4, 12, 20);
    let secure = f.report(&["--tau", "0.8", "--reproducible"]);
    let plain = f.report(&["--tau", "0.8", "--plaintext-oracle"]);
    assert_eq!(secure["mode"], "secure");
    assert_eq!(plain["mode"], "plaintext-oracle");
    assert_eq!(secure["accepted"], plain["accepted"]);
    assert_eq!(secure["rejected"], plain["rejected"]);
    assert_eq!(secure["lambda"], plain["lambda"]);
    assert_eq!(secure["lambda_ok"], plain["lambda_ok"]);
    let total = secure["accepted"].as_array().unwrap().len() + secure["rejected"].as_array().unwrap().len();
    assert_eq!(total, 12);
    assert!(secure["triple_count"].as_u64().unwrap() > 0);
    assert_eq!(secure["runtime_ms"], 0);
}

#[test]
fn reports_and_transcripts_are_reproducible() {
    let f = Fixture::new(3, 5, 12);
    let go = |tag: &str| {
        let report = f.path(&format!("report-{tag}.json"));
        let transcript = f.path(&format!("transcript-{tag}.jsonl"));
        let mut args = f.run_args();
        for a in ["--tau", "0.8", "--reproducible", "--seed", "9", "--out", s(&report), "--transcript-out", s(&transcript)] {
            args.push(a.to_string());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
        (std::fs::read(report).unwrap(), std::fs::read(transcript).unwrap())
    };
    let (r1, t1) = go("a");
    let (r2, t2) = go("b");
    assert_eq!(r1, r2);
    assert!(!t1.is_empty());
    assert_eq!(t1, t2);

    let first: Value = serde_json::from_str(String::from_utf8_lossy(&t1).lines().next().unwrap()).unwrap();
    assert!(first.is_object());
}

#[test]
fn seed_changes_the_transcript_not_the_decisions() {
    let f = Fixture::new(3, 6, 12);
    let a = f.report(&["--tau", "0.8", "--seed", "1", "--reproducible"]);
    let b = f.report(&["--tau", "0.8", "--seed", "2", "--reproducible"]);
    assert_eq!(a["accepted"], b["accepted"]);
    assert_ne!(a["transcript_digest"], b["transcript_digest"]);
}

#[test]
fn parallel_controls_do_not_change_the_report() {
    let f = Fixture::new(3, 6, 12);
    let a = f.report(&["--tau", "0.8", "--reproducible", "--parallel-controls", "1"]);
    let b = f.report(&["--tau", "0.8", "--reproducible", "--parallel-controls", "3"]);
    assert_eq!(a, b);
}

#[test]
fn bad_flags_and_configs_exit_2() {
    assert_eq!(run(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["triples", "--mode", "three"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tua": 0.3}"#).unwrap();
    assert_eq!(run(&["show-config", "--config", s(&cfg)]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"tau": -0.5}"#).unwrap();
    assert_eq!(run(&["show-config", "--config", s(&cfg)]).status.code(), Some(2));
    assert_eq!(run(&["show-config", "--parties", "1"]).status.code(), Some(2));
}

#[test]
fn bad_inputs_exit_4() {
    let f = Fixture::new(2, 3, 8);
    std::fs::write(f.path("ctrl.csv"), "snp0,snp1\n0,1,2\n").unwrap();
    let args = f.run_args();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(run(&refs).status.code(), Some(4));

    // Genotype outside {0, 1, 2}.
    std::fs::write(f.path("ctrl.csv"), "snp0,snp1,snp2,snp3,snp4,snp5,snp6,snp7\n0,1,2,3,0,1,2,0\n").unwrap();
    assert_eq!(run(&refs).status.code(), Some(4));

    // Basis with the wrong dimension.
    let f = Fixture::new(2, 3, 8);
    std::fs::write(f.path("basis.csv"), "1,0\n0,1\n").unwrap();
    let args = f.run_args();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(run(&refs).status.code(), Some(4));
}

#[test]
fn triple_reuse_exits_3() {
    let out = run(&["triples", "--count", "2", "--reuse-demo"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["all_valid"], true);
}

#[test]
fn triples_report_in_both_modes() {
    for mode in ["single", "two"] {
        let dir = tempfile::tempdir().unwrap();
        let ledger = dir.path().join("ledger.jsonl");
        let out = ok(&["triples", "--count", "3", "--mode", mode, "--ledger", s(&ledger)]);
        let report: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["count"], 3);
        assert_eq!(report["all_valid"], true);
        assert_eq!(report["bits"], 256);
        assert!(report["modexp_per_triple"].as_f64().unwrap() > 0.0);
        assert!(!std::fs::read_to_string(&ledger).unwrap().is_empty());
    }
}

#[test]
fn groupgen_is_deterministic() {
    let a = ok(&["groupgen", "--bits", "64", "--seed", "5"]).stdout;
    let b = ok(&["groupgen", "--bits", "64", "--seed", "5"]).stdout;
    let c = ok(&["groupgen", "--bits", "64", "--seed", "6"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert!(doc.is_object());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(&path, &a).unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::json!({ "group_file": path }).to_string()).unwrap();
    let out = ok(&["triples", "--count", "2", "--config", s(&cfg)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["bits"], 64);
    assert_eq!(report["all_valid"], true);
}

#[test]
fn show_config_echoes_defaults() {
    let out = ok(&["show-config"]);
    let cfg: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["tau"], 0.3);
    assert_eq!(cfg["lambda_max"], 0.05);
    assert_eq!(cfg["parties"], 3);
    assert_eq!(cfg["fixed_point"]["k"], 32);
    assert_eq!(cfg["fixed_point"]["f"], 16);

    let out = ok(&["show-config", "--parties", "5", "--seed", "11"]);
    let cfg: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["parties"], 5);
    assert_eq!(cfg["seed"], 11);
}
