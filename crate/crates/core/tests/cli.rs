use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use lcq::cli::{run, Cli, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY};

/// Runs a subcommand in-process and returns its exit code and report.
fn exec(args: &[&str]) -> (i32, String) {
    let cli = match Cli::try_parse_from(std::iter::once("lcq").chain(args.iter().copied())) {
        Ok(c) => c,
        Err(e) => return (if e.use_stderr() { EXIT_USAGE } else { EXIT_OK }, e.to_string()),
    };
    let mut out = String::new();
    match run(&cli.command, &mut out) {
        Ok(()) => (EXIT_OK, out),
        Err(e) => (e.exit_code(), format!("{out}{e}")),
    }
}

fn bin(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_lcq")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMOKE: &str = "\
dataset = synth
arch = mlp
hidden = 16
synth_n = 240
synth_test_n = 60
epochs = 2
batch = 20
lr_w = 0.05
lr_q = 0.01
";

#[test]
fn lut_size_matches_the_table_sizes() {
    for (o, want) in [("8", "42.0"), ("6", "31.5"), ("4", "21.0")] {
        let (code, out) = exec(&["lut", "size", "--bw", "3", "--ba", "3", "--obw", o, "--oba", o]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().next(), Some(want));
    }
    let (_, out) = exec(&["lut", "size", "--bw", "3", "--ba", "3", "--obw", "8", "--oba", "8", "--verbose"]);
    assert!(out.contains("elements: 21"), "{out}");
    let out = bin(&["lut", "size", "--bw", "3", "--ba", "3", "--obw", "8", "--oba", "8"]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "42.0");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(exec(&["lut", "size", "--bw", "9", "--ba", "3", "--obw", "8", "--oba", "8"]).0, EXIT_USAGE);
    assert_eq!(exec(&["train", "--config", "/nonexistent/lcq.cfg"]).0, EXIT_USAGE);
    assert_eq!(exec(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(bin(&["train", "--config", "/nonexistent/lcq.cfg"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(bin(&["--no-such-flag"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(bin(&["--help"]).status.code(), Some(EXIT_OK));
    assert_eq!(bin(&["--version"]).status.code(), Some(EXIT_OK));
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let (code, out) = exec(&["eval", "--checkpoint", "/nonexistent/best.lcqc"]);
    assert_eq!(code, EXIT_RUNTIME, "{out}");
    assert_eq!(bin(&["lut", "export", "--checkpoint", "/nonexistent/best.lcqc", "--out", "/tmp/x"]).status.code(), Some(EXIT_RUNTIME));
}

#[test]
fn lattice_sweep_passes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lut.csv");
    let (code, out) = exec(&["lut", "check", "--out", s(&csv)]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 22);
}

#[test]
fn train_eval_export_check_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.cfg");
    std::fs::write(&cfg, SMOKE).unwrap();
    let mut runs = Vec::new();
    for method in ["lcq", "uniform", "lcq-no-lwn", "float"] {
        let run_dir = dir.path().join(method);
        let (code, out) = exec(&[
            "train", "--config", s(&cfg), "--seed", "3", "--bits", "3/3", "--method", method, "--out", s(&run_dir),
        ]);
        assert_eq!(code, EXIT_OK, "{out}");
        let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1 + 2 * 2);
        assert!(metrics.starts_with("epoch,split,loss,top1,lr_w,lr_q"));
        runs.push(run_dir);
    }

    let ck = runs[0].join("best.lcqc");
    let curves = dir.path().join("curves");
    let (code, out) = exec(&["eval", "--checkpoint", s(&ck), "--emit-curves", s(&curves), "--curve-points", "8"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("max relative logit difference"), "{out}");
    let mut n_curves = 0;
    for entry in std::fs::read_dir(&curves).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 2 * 16, "{header}");
        n_curves += 1;
    }
    assert!(n_curves > 0);

    let tables = dir.path().join("tables");
    let (code, out) = exec(&["lut", "export", "--checkpoint", s(&ck), "--out", s(&tables)]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(tables.join("model.lcqe").is_file());
    let check_csv = dir.path().join("check.csv");
    let (code, out) = exec(&["lut", "check", "--checkpoint", s(&ck), "--dir", s(&tables), "--out", s(&check_csv)]);
    assert_eq!(code, EXIT_OK, "{out}");

    // A damaged table must be reported as a verification failure.
    let lut_file = std::fs::read_dir(&tables)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "lut"))
        .unwrap();
    let mut bytes = std::fs::read(&lut_file).unwrap();
    let last_entry = bytes.len() - 9;
    bytes[last_entry] ^= 1;
    std::fs::write(&lut_file, bytes).unwrap();
    let (code, out) = exec(&["lut", "check", "--checkpoint", s(&ck), "--dir", s(&tables), "--out", s(&check_csv)]);
    assert_eq!(code, EXIT_VERIFY, "{out}");

    let report_csv = dir.path().join("report.csv");
    let mut args = vec!["report", "--out", s(&report_csv)];
    args.extend(runs.iter().map(|p| s(p)));
    let (code, out) = exec(&args);
    assert_eq!(code, EXIT_OK, "{out}");
    let text = std::fs::read_to_string(&report_csv).unwrap();
    let methods: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["float", "lcq", "uniform", "lcq-no-lwn"]);
}

#[test]
fn gradcheck_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let (code, out) = exec(&["gradcheck", "--seed", "2", "--out", s(&csv)]);
    assert_eq!(code, EXIT_OK, "{out}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("operation,max_rel_err,n_points,tolerance"), "{text}");
    assert!(!out.contains("FAIL"));
}
