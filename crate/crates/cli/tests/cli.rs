use std::path::Path;
use std::process::{Command, Output};

use sparselab::harness::{model_spec, ExperimentConfig};
use sparselab::sparsity::solve_erk_plan;

const TINY: [&str; 8] = [
    "--synth-per-class",
    "10",
    "--synth-test-per-class",
    "5",
    "--batch-size",
    "32",
    "--epochs",
    "2",
];

fn sparselab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparselab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sparselab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn set_run_reports_the_erk_allocation() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--method", "set", "--sparsity", "0.8", "--seed", "1"];
    args.extend(TINY);
    args.extend(["--out", path(&run)]);
    let stdout = ok(&args);
    assert!(stdout.starts_with("epoch=1 "), "{stdout}");

    let report = ok(&["report", "--run", path(&run)]);
    let cfg = ExperimentConfig::from_file(run.join("manifest")).unwrap();
    let spec = model_spec(&cfg, &[1, 8, 8]).unwrap();
    let plan = solve_erk_plan(&spec.layers, 0.2).unwrap();
    let nonzeros: Vec<usize> = report
        .lines()
        .skip(1)
        .take(plan.counts.len())
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(nonzeros, plan.counts);
    assert!(report.contains("forward_flops="));
    assert!(report.contains("sparse_train"));
}

#[test]
fn full_sparsity_is_rejected_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sparselab(&["train", "--method", "set", "--sparsity", "1.0", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sparsity"));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("f.cfg");
    std::fs::write(
        &cfg,
        "method = snip\nsparsity = 0.5\nepochs = 10\nsynth_per_class = 10\nsynth_test_per_class = 5\n",
    )
    .unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", path(&cfg), "--epochs", "3", "--out", path(&run)]);
    let manifest = ExperimentConfig::from_file(run.join("manifest")).unwrap();
    assert_eq!(manifest.epochs, 3);
    assert_eq!(manifest.sparsity, 0.5);
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
}

#[test]
fn bad_config_files_fail_with_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "epochz = 3\n").unwrap();
    let out = sparselab(&["train", "--config", path(&cfg), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    let missing = tmp.path().join("missing.cfg");
    let out = sparselab(&["train", "--config", path(&missing), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sweep_spawns_children_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let mut args = vec!["sweep", "--method", "random", "--sparsity", "0.5"];
    args.extend(TINY);
    args.extend(["--sweep-sparsity", "0.5,0.9", "--seeds", "0,1", "--jobs", "2", "--out", path(&out)]);
    ok(&args);
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let lines: Vec<&str> = agg.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("sparsity,data_ratio,severity,runs,"));
    assert!(lines[1..].iter().all(|l| l.split(',').nth(3) == Some("2")));
    for cell in ["cell0_seed0", "cell0_seed1", "cell1_seed0", "cell1_seed1"] {
        assert!(out.join(cell).join("metrics.csv").is_file(), "{cell}");
    }
    assert!(out.join("heatmap.csv").is_file());
}

#[test]
fn attack_eval_reloads_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--method", "gmp", "--sparsity", "0.5"];
    args.extend(TINY);
    args.extend(["--out", path(&run)]);
    ok(&args);
    let stdout = ok(&["attack-eval", "--run", path(&run), "--steps", "3", "--seed", "5"]);
    let again = ok(&["attack-eval", "--run", path(&run), "--steps", "3", "--seed", "5"]);
    assert_eq!(stdout, again);
    let line = stdout.lines().find(|l| l.starts_with("samples=")).unwrap();
    let field = |k: &str| -> f64 {
        line.split_whitespace()
            .find_map(|f| f.strip_prefix(k))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(field("samples="), 50.0);
    assert!(field("adv_acc=") <= field("clean_acc="));
}

#[test]
fn data_tools_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--synth-per-class", "6", "--synth-test-per-class", "2", "--out", path(&data)]);
    let scores = tmp.path().join("scores.csv");
    ok(&["score", "--data", path(&data), "--epochs", "1", "--out", path(&scores)]);
    let text = std::fs::read_to_string(&scores).unwrap();
    assert_eq!(text.lines().count(), 61);

    let hard = tmp.path().join("hard");
    ok(&["filter", "--input", path(&data), "--scores", path(&scores), "--keep-frac", "0.5", "--out", path(&hard)]);
    let noisy = tmp.path().join("noisy");
    ok(&[
        "corrupt", "--input", path(&hard), "--kind", "gaussian_noise", "--severity", "3", "--out", path(&noisy),
    ]);
    let run = tmp.path().join("run");
    ok(&[
        "train", "--data", path(&noisy), "--method", "uniform", "--sparsity", "0.5", "--epochs", "1", "--out",
        path(&run),
    ]);
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}
