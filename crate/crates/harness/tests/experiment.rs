use std::path::Path;

use jointinf_harness::experiment::{sha256_hex, METRICS_FILE};
use jointinf_harness::{read_manifest, read_metrics, run_experiment, ExperimentConfig, MetricsRow};

fn run(toml: &str, out: &Path, parallel: usize) -> Vec<MetricsRow> {
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    run_experiment(&cfg, toml, out, parallel).unwrap().rows
}

fn mean_accuracy(rows: &[MetricsRow], n: usize) -> f64 {
    let accs: Vec<f64> = rows.iter().filter(|r| r.context_size == n).map(|r| r.accuracy.unwrap()).collect();
    accs.iter().sum::<f64>() / accs.len() as f64
}

#[test]
fn zero_shot_on_the_noiseless_task_is_perfect() {
    let out = tempfile::tempdir().unwrap();
    let rows = run("method = \"ZERO_SHOT\"\n[task]\nsource = \"fixture\"\nfixture = \"noiseless\"\n", out.path(), 1);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].accuracy, Some(1.0));
    assert_eq!(rows[0].objective_exact, Some(true));
}

#[test]
fn supervised_contexts_beat_zero_shot() {
    let out = tempfile::tempdir().unwrap();
    let task = "[task]\nsource = \"fixture\"\nfixture = \"reference\"\n";
    let zs = run(&format!("method = \"ZERO_SHOT\"\n{task}"), &out.path().join("zs"), 1);
    let sup = run(
        &format!("method = \"SUPERVISED_ICL\"\nseeds = [0, 1, 2]\n{task}[uicl]\ncontext_size = 8\n"),
        &out.path().join("sup"),
        1,
    );
    let zs_acc = zs[0].accuracy.unwrap();
    for row in &sup {
        assert!(row.accuracy.unwrap() >= zs_acc + 0.10, "{} vs zero-shot {zs_acc}", row.accuracy.unwrap());
    }
}

const SWEEP: &str = r#"
name = "determinism"
method = "UICL"
seeds = [0, 1]
master_seed = 42
[task]
source = "fixture"
fixture = "small"
[sweep]
context_size = [1, 4]
[uicl]
turns = 3
repeats = 3
objective_sequences = 200
"#;

#[test]
fn reruns_are_byte_identical_and_manifest_hashes_match() {
    let out = tempfile::tempdir().unwrap();
    let (a, b, c) = (out.path().join("a"), out.path().join("b"), out.path().join("c"));
    run(SWEEP, &a, 1);
    run(SWEEP, &b, 3);
    let metrics_a = std::fs::read(a.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics_a, std::fs::read(b.join(METRICS_FILE)).unwrap());

    // a rerun into the same directory resumes from the final checkpoints
    run(SWEEP, &a, 1);
    assert_eq!(metrics_a, std::fs::read(a.join(METRICS_FILE)).unwrap());

    let manifest = read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.config_sha256, sha256_hex(SWEEP.as_bytes()));
    assert_eq!(manifest.cells.len(), 4);
    let listed: Vec<&str> = manifest.files.iter().map(|f| f.path.as_str()).collect();
    for expected in ["metrics.csv", "timings.csv", "traces/uicl_n4_s1.csv", "predictions/uicl_n1_s0.csv", "checkpoints/uicl_n4_s0.json"] {
        assert!(listed.contains(&expected), "{expected} missing from {listed:?}");
    }
    for f in &manifest.files {
        let bytes = std::fs::read(a.join(&f.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
        assert_eq!(bytes.len() as u64, f.bytes);
    }

    // repeating the run from the manifest's embedded config
    let cfg = ExperimentConfig::from_toml(&manifest.config).unwrap();
    run_experiment(&cfg, &manifest.config, &c, 2).unwrap();
    let again = read_manifest(&c.join("manifest.json")).unwrap();
    for (x, y) in manifest.files.iter().zip(&again.files) {
        assert_eq!(x.path, y.path);
        if x.path != "timings.csv" {
            assert_eq!(x.sha256, y.sha256, "{}", x.path);
        }
    }
}

#[test]
fn adding_seeds_leaves_existing_cells_alone() {
    let out = tempfile::tempdir().unwrap();
    let small = run(SWEEP, &out.path().join("a"), 1);
    let more = run(&SWEEP.replace("seeds = [0, 1]", "seeds = [0, 1, 2]"), &out.path().join("b"), 1);
    for row in &small {
        let twin = more.iter().find(|r| r.cell == row.cell).unwrap();
        assert_eq!(row, twin);
    }
}

#[test]
fn failed_cells_do_not_stop_the_sweep() {
    let out = tempfile::tempdir().unwrap();
    // N = 16 equals M, which leaves no support pool for UICL
    let toml = SWEEP.replace("context_size = [1, 4]", "context_size = [16, 4]");
    let cfg = ExperimentConfig::from_toml(&toml).unwrap();
    let outcome = run_experiment(&cfg, &toml, out.path(), 2).unwrap();
    assert_eq!(outcome.num_failed(), 2);
    let rows = read_metrics(&out.path().join(METRICS_FILE)).unwrap();
    for r in &rows {
        if r.context_size == 16 {
            assert!(r.failed());
            assert!(r.error.as_deref().unwrap().contains("16"), "{:?}", r.error);
            assert_eq!(r.accuracy, None);
        } else {
            assert_eq!(r.status, "OK");
            assert!(r.accuracy.is_some());
        }
    }
}

#[test]
fn brute_force_and_uft_cells() {
    let out = tempfile::tempdir().unwrap();
    let task = "[task]\nsource = \"fixture\"\nfixture = \"oracle_m8\"\n";
    let bf = run(&format!("method = \"BRUTE_FORCE\"\n{task}[brute_force]\ncontext_size = 3\n"), &out.path().join("bf"), 1);
    let uft = run(
        &format!("method = \"UFT\"\n{task}[sweep]\ncontext_size = [3]\ngamma = [0.0]\n[uft]\niterations = 300\nlearning_rate = 0.05\n"),
        &out.path().join("uft"),
        1,
    );
    assert_eq!(bf[0].objective_exact, Some(true));
    assert!(uft[0].objective.unwrap() <= bf[0].objective.unwrap() + 1e-9);
    assert!(out.path().join("uft/traces/uft_n3_g0_s0.csv").exists());
    assert!(out.path().join("uft/checkpoints/uft_n3_g0_s0.json").exists());
    assert!(out.path().join("bf/checkpoints/brute_force_n3_s0.json").exists());
}

#[test]
fn n_scaling_holds_through_the_harness() {
    let out = tempfile::tempdir().unwrap();
    let task = "seeds = [0, 1, 2, 3, 4]\n[task]\nsource = \"fixture\"\nfixture = \"reference\"\n[sweep]\ncontext_size = [1, 8]\n";
    let uicl = run(&format!("method = \"UICL\"\n{task}"), &out.path().join("uicl"), 1);
    assert!(mean_accuracy(&uicl, 8) >= mean_accuracy(&uicl, 1) + 0.02);
    let uft = run(&format!("method = \"UFT\"\n{task}[uft]\niterations = 300\nlearning_rate = 0.05\n"), &out.path().join("uft"), 1);
    assert!(mean_accuracy(&uft, 8) >= mean_accuracy(&uft, 1) + 0.02);
}
