use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use froglab_cli::manifest::Status;
use froglab_cli::{emit_report, parse_config, run_experiment, CliError, ExperimentConfig, RunManifest};

const SMALL: &str = r#"
master_seed = 2024

[group]
rank = 3

[[experiments]]
kind = "walk_diagnostics"
heat_kernel_n = [10, 40]
heat_kernel_slope = -1.5
heat_kernel_slope_tolerance = 0.5
range_n = 300
range_replicas = 64
exit_n = 64
exit_t_values = [1.0, 1.5, 2.0]
exit_replicas = 500

[[experiments]]
kind = "frog_tails"
target = [2, 0, 0]
horizon = 20
replicas = 300

[[experiments]]
kind = "linear_growth"
direction = [1, 0, 0]
ks = [2, 4, 8]
replicas = 40
horizon = 30

[[experiments]]
kind = "shape"
horizons = [8, 24]
seeds = 5
fit_seeds = 2
phi_k_values = [2, 3]
phi_replicas = 8
write_records = true

[[experiments]]
kind = "symmetry"
horizon = 12
seeds = 3
"#;

fn config(text: &str) -> ExperimentConfig {
    parse_config(text).unwrap()
}

/// Every listed file except the timing-bearing manifest, with its bytes.
fn result_files(dir: &Path, manifest: &RunManifest) -> BTreeMap<String, Vec<u8>> {
    manifest.files.iter().map(|f| (f.path.clone(), fs::read(dir.join(&f.path)).unwrap())).collect()
}

#[test]
fn same_config_twice_gives_identical_files() {
    let c = config(SMALL);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_experiment(&c, a.path()).unwrap();
    let mb = run_experiment(&c, b.path()).unwrap();
    assert_eq!(ma.files, mb.files);
    assert_eq!(ma.experiments, mb.experiments);
    assert_eq!(result_files(a.path(), &ma), result_files(b.path(), &mb));
}

#[test]
fn parallelism_does_not_change_results() {
    let mut c = config(SMALL);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    c.parallelism = 1;
    let ma = run_experiment(&c, a.path()).unwrap();
    c.parallelism = 8;
    let mb = run_experiment(&c, b.path()).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);
    let (fa, fb) = (result_files(a.path(), &ma), result_files(b.path(), &mb));
    let without_config = |m: &BTreeMap<String, Vec<u8>>| m.iter().filter(|(k, _)| *k != "config.toml").map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>();
    assert_eq!(without_config(&fa), without_config(&fb));
    assert_eq!(emit_report(a.path()).unwrap().text, emit_report(b.path()).unwrap().text);
}

#[test]
fn manifest_lists_every_file_and_seed() {
    let c = config(SMALL);
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&c, dir.path()).unwrap();
    emit_report(dir.path()).unwrap();
    assert!(!m.incomplete);
    assert_eq!(m.config_hash, c.hash());
    assert_eq!(m.experiments.len(), 5);
    let mut on_disk = Vec::new();
    for entry in walk(dir.path()) {
        on_disk.push(entry.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned());
    }
    let report_files = ["manifest.json", "summary.txt", "estimates.csv", "checks.csv"];
    for f in &on_disk {
        assert!(report_files.contains(&f.as_str()) || m.files.iter().any(|e| &e.path == f), "{f} not in manifest");
    }
    for e in &m.files {
        assert!(on_disk.contains(&e.path), "{} listed but missing", e.path);
    }
    let tails = &m.experiments[1];
    assert_eq!(tails.streams[0].replicate_seeds.len(), 300);
    assert_eq!(tails.streams[0].replicate_seeds[5], froglab_core::rng::replicate_seed(tails.streams[0].master, 5));
    let shape = &m.experiments[3];
    let names: Vec<&str> = shape.streams.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["realizations", "fit", "phi"]);
    assert!(m.files.iter().any(|f| f.path == "03_shape/records/seed_0004.jsonl"));
    assert!(m.timings.iter().any(|t| t.stage == "total"));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn records_written_by_a_run_read_back() {
    let c = config(SMALL);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&c, dir.path()).unwrap();
    let file = fs::File::open(dir.path().join("03_shape/records/seed_0000.jsonl")).unwrap();
    let record = froglab_core::ActivationRecord::read_jsonl(std::io::BufReader::new(file)).unwrap();
    assert_eq!(record.horizon, 24);
    assert!(record.activations.iter().all(|(x, t)| x.free_l1() <= *t as u64));
}

#[test]
fn walk_summary_has_exponent_with_interval() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(SMALL), dir.path()).unwrap();
    let report = emit_report(dir.path()).unwrap();
    let line = report.text.lines().find(|l| l.contains("heat_kernel_exponent")).unwrap();
    assert!(line.contains("±") && line.contains("95% CI"), "{line}");
    assert!(report.text.contains("check heat_kernel_slope: PASS"));
    assert!(report.passed());
    let written = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(written, report.text);
    assert!(fs::read_to_string(dir.path().join("estimates.csv")).unwrap().starts_with("experiment,kind,name,value,stderr\n"));
}

#[test]
fn thresholds_come_from_the_config() {
    let strict = SMALL.replace("heat_kernel_slope_tolerance = 0.5", "heat_kernel_slope_tolerance = 0.0001");
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(&strict), dir.path()).unwrap();
    let report = emit_report(dir.path()).unwrap();
    assert!(report.text.contains("check heat_kernel_slope: FAIL"), "{}", report.text);
    assert_eq!(report.failed, 1);
    assert!(!report.passed());
}

#[test]
fn empty_experiment_list_gives_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_experiment(&config("master_seed = 3\n[group]\nrank = 2\n"), dir.path()).unwrap();
    assert!(m.experiments.is_empty());
    let report = emit_report(dir.path()).unwrap();
    assert!(report.text.is_empty());
    assert!(report.passed());
}

#[test]
fn failures_leave_an_incomplete_manifest() {
    // φ̂ needs uncensored activations; k = 5 along the diagonals cannot finish by time 10.
    let text = "master_seed = 4\n[group]\nrank = 2\n[[experiments]]\nkind = \"symmetry\"\nhorizon = 6\nseeds = 2\n[[experiments]]\nkind = \"shape\"\nhorizons = [5, 10]\nseeds = 2\nphi_k_values = [5]\nphi_replicas = 4\n";
    let dir = tempfile::tempdir().unwrap();
    let err = run_experiment(&config(text), dir.path()).unwrap_err();
    let CliError::Experiment { index: 1, source, .. } = &err else { panic!("{err}") };
    assert!(matches!(&**source, CliError::Field { field, .. } if field == "experiments[1].phi_k_values"), "{source}");
    let m = RunManifest::load(dir.path()).unwrap();
    assert!(m.incomplete);
    assert_eq!(m.experiments[0].status, Status::Complete);
    assert_eq!(m.experiments[1].status, Status::Failed);
    assert!(m.experiments[1].error.is_some());
    assert!(matches!(emit_report(dir.path()), Err(CliError::IncompleteManifest(_))));
}

#[test]
fn tampered_results_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(SMALL), dir.path()).unwrap();
    let path = dir.path().join("01_frog_tails/summary.json");
    let text = fs::read_to_string(&path).unwrap().replacen("target_norm", "target_Norm", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(emit_report(dir.path()), Err(CliError::ChecksumMismatch(_))));
}

fn froglab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_froglab")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    };
    let good = write("good.toml", SMALL);
    let strict = write("strict.toml", &SMALL.replace("heat_kernel_slope_tolerance = 0.5", "heat_kernel_slope_tolerance = 0.0001"));
    let bad = write("bad.toml", "master_seed = 1\n[group]\nrank = 1\ngenerators = [[1]]\n");
    let out = dir.path().join("out").to_string_lossy().into_owned();
    let out_strict = dir.path().join("strict").to_string_lossy().into_owned();

    let (code, stdout, _) = froglab(&["validate", "--config", &good]);
    assert_eq!(code, 0);
    assert!(stdout.contains(&parse_config(SMALL).unwrap().hash()));

    let (code, _, stderr) = froglab(&["validate", "--config", &bad]);
    assert_eq!(code, 2);
    assert!(stderr.contains("not symmetric"), "{stderr}");

    let (code, stdout, _) = froglab(&["run", "--config", &good, "--out", &out, "--parallelism", "3"]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("checks:"));
    let (code, report, _) = froglab(&["report", "--out", &out]);
    assert_eq!(code, 0);
    assert_eq!(report, stdout);

    let (code, _, _) = froglab(&["run", "--config", &strict, "--out", &out_strict]);
    assert_eq!(code, 1);

    let (code, _, stderr) = froglab(&["run", "--config", &good, "--out", &out, "--budget", "10"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("budget"), "{stderr}");
}
