use std::fs;
use std::path::Path;

use cgpdf_harness::report::RunReport;
use cgpdf_harness::{compare, run_experiment, run_sweep, truth, ExperimentConfig};

fn small_config(cache: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
name = "small"
seed = 3
members = 40
mc_particles = 4000
dt = 0.002
snapshots = [0.1, 0.2]
marginals = [["x"], ["x", "z"]]

[model]
id = "l63"

[init]
kind = "gaussian"
mean = [0.0, 0.0, 0.0]
variance = 1.0

[grid]
points_1d = 60
points_2d = 30

[gates]
kl_1d = 0.5
kl_2d = 2.0
"#,
    )
    .unwrap();
    cfg.cache_dir = Some(cache.to_path_buf());
    cfg
}

#[test]
fn run_writes_every_referenced_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("cache"));
    let out = dir.path().join("out");
    let report = run_experiment(&cfg, &out).unwrap();
    report.verify(&out).unwrap();
    assert_eq!(RunReport::read(&out).unwrap(), report);
    assert_eq!(report.snapshots.len(), 2);
    for s in &report.snapshots {
        assert_eq!(s.kl.len(), 2);
        assert!(s.kl.iter().all(|k| k.value.is_finite() && k.value >= 0.0));
        let kl = fs::read_to_string(out.join(&s.kl_csv)).unwrap();
        assert_eq!(kl.lines().next().unwrap(), "L,metric,variables,value,floor_mass");
        assert!(kl.contains("40,kl_2d,\"x,z\","));
        let moments = fs::read_to_string(out.join(&s.moments_csv)).unwrap();
        assert_eq!(moments.lines().count(), 1 + 2 * 3);
    }
    assert!(out.join("t0.1000/x-z_recovered.json").is_file());
    assert_eq!(report.provenance.members, 40);
    assert_eq!(report.provenance.seed, 3);
}

#[test]
fn identical_configs_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("cache"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report = run_experiment(&cfg, &a).unwrap();
    run_experiment(&cfg, &b).unwrap();
    for f in report.referenced_files() {
        if f.ends_with(".csv") {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn cached_truth_matches_fresh_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let cfg = small_config(&cache);
    let p = cfg.validate().unwrap();
    let fresh = truth::truth_snapshots(&p, None).unwrap();
    let first = truth::truth_snapshots(&p, Some(&cache)).unwrap();
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 2);
    let second = truth::truth_snapshots(&p, Some(&cache)).unwrap();
    for ((a, b), c) in fresh.iter().zip(&first).zip(&second) {
        assert_eq!(a.states, b.states);
        assert_eq!(a.states, c.states);
    }

    let mut other = cfg.clone();
    other.mc_particles = 3000;
    let q = other.validate().unwrap();
    assert_ne!(truth::cache_key(&p, 0.1), truth::cache_key(&q, 0.1));
    let mut regrid = cfg.clone();
    regrid.grid.points_1d = 80;
    assert_eq!(truth::cache_key(&p, 0.1), truth::cache_key(&regrid.validate().unwrap(), 0.1));
}

#[test]
fn empty_snapshot_list_writes_provenance_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("cache"));
    cfg.snapshots.clear();
    let out = dir.path().join("out");
    let report = run_experiment(&cfg, &out).unwrap();
    assert!(report.snapshots.is_empty());
    assert_eq!(report.gates_passed, None);
    report.verify(&out).unwrap();
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["config.cfg", "report.json"]);
}

#[test]
fn stored_config_reproduces_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("cache"));
    let out = dir.path().join("out");
    let report = run_experiment(&cfg, &out).unwrap();
    let stored = ExperimentConfig::load(&out.join("config.cfg").to_string_lossy()).unwrap();
    assert_eq!(stored.hash(), report.provenance.config_hash);
    assert_eq!(stored.hash(), cfg.hash());
}

#[test]
fn sweep_writes_one_row_per_size_and_marginal() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(&dir.path().join("cache"));
    cfg.snapshots = vec![0.2];
    let out = dir.path().join("sweep");
    let rows = run_sweep(&cfg, &[20, 80, 320], &out).unwrap();
    assert_eq!(rows.len(), 3 * 2);
    let csv = fs::read_to_string(out.join("sweep_t0.2000.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "L,metric,variables,value,floor_mass");
    assert_eq!(lines.count(), 6);
    let kl = |l: usize| rows.iter().find(|r| r.members == l && r.metric == "kl_1d").unwrap().value;
    assert!(kl(320) < kl(20));
}

#[test]
fn sweep_rejects_zero_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("cache"));
    assert!(run_sweep(&cfg, &[10, 0], &dir.path().join("s")).is_err());
    assert!(run_sweep(&cfg, &[], &dir.path().join("s")).is_err());
}

#[test]
fn compare_scores_both_observed_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load("climate4d-t05").unwrap();
    cfg.mc_particles = 20_000;
    cfg.cache_dir = Some(dir.path().to_path_buf());
    let p = cfg.validate().unwrap();
    let snaps = truth::truth_snapshots(&p, p.config.cache_dir.as_deref()).unwrap();
    let small = compare::compare_kde_vs_mc(&p, &snaps, 50).unwrap();
    let large = compare::compare_kde_vs_mc(&p, &snaps, 2000).unwrap();
    assert_eq!(small.len(), p.system.n_obs());
    for (s, l) in small.iter().zip(&large) {
        assert_eq!(s.variable, l.variable);
        assert_eq!(s.bins, compare::default_bins(50));
        assert!(l.kde.value < s.kde.value, "{}: {} vs {}", s.variable, l.kde.value, s.kde.value);
        assert!(l.kde.value < l.histogram.value);
    }
    let path = dir.path().join("compare.csv");
    compare::write_compare(&large, &path).unwrap();
    assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 1 + large.len());
}
