//! Experiment presets, output files and the command-line interface.

use std::process::Command;

use lgc_core::experiments::{
    self, loglog_slope, phi_consistency, sign_recovery, ConstantLaw, ExperimentConfig, Preset, ResultTable,
};
use lgc_core::oracle::exact_deviation;
use lgc_core::sampler::EstimatorId;
use lgc_core::Profile;

#[test]
fn custom_half_coin_brackets_quarter() {
    let cfg = ExperimentConfig::preset(Preset::Custom);
    let t = experiments::run(&cfg).unwrap();
    assert_eq!(t.rows.len(), 1);
    let r = &t.rows[0];
    assert_eq!(r.theory_value, Some(0.25));
    assert!(r.low - 3.0 * r.std_err <= 0.25 && 0.25 <= r.high + 3.0 * r.std_err, "{r:?}");
}

#[test]
fn custom_rows_contain_oracle_values() {
    let mut cfg = ExperimentConfig::preset(Preset::Custom);
    cfg.profiles = vec![
        Profile::explicit(vec![0.3, 0.05, 0.6]).unwrap(),
        Profile::step(0.2, 5).unwrap(),
    ];
    cfg.n_grid = vec![3, 8];
    cfg.reps = 20_000;
    for row in experiments::run(&cfg).unwrap().rows {
        let exact = row.theory_value.unwrap();
        assert!(row.low - 3.0 * row.std_err <= exact && exact <= row.high + 3.0 * row.std_err, "{row:?}");
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let mut cfg = ExperimentConfig::preset(Preset::AppendixA1);
    cfg.q_values = vec![0.1, 0.01];
    cfg.n_grid = vec![16, 64];
    cfg.rep_grid = vec![50];
    let a = experiments::run(&cfg).unwrap().to_csv_bytes().unwrap();
    let b = experiments::run(&cfg).unwrap().to_csv_bytes().unwrap();
    assert_eq!(a, b);
    cfg.seed = 1;
    let c = experiments::run(&cfg).unwrap().to_csv_bytes().unwrap();
    assert_ne!(a, c);
}

#[test]
fn appendix_a1_shape_and_slopes() {
    let mut cfg = ExperimentConfig::preset(Preset::AppendixA1);
    cfg.rep_grid = vec![100, 400];
    let t = experiments::run(&cfg).unwrap();
    assert_eq!(t.rows.len(), 6 * 5 * 2);
    assert!(t.notes.iter().any(|n| n.contains("interpretation")));
    for &q in &cfg.q_values {
        let rows: Vec<_> = t
            .rows
            .iter()
            .filter(|r| r.cell == format!("q={q};reps=400"))
            .collect();
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.low).collect();
        let slope = loglog_slope(&xs, &ys);
        assert!((-0.6..=-0.4).contains(&slope), "q = {q}: slope {slope}");
        for r in &rows {
            let theory = (q * 100f64.ln() / r.n as f64).sqrt().min(1.0);
            assert_eq!(r.theory_value, Some(theory));
        }
    }
}

#[test]
fn appendix_a2_average_beats_eme_on_constants() {
    let mut cfg = ExperimentConfig::preset(Preset::AppendixA2);
    cfg.distributions = vec![ConstantLaw::Uniform, ConstantLaw::InverseTrial];
    cfg.k_values = vec![10, 100];
    cfg.n_grid = vec![20];
    cfg.reps = 100;
    let t = experiments::run(&cfg).unwrap();
    assert_eq!(t.rows.len(), 2 * 2 * 2);
    for pair in t.rows.chunks(2) {
        assert_eq!(pair[0].estimator, "eme");
        assert_eq!(pair[1].estimator, "average");
        assert!(pair[1].low < pair[0].low, "{pair:?}");
    }
}

#[test]
fn sign_recovery_zero_profile_never_fails() {
    let p = Profile::explicit(vec![0.0; 30]).unwrap();
    let t = sign_recovery(&p, 4, &[10, 30], 50, 3).unwrap();
    for r in &t.rows {
        assert_eq!(r.low, 0.0);
        assert_eq!(r.theory_value, Some(0.0));
    }
}

#[test]
fn sign_recovery_rejects_constant_profile() {
    assert!(sign_recovery(&Profile::constant(0.3).unwrap(), 4, &[10], 5, 0).is_err());
}

#[test]
fn phi_rows_match_expectations() {
    let profiles = [Profile::constant(0.3).unwrap(), Profile::explicit(vec![0.0; 4]).unwrap()];
    let t = phi_consistency(&profiles, &[4], &[2000], 100, 1).unwrap();
    let hits = t
        .rows
        .iter()
        .find(|r| r.profile == "const(c=0.3)" && r.estimator == "phi_hits")
        .unwrap();
    // 0.7² · 0.3² = 0.0441 per column over the upper 1000 columns.
    let expected = 0.0441 * 1000.0;
    assert!((hits.theory_value.unwrap() - expected).abs() < 1e-9);
    assert!((hits.low - expected).abs() <= 4.0 * hits.std_err + 1e-9);
    let zero_flag = t
        .rows
        .iter()
        .find(|r| r.profile.starts_with("explicit") && r.estimator == "phi_flag")
        .unwrap();
    assert_eq!(zero_flag.low, 0.0);
}

#[test]
fn phi_power_law_flag_fades() {
    let p = Profile::power_law(2.0).unwrap();
    let t = phi_consistency(&[p], &[10], &[100, 10_000], 200, 2).unwrap();
    let flags: Vec<f64> = t.rows.iter().filter(|r| r.estimator == "phi_flag").map(|r| r.low).collect();
    assert!(flags[1] <= flags[0] + 0.02, "{flags:?}");
    assert!(flags[1] <= 0.02);
}

#[test]
fn minimax_sweep_rows() {
    let t = experiments::run(&ExperimentConfig::preset(Preset::MinimaxSweep)).unwrap();
    assert!(t.rows.iter().any(|r| r.estimator == "lower_bound"));
    for r in t.rows.iter().filter(|r| r.estimator == "fano") {
        assert!(r.low <= r.theory_value.unwrap() || r.low < 0.5);
    }
}

#[test]
fn outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/run.csv");
    let mut cfg = ExperimentConfig::preset(Preset::Custom);
    cfg.reps = 100;
    let t = experiments::run(&cfg).unwrap();
    let json = experiments::write_outputs(&cfg, &t, &path).unwrap();
    let rows = ResultTable::read_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows, t.rows);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(m["config_hash"], cfg.hash());
    assert_eq!(m["constants"]["C"], 8.0);
    assert_eq!(m["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn bracket_validity_against_oracle() {
    for (i, v) in [vec![0.4, 0.1], vec![0.02; 7], vec![0.9, 0.5, 0.5]].into_iter().enumerate() {
        let p = Profile::explicit(v).unwrap();
        for n in [2u64, 9] {
            let exact = exact_deviation(&p, n).unwrap().value;
            let d = lgc_core::sampler::deviation_mc(&p, EstimatorId::Eme, n, 30_000, 1e-3, i as u64).unwrap();
            assert!(d.low - 3.5 * d.std_err <= exact && exact <= d.high + d.tail_risk + 3.5 * d.std_err);
        }
    }
}

fn lgc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lgc"))
}

#[test]
fn cli_functionals_and_exit_codes() {
    let out = lgc().args(["functionals", "step:q=0.1,j_plus_1=100"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = v["S"]["value"]["finite"].as_f64().unwrap();
    assert!((s - 0.1 * 100f64.ln()).abs() < 1e-12);

    let bad = lgc().args(["functionals", "const:c=2"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let unknown = lgc().args(["experiment", "nope"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
    let uncertified = lgc()
        .args(["simulate", "half_band:c=0.5,seed=1", "-n", "10", "--reps", "5"])
        .output()
        .unwrap();
    assert_eq!(uncertified.status.code(), Some(3));
}

#[test]
fn cli_experiment_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("custom.csv");
    let status = lgc()
        .args(["experiment", "custom", "--reps", "200", "--seed", "4", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.exists());
    assert!(out.with_extension("json").exists());
}

#[test]
fn cli_oracle_and_block_output() {
    let out = lgc().args(["oracle", "explicit:0.1", "-n", "1"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.18).abs() < 1e-15);

    let dir = tempfile::tempdir().unwrap();
    let block = dir.path().join("b.bin");
    let status = lgc()
        .args(["simulate", "step:q=0.3,j_plus_1=5", "-n", "70", "--reps", "10", "--block-out"])
        .arg(&block)
        .status()
        .unwrap();
    assert!(status.success());
    let b = lgc_core::SampleBlock::read_from(std::fs::File::open(&block).unwrap()).unwrap();
    assert_eq!((b.n(), b.cols()), (70, 5));
}
