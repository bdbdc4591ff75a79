//! Declarative experiment presets with CSV and JSON output.
//!
//! Every preset expands into an ordered list of cells. Each cell derives its
//! own seed from the master seed and its position, so rerunning a config
//! reproduces the same bytes whatever the worker count.
//!
//! # CSV schema
//!
//! Lines starting with `#` describe the run. The remaining lines are a CSV
//! table with the columns of [`Row`], in order:
//! `experiment, profile, cell, n, estimator, low, high, std_err,
//! theory_value, seed, reps, delta`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, Exp, Normal, Triangular, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bounds::{self, BoundsError, MinimaxConstants, RateConstants};
use crate::estimators;
use crate::oracle::{self, OracleError};
use crate::profiles::{mix64, Profile, ProfileError, SignSequence};
use crate::sampler::{self, EstimatorId, SampleError, DEFAULT_DELTA};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Whether the failure is a missing certificate rather than bad input.
    pub fn is_certification(&self) -> bool {
        matches!(
            self,
            ExperimentError::Profile(ProfileError::Uncertifiable { .. })
                | ExperimentError::Sample(SampleError::Profile(ProfileError::Uncertifiable { .. }))
                | ExperimentError::Sample(SampleError::TruncationTooLarge { .. })
                | ExperimentError::Bounds(BoundsError::Profile(ProfileError::Uncertifiable { .. }))
        )
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    AppendixA1,
    AppendixA2,
    SignRecovery,
    PhiConsistency,
    MinimaxSweep,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::AppendixA1,
        Preset::AppendixA2,
        Preset::SignRecovery,
        Preset::PhiConsistency,
        Preset::MinimaxSweep,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::AppendixA1 => "appendix_a1",
            Preset::AppendixA2 => "appendix_a2",
            Preset::SignRecovery => "sign_recovery",
            Preset::PhiConsistency => "phi_consistency",
            Preset::MinimaxSweep => "minimax_sweep",
            Preset::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| config_err(format!("unknown preset `{s}`")))
    }
}

/// Source of the constant `c` in the estimator comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantLaw {
    Uniform,
    Triangular,
    Beta22,
    /// Exponential with rate 4, clamped to `[0, 1]`.
    Exponential,
    /// `c = 1/i` for trial `i = 1, 2, …`.
    InverseTrial,
    /// `N(1/2, 0.1²)` clamped to `[0, 1]`.
    Gaussian,
}

impl ConstantLaw {
    pub const ALL: [ConstantLaw; 6] = [
        ConstantLaw::Uniform,
        ConstantLaw::Triangular,
        ConstantLaw::Beta22,
        ConstantLaw::Exponential,
        ConstantLaw::InverseTrial,
        ConstantLaw::Gaussian,
    ];

    fn name(self) -> &'static str {
        match self {
            ConstantLaw::Uniform => "uniform",
            ConstantLaw::Triangular => "triangular",
            ConstantLaw::Beta22 => "beta22",
            ConstantLaw::Exponential => "exponential",
            ConstantLaw::InverseTrial => "inverse_trial",
            ConstantLaw::Gaussian => "gaussian",
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng, trial: u64) -> f64 {
        let v: f64 = match self {
            ConstantLaw::Uniform => Uniform::new(0.0, 1.0).expect("valid").sample(rng),
            ConstantLaw::Triangular => Triangular::new(0.0, 1.0, 0.5).expect("valid").sample(rng),
            ConstantLaw::Beta22 => Beta::new(2.0, 2.0).expect("valid").sample(rng),
            ConstantLaw::Exponential => Exp::new(4.0).expect("valid").sample(rng),
            ConstantLaw::InverseTrial => 1.0 / (trial + 1) as f64,
            ConstantLaw::Gaussian => Normal::new(0.5, 0.1).expect("valid").sample(rng),
        };
        v.clamp(0.0, 1.0)
    }
}

/// One `(t, t/s, n)` point of the minimax sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxPoint {
    pub t: f64,
    pub ratio: f64,
    pub n: u64,
}

fn default_reps() -> u64 {
    1000
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    #[serde(default)]
    pub profiles: Vec<Profile>,
    #[serde(default)]
    pub n_grid: Vec<u64>,
    #[serde(default = "default_reps")]
    pub reps: u64,
    /// Repetition counts compared side by side (appendix A.1).
    #[serde(default)]
    pub rep_grid: Vec<u64>,
    #[serde(default)]
    pub q_values: Vec<f64>,
    #[serde(default)]
    pub distributions: Vec<ConstantLaw>,
    /// Coordinate counts for the estimator comparison.
    #[serde(default)]
    pub k_values: Vec<u64>,
    /// Truncation levels `J` for sign recovery.
    #[serde(default)]
    pub j_grid: Vec<u64>,
    /// Windows for the pattern test.
    #[serde(default)]
    pub horizons: Vec<u64>,
    #[serde(default)]
    pub estimators: Vec<EstimatorId>,
    #[serde(default)]
    pub minimax: Vec<MinimaxPoint>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub constants: MinimaxConstants,
    #[serde(default)]
    pub rate_constants: RateConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    fn empty(preset: Preset) -> Self {
        ExperimentConfig {
            preset,
            profiles: Vec::new(),
            n_grid: Vec::new(),
            reps: default_reps(),
            rep_grid: Vec::new(),
            q_values: Vec::new(),
            distributions: Vec::new(),
            k_values: Vec::new(),
            j_grid: Vec::new(),
            horizons: Vec::new(),
            estimators: Vec::new(),
            minimax: Vec::new(),
            seed: 0,
            delta: DEFAULT_DELTA,
            constants: MinimaxConstants::default(),
            rate_constants: RateConstants::default(),
            output: None,
        }
    }

    /// Default grid for `preset`.
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self::empty(preset);
        match preset {
            Preset::AppendixA1 => {
                c.q_values = vec![0.1, 0.2, 0.05, 0.01, 0.005, 0.002];
                c.n_grid = vec![64, 256, 1024, 4096, 16384];
                c.rep_grid = vec![100, 1000, 10000];
            }
            Preset::AppendixA2 => {
                c.distributions = ConstantLaw::ALL.to_vec();
                c.k_values = vec![10, 50, 100, 500];
                c.n_grid = vec![10, 100, 1000];
                c.reps = 200;
            }
            Preset::SignRecovery => {
                c.profiles = vec![Profile::inv_log()];
                c.n_grid = vec![4];
                c.j_grid = vec![100, 1000, 10000];
            }
            Preset::PhiConsistency => {
                c.profiles = vec![
                    Profile::constant(0.3).expect("valid"),
                    Profile::power_law(2.0).expect("valid"),
                    Profile::step(0.1, 100).expect("valid"),
                    Profile::explicit(vec![0.0; 8]).expect("valid"),
                ];
                c.n_grid = vec![4, 10];
                c.horizons = vec![1000, 10000];
                c.reps = 200;
            }
            Preset::MinimaxSweep => {
                let e = std::f64::consts::E;
                for t in [2.0, 3.0] {
                    for ratio in [e * e, e.powi(3), e.powf(e)] {
                        c.minimax.push(MinimaxPoint { t, ratio, n: 1000 });
                    }
                }
                c.reps = 200;
            }
            Preset::Custom => {
                c.profiles = vec![Profile::explicit(vec![0.5]).expect("valid")];
                c.n_grid = vec![2];
                c.estimators = vec![EstimatorId::Eme];
                c.reps = 100_000;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.reps == 0 {
            return Err(config_err("reps must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_err("delta must lie in (0, 1)"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("n_grid must be strictly increasing"));
        }
        if self.n_grid.first() == Some(&0) {
            return Err(config_err("n_grid entries must be >= 1"));
        }
        if self.rep_grid.contains(&0) {
            return Err(config_err("rep_grid entries must be >= 1"));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        let needs_n = !matches!(self.preset, Preset::MinimaxSweep);
        if needs_n && self.n_grid.is_empty() {
            return Err(config_err("n_grid is empty"));
        }
        match self.preset {
            Preset::AppendixA1 if self.q_values.is_empty() => Err(config_err("q_values is empty")),
            Preset::AppendixA1 if self.q_values.iter().any(|q| !(0.0..=1.0).contains(q)) => {
                Err(config_err("q_values must lie in [0, 1]"))
            }
            Preset::AppendixA2 if self.distributions.is_empty() || self.k_values.is_empty() => {
                Err(config_err("distributions and k_values are required"))
            }
            Preset::SignRecovery if self.profiles.len() != 1 || self.j_grid.is_empty() => {
                Err(config_err("sign_recovery needs one profile and a j_grid"))
            }
            Preset::PhiConsistency if self.profiles.is_empty() || self.horizons.is_empty() => {
                Err(config_err("phi_consistency needs profiles and horizons"))
            }
            Preset::MinimaxSweep if self.minimax.is_empty() => Err(config_err("minimax grid is empty")),
            Preset::Custom if self.profiles.is_empty() || self.estimators.is_empty() => {
                Err(config_err("custom needs profiles and estimators"))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON encoding, excluding the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub profile: String,
    /// Further coordinates of the grid point, `key=value` joined by `;`.
    pub cell: String,
    pub n: u64,
    pub estimator: String,
    pub low: f64,
    pub high: f64,
    pub std_err: f64,
    pub theory_value: Option<f64>,
    pub seed: u64,
    pub reps: u64,
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    /// Interpretation notes written as `#` lines above the table.
    pub notes: Vec<String>,
    pub rows: Vec<Row>,
}

impl ResultTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), ExperimentError> {
        for note in &self.notes {
            writeln!(w, "# {note}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        for row in &self.rows {
            cw.serialize(row)?;
        }
        if self.rows.is_empty() {
            cw.write_record([
                "experiment",
                "profile",
                "cell",
                "n",
                "estimator",
                "low",
                "high",
                "std_err",
                "theory_value",
                "seed",
                "reps",
                "delta",
            ])?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, ExperimentError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<Row>, ExperimentError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        Ok(rd.deserialize().collect::<Result<Vec<Row>, _>>()?)
    }
}

/// Run description stored next to the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub preset: Preset,
    pub config_hash: String,
    pub csv_sha256: String,
    pub rng: String,
    pub constants: MinimaxConstants,
    pub rate_constants: RateConstants,
    pub config: ExperimentConfig,
    pub notes: Vec<String>,
    pub rows: Vec<Row>,
}

pub fn manifest(config: &ExperimentConfig, table: &ResultTable) -> Result<Manifest, ExperimentError> {
    let csv = table.to_csv_bytes()?;
    Ok(Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        preset: config.preset,
        config_hash: config.hash(),
        csv_sha256: hex::encode(Sha256::digest(&csv)),
        rng: "ChaCha8 (rand_chacha), seed_from_u64(cell seed), stream = repetition".into(),
        constants: config.constants,
        rate_constants: config.rate_constants,
        config: config.clone(),
        notes: table.notes.clone(),
        rows: table.rows.clone(),
    })
}

/// Writes `path` (CSV) and `path` with extension `json` (manifest).
pub fn write_outputs(config: &ExperimentConfig, table: &ResultTable, path: &Path) -> Result<PathBuf, ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, table.to_csv_bytes()?)?;
    let json_path = path.with_extension("json");
    let m = manifest(config, table)?;
    fs::write(&json_path, serde_json::to_vec_pretty(&m)?)?;
    Ok(json_path)
}

/// Seed of cell `index` under master seed `seed`.
pub fn cell_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5EED)))
}

/// Runs `config` on the global rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    config.validate()?;
    match config.preset {
        Preset::AppendixA1 => appendix_a1(config),
        Preset::AppendixA2 => appendix_a2(config),
        Preset::SignRecovery => {
            let mut t = sign_recovery(
                &config.profiles[0],
                config.n_grid[0],
                &config.j_grid,
                config.reps,
                config.seed,
            )?;
            for row in &mut t.rows {
                row.delta = config.delta;
            }
            Ok(t)
        }
        Preset::PhiConsistency => phi_consistency(
            &config.profiles,
            &config.n_grid,
            &config.horizons,
            config.reps,
            config.seed,
        ),
        Preset::MinimaxSweep => minimax_sweep(config),
        Preset::Custom => custom(config),
    }
}

/// Runs `config` on a dedicated pool of `threads` workers.
pub fn run_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ResultTable, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

fn mc_row(
    experiment: &str,
    profile: &Profile,
    cell: String,
    est: EstimatorId,
    d: &sampler::DeviationEstimate,
    theory_value: Option<f64>,
    seed: u64,
    delta: f64,
) -> Row {
    Row {
        experiment: experiment.into(),
        profile: profile.to_string(),
        cell,
        n: d.n,
        estimator: est.label(),
        low: d.low,
        high: d.high,
        std_err: d.std_err,
        theory_value,
        seed,
        reps: d.reps,
        delta,
    }
}

fn appendix_a1(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let rep_grid = if config.rep_grid.is_empty() {
        vec![config.reps]
    } else {
        config.rep_grid.clone()
    };
    let mut table = ResultTable {
        notes: vec![
            "appendix_a1: step profile p_j = q on j <= 100, 0 afterwards; estimator = empirical mean".into(),
            "theory_value = min(1, sqrt(q log(100) / n)); this curve is an interpretation, not a formula from the source".into(),
            "low/high bracket E sup_j |p_hat_j - p_j| (exact: no unsampled tail)".into(),
        ],
        rows: Vec::new(),
    };
    let mut index = 0u64;
    for &q in &config.q_values {
        let p = Profile::step(q, 100)?;
        for &n in &config.n_grid {
            for &reps in &rep_grid {
                let seed = cell_seed(config.seed, index);
                index += 1;
                let d = sampler::deviation_mc(&p, EstimatorId::Eme, n, reps, config.delta, seed)?;
                let theory = (q * 100f64.ln() / n as f64).sqrt().min(1.0);
                table.rows.push(mc_row(
                    "appendix_a1",
                    &p,
                    format!("q={q};reps={reps}"),
                    EstimatorId::Eme,
                    &d,
                    Some(theory),
                    seed,
                    config.delta,
                ));
            }
        }
    }
    Ok(table)
}

fn appendix_a2(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    use rayon::prelude::*;
    let mut table = ResultTable {
        notes: vec![
            "appendix_a2: per repetition i a constant c_i is drawn from the named law and p = (c_i, ..., c_i) on k coordinates".into(),
            "k is read as the coordinate count; exponential has rate 4 and gaussian is N(1/2, 0.1^2), both clamped to [0, 1]; inverse_trial uses c_i = 1/i".into(),
            "estimators: eme = coordinatewise mean, average = grand mean of all k*n draws used for every coordinate; low = high = mean sup error".into(),
        ],
        rows: Vec::new(),
    };
    let mut index = 0u64;
    for &law in &config.distributions {
        for &k in &config.k_values {
            for &n in &config.n_grid {
                let seed = cell_seed(config.seed, index);
                index += 1;
                let errs: Vec<(f64, f64)> = (0..config.reps)
                    .into_par_iter()
                    .map(|r| -> Result<(f64, f64), ExperimentError> {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0xC0FFEE));
                        rng.set_stream(r);
                        let c = law.draw(&mut rng, r);
                        let p = Profile::explicit(vec![c; k as usize])?;
                        let block = sampler::sample_block_stream(&p, n as usize, k, seed, r)?;
                        let eme = estimators::eme(&block);
                        let e1 = eme.values.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
                        let avg = eme.values.iter().sum::<f64>() / k as f64;
                        Ok((e1, (avg - c).abs()))
                    })
                    .collect::<Result<_, _>>()?;
                for (label, pick) in [("eme", 0usize), ("average", 1)] {
                    let xs: Vec<f64> = errs.iter().map(|e| if pick == 0 { e.0 } else { e.1 }).collect();
                    let (mean, se) = mean_se(&xs);
                    table.rows.push(Row {
                        experiment: "appendix_a2".into(),
                        profile: format!("const_law({})", law.name()),
                        cell: format!("k={k}"),
                        n,
                        estimator: label.into(),
                        low: mean,
                        high: mean,
                        std_err: se,
                        theory_value: None,
                        seed,
                        reps: config.reps,
                        delta: config.delta,
                    });
                }
            }
        }
    }
    Ok(table)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Sign recovery under random reflections of `p`.
///
/// Repetition `r` draws Rademacher signs `Y`, samples `n` rows of the
/// `Y`-reflection of `p` and decodes each side of 1/2 by majority vote.
/// Coordinates with `ṗ_j = 1/2` carry no side and are skipped. For each `J`
/// the rows report:
///
/// * `majority_failure`: frequency of a decoding error among `j ≤ J`;
/// * `all_ones_event`: frequency of some `j ≤ J` whose column is all ones
///   while the reflected value is `ṗ_j`;
///
/// both with `theory_value = (1 − e^{−1}) min(1, Σ_{j≤J} ṗ_j^n / 2)`.
pub fn sign_recovery(p: &Profile, n: u64, j_grid: &[u64], reps: u64, seed: u64) -> Result<ResultTable, ExperimentError> {
    use rayon::prelude::*;
    if !p.is_decaying() {
        return Err(config_err("sign_recovery needs a decaying profile"));
    }
    if n == 0 || reps == 0 || j_grid.is_empty() || j_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("need n, reps >= 1 and a strictly increasing j_grid"));
    }
    let j_max = *j_grid.last().expect("non-empty");
    let dot: Vec<f64> = (1..=j_max).map(|j| p.dot_at(j)).collect();
    let base = p.dot();
    let firsts: Vec<(u64, u64)> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<(u64, u64), ExperimentError> {
            let signs = SignSequence::Rademacher { seed: mix64(seed ^ mix64(r)) };
            let reflected = base.reflect(signs);
            let block = sampler::sample_block_stream(&reflected, n as usize, j_max, seed, r)?;
            let mut first_fail = u64::MAX;
            let mut first_ones = u64::MAX;
            for j in 0..j_max as usize {
                if dot[j] >= 0.5 {
                    continue;
                }
                let truth_above = reflected.value(j as u64 + 1) > 0.5;
                let ones = block.column_ones(j) as u64;
                let decoded_above = 2 * ones > n;
                if first_fail == u64::MAX && decoded_above != truth_above {
                    first_fail = j as u64 + 1;
                }
                if first_ones == u64::MAX && ones == n && !truth_above {
                    first_ones = j as u64 + 1;
                }
                if first_fail != u64::MAX && first_ones != u64::MAX {
                    break;
                }
            }
            Ok((first_fail, first_ones))
        })
        .collect::<Result<_, _>>()?;

    let mut table = ResultTable {
        notes: vec![
            "sign_recovery: Rademacher reflections of the profile, majority-vote side decoding per coordinate".into(),
            "theory_value = (1 - 1/e) min(1, sum_{j<=J} (1/2) dot_p_j^n), a lower bound for both event frequencies".into(),
        ],
        rows: Vec::new(),
    };
    for &j in j_grid {
        let terms: Vec<f64> = dot[..j as usize]
            .iter()
            .filter(|&&d| d < 0.5)
            .map(|&d| 0.5 * d.powi(n as i32))
            .collect();
        let bound = bounds::union_lower_bound(&terms)?;
        for (label, pick) in [("majority_failure", 0usize), ("all_ones_event", 1)] {
            let hits = firsts
                .iter()
                .filter(|f| if pick == 0 { f.0 <= j } else { f.1 <= j })
                .count() as f64;
            let freq = hits / reps as f64;
            table.rows.push(Row {
                experiment: "sign_recovery".into(),
                profile: p.to_string(),
                cell: format!("J={j}"),
                n,
                estimator: label.into(),
                low: freq,
                high: freq,
                std_err: (freq * (1.0 - freq) / reps as f64).sqrt(),
                theory_value: Some(bound),
                seed,
                reps,
                delta: DEFAULT_DELTA,
            });
        }
    }
    Ok(table)
}

/// Frequency of the pattern-test flag on windows `1..=h`.
///
/// Rows per `(profile, n, h)`:
///
/// * `phi_flag`: flag frequency;
/// * `phi_hits`: mean number of pattern hits in the upper half of the
///   window, with its exact expectation as `theory_value`;
/// * `partial_sum(m=⌊n/2⌋)` and `partial_sum(m=n)`: `Σ_{j≤h} ṗ_j^m`.
pub fn phi_consistency(
    profiles: &[Profile],
    n_grid: &[u64],
    horizons: &[u64],
    reps: u64,
    seed: u64,
) -> Result<ResultTable, ExperimentError> {
    use rayon::prelude::*;
    let mut table = ResultTable {
        notes: vec![
            "phi_consistency: pattern = first floor(n/2) rows zero, remaining ceil(n/2) rows one; flag = a hit in the upper half of the window".into(),
            "phi_hits theory_value = sum over the upper half of (1-p_j)^floor(n/2) p_j^ceil(n/2)".into(),
        ],
        rows: Vec::new(),
    };
    let mut index = 0u64;
    for p in profiles {
        for &n in n_grid {
            for &h in horizons {
                if h == 0 {
                    return Err(config_err("horizons must be >= 1"));
                }
                let cell_s = cell_seed(seed, index);
                index += 1;
                let upper_start = 1 + h / 2;
                let outs: Vec<(bool, u64)> = (0..reps)
                    .into_par_iter()
                    .map(|r| -> Result<(bool, u64), ExperimentError> {
                        let block = sampler::sample_block_stream(p, n as usize, h, cell_s, r)?;
                        let o = estimators::phi_test(&block, 1..=h);
                        let upper = o.hits.iter().filter(|&&j| j >= upper_start).count() as u64;
                        Ok((o.flag, upper))
                    })
                    .collect::<Result<_, _>>()?;
                let flags: Vec<f64> = outs.iter().map(|o| o.0 as u64 as f64).collect();
                let hits: Vec<f64> = outs.iter().map(|o| o.1 as f64).collect();
                let (fm, fse) = mean_se(&flags);
                let (hm, hse) = mean_se(&hits);
                let (zeros, ones) = ((n / 2) as i32, n.div_ceil(2) as i32);
                let expected: f64 = (upper_start..=h)
                    .map(|j| {
                        let v = p.value(j);
                        (1.0 - v).powi(zeros) * v.powi(ones)
                    })
                    .sum();
                let sum_m = |m: i32| -> f64 { (1..=h).map(|j| p.dot_at(j).powi(m)).sum() };
                let mut push = |estimator: String, v: f64, se: f64, theory: Option<f64>| {
                    table.rows.push(Row {
                        experiment: "phi_consistency".into(),
                        profile: p.to_string(),
                        cell: format!("horizon={h}"),
                        n,
                        estimator,
                        low: v,
                        high: v,
                        std_err: se,
                        theory_value: theory,
                        seed: cell_s,
                        reps,
                        delta: DEFAULT_DELTA,
                    })
                };
                push("phi_flag".into(), fm, fse, None);
                push("phi_hits".into(), hm, hse, Some(expected));
                let s_half = sum_m(zeros.max(1));
                let s_full = sum_m(n as i32);
                push(format!("partial_sum(m={})", zeros.max(1)), s_half, 0.0, Some(s_half));
                push(format!("partial_sum(m={n})"), s_full, 0.0, Some(s_full));
            }
        }
    }
    Ok(table)
}

/// Largest support for which the flat step is also simulated.
const MINIMAX_MC_SUPPORT: u64 = 100_000;

fn minimax_sweep(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let mut table = ResultTable {
        notes: vec![
            "minimax_sweep: step-profile construction with q = 1/(r log r), r = t/s, J+1 = ceil(exp(t log r)), q' solving the symmetric KL equation".into(),
            format!(
                "constants C = {}, c = {}, c' = {} (runtime defaults, not taken from any proof)",
                config.constants.big_c, config.constants.c, config.constants.c_prime
            ),
            "rows: lower_bound = min(1, max(c sqrt(s/n), Q t/n)); fano = Fano bound for the family; eme_flat = empirical-mean risk on the flat step when simulated".into(),
        ],
        rows: Vec::new(),
    };
    for (index, pt) in config.minimax.iter().enumerate() {
        let s = pt.t / pt.ratio;
        let m = bounds::minimax_instance(s, pt.t, pt.n, config.constants)?;
        let cell = format!("t={};ratio={};J_plus_1={}", pt.t, pt.ratio, m.j_plus_1);
        let flat = m.profiles().profile(m.j_plus_1);
        let desc = format!("minimax(s={s},t={})", pt.t);
        let mut push = |estimator: &str, low: f64, high: f64, se: f64, theory: Option<f64>, seed: u64, reps: u64| {
            table.rows.push(Row {
                experiment: "minimax_sweep".into(),
                profile: desc.clone(),
                cell: cell.clone(),
                n: pt.n,
                estimator: estimator.into(),
                low,
                high,
                std_err: se,
                theory_value: theory,
                seed,
                reps,
                delta: config.delta,
            })
        };
        push("lower_bound", m.lower_bound, m.lower_bound, 0.0, Some(m.lower_bound), config.seed, 0);
        push("fano", m.fano_value, m.fano_value, 0.0, Some(m.lower_bound), config.seed, 0);
        if m.j_plus_1 <= MINIMAX_MC_SUPPORT {
            let seed = cell_seed(config.seed, index as u64);
            let d = sampler::deviation_mc(&flat, EstimatorId::Eme, pt.n, config.reps, config.delta, seed)?;
            push("eme_flat", d.low, d.high, d.std_err, Some(m.lower_bound), seed, config.reps);
        }
    }
    Ok(table)
}

fn custom(config: &ExperimentConfig) -> Result<ResultTable, ExperimentError> {
    let mut table = ResultTable {
        notes: vec![
            "custom: Monte Carlo bracket [low, high] for E sup_j |p_tilde_j - p_j|".into(),
            "theory_value = exact value when the support is finite and small, otherwise the two-regime rate expression (empirical mean only)".into(),
        ],
        rows: Vec::new(),
    };
    let mut index = 0u64;
    for p in &config.profiles {
        for &n in &config.n_grid {
            for &est in &config.estimators {
                let seed = cell_seed(config.seed, index);
                index += 1;
                let d = sampler::deviation_mc(p, est, n, config.reps, config.delta, seed)?;
                let theory = match est {
                    EstimatorId::Eme => match oracle::exact_deviation(p, n) {
                        Ok(x) => Some(x.value),
                        Err(_) => bounds::tight_bound(p, n, config.rate_constants).ok().map(|r| r.value),
                    },
                    _ => None,
                };
                table
                    .rows
                    .push(mc_row("custom", p, String::new(), est, &d, theory, seed, config.delta));
            }
        }
    }
    Ok(table)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
