//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 certification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lgc_core::bounds::{self, MinimaxConstants, RateConstants};
use lgc_core::experiments::{self, ExperimentConfig, ExperimentError, Preset};
use lgc_core::oracle;
use lgc_core::sampler::{self, EstimatorId, DEFAULT_DELTA};
use lgc_core::{Profile, ProfileError};

#[derive(Parser, Debug)]
#[command(name = "lgc", version, about = "Mean estimation under infinite Bernoulli product measures")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo repetitions.
    #[arg(long, global = true)]
    reps: Option<u64>,
    /// Failure budget for tail truncation.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Output path (CSV for experiments, JSON otherwise).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// S and T of a profile.
    Functionals {
        profile: String,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Exact expected deviation of the empirical mean (finite support).
    Oracle {
        profile: String,
        #[arg(short, long)]
        n: u64,
    },
    /// Monte Carlo bracket for the expected deviation of an estimator.
    Simulate {
        profile: String,
        #[arg(short, long)]
        n: u64,
        /// `eme`, `hybrid`, `hybrid:<window>` or `truncated:<kappa>`.
        #[arg(long, default_value = "eme")]
        estimator: String,
        /// Also write one sampled block (stream 0) to this file.
        #[arg(long)]
        block_out: Option<PathBuf>,
    },
    /// Two-regime rate expression for a profile.
    Bounds {
        profile: String,
        #[arg(short, long)]
        n: u64,
        #[arg(long, default_value_t = 0.25)]
        c_low: f64,
        #[arg(long, default_value_t = 4.0)]
        c_high: f64,
    },
    /// Step-profile minimax construction.
    Minimax {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(short, long)]
        n: u64,
        #[arg(long = "C", default_value_t = 8.0)]
        big_c: f64,
        #[arg(long, default_value_t = 0.1)]
        c: f64,
        #[arg(long, default_value_t = 4.0)]
        c_prime: f64,
        /// Include the J+1 profiles (only when J+1 ≤ 10^4).
        #[arg(long)]
        profiles: bool,
    },
    /// Run an experiment preset.
    Experiment { preset: String },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Certification(String),
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Uncertifiable { .. } => CliError::Certification(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_certification() {
            CliError::Certification(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<sampler::SampleError> for CliError {
    fn from(e: sampler::SampleError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<bounds::BoundsError> for CliError {
    fn from(e: bounds::BoundsError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<oracle::OracleError> for CliError {
    fn from(e: oracle::OracleError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Accepts JSON, `@file` or the shorthand `family:key=value,...`
/// (`explicit:0.1;0.5` for explicit values).
fn parse_profile(spec: &str) -> Result<Profile, CliError> {
    let text = if let Some(path) = spec.strip_prefix('@') {
        std::fs::read_to_string(path).map_err(|e| config(format!("{path}: {e}")))?
    } else {
        spec.to_string()
    };
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        return serde_json::from_str(trimmed).map_err(|e| config(format!("profile: {e}")));
    }
    let (family, rest) = trimmed.split_once(':').unwrap_or((trimmed, ""));
    let json = if family == "explicit" {
        let values = rest
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<f64>().map_err(|e| config(format!("{s}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        serde_json::json!({"family": "explicit", "params": {"values": values}})
    } else {
        let mut params = serde_json::Map::new();
        for kv in rest.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| config(format!("expected key=value, got `{kv}`")))?;
            let num: serde_json::Value =
                serde_json::from_str(v.trim()).map_err(|e| config(format!("{k}: {e}")))?;
            params.insert(k.trim().to_string(), num);
        }
        if params.is_empty() {
            serde_json::json!({ "family": family })
        } else {
            serde_json::json!({ "family": family, "params": params })
        }
    };
    serde_json::from_value(json).map_err(|e| config(format!("profile: {e}")))
}

fn parse_estimator(s: &str) -> Result<EstimatorId, CliError> {
    let (name, arg) = s.split_once(':').unwrap_or((s, ""));
    match (name, arg) {
        ("eme", "") => Ok(EstimatorId::Eme),
        ("hybrid", "") => Ok(EstimatorId::Hybrid { horizon: None }),
        ("hybrid", h) => Ok(EstimatorId::Hybrid {
            horizon: Some(h.parse().map_err(|e| config(format!("window: {e}")))?),
        }),
        ("truncated", k) => Ok(EstimatorId::Truncated {
            kappa: if k.is_empty() {
                1.0
            } else {
                k.parse().map_err(|e| config(format!("kappa: {e}")))?
            },
        }),
        _ => Err(config(format!("unknown estimator `{s}`"))),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| config(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| config(format!("{}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct FunctionalsOut {
    profile: Profile,
    #[serde(rename = "S")]
    s: lgc_core::FunctionalReport,
    #[serde(rename = "T")]
    t: lgc_core::FunctionalReport,
}

#[derive(Serialize)]
struct MinimaxOut {
    #[serde(flatten)]
    instance: lgc_core::MinimaxInstance,
    #[serde(skip_serializing_if = "Option::is_none")]
    profiles: Option<Vec<Profile>>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let seed = g.seed.unwrap_or(0);
    let reps = g.reps.unwrap_or(1000);
    let delta = g.delta.unwrap_or(DEFAULT_DELTA);
    if let Some(t) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| config(e.to_string()))?;
    }
    match &cli.command {
        Command::Functionals { profile, tol } => {
            let p = parse_profile(profile)?;
            let s = p.functional_s(*tol)?;
            let t = p.functional_t(*tol)?;
            emit(&FunctionalsOut { profile: p, s, t }, g.out.as_ref())
        }
        Command::Oracle { profile, n } => {
            let p = parse_profile(profile)?;
            emit(&oracle::exact_deviation(&p, *n)?, g.out.as_ref())
        }
        Command::Simulate {
            profile,
            n,
            estimator,
            block_out,
        } => {
            let p = parse_profile(profile)?;
            let est = parse_estimator(estimator)?;
            let d = sampler::deviation_mc(&p, est, *n, reps, delta, seed)?;
            if let Some(path) = block_out {
                let block = sampler::sample_block(&p, *n as usize, d.truncation, seed)?;
                let file = std::fs::File::create(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
                block.write_to(std::io::BufWriter::new(file))?;
            }
            emit(&d, g.out.as_ref())
        }
        Command::Bounds { profile, n, c_low, c_high } => {
            let p = parse_profile(profile)?;
            let r = bounds::tight_bound(
                &p,
                *n,
                RateConstants {
                    c_low: *c_low,
                    c_high: *c_high,
                },
            )?;
            emit(&r, g.out.as_ref())
        }
        Command::Minimax {
            s,
            t,
            n,
            big_c,
            c,
            c_prime,
            profiles,
        } => {
            let consts = MinimaxConstants {
                big_c: *big_c,
                c: *c,
                c_prime: *c_prime,
            };
            let instance = bounds::minimax_instance(*s, *t, *n, consts)?;
            let list = if *profiles {
                if instance.j_plus_1 > 10_000 {
                    return Err(config("J+1 exceeds 10^4; omit --profiles"));
                }
                Some(instance.profiles().to_vec())
            } else {
                None
            };
            emit(&MinimaxOut { instance, profiles: list }, g.out.as_ref())
        }
        Command::Experiment { preset } => {
            let preset: Preset = preset.parse()?;
            let mut cfg = match &g.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
                    let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| config(format!("config: {e}")))?;
                    if cfg.preset != preset {
                        return Err(config(format!("config is for preset `{}`", cfg.preset.name())));
                    }
                    cfg
                }
                None => ExperimentConfig::preset(preset),
            };
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(r) = g.reps {
                cfg.reps = r;
                cfg.rep_grid.clear();
            }
            if let Some(d) = g.delta {
                cfg.delta = d;
            }
            if let Some(o) = &g.out {
                cfg.output = Some(o.clone());
            }
            let out = cfg
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("results/{}.csv", preset.name())));
            let table = experiments::run(&cfg)?;
            let manifest = experiments::write_outputs(&cfg, &table, &out)?;
            eprintln!("wrote {} rows to {} and {}", table.rows.len(), out.display(), manifest.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Certification(msg)) => {
            eprintln!("certification failure: {msg}");
            ExitCode::from(3)
        }
    }
}
