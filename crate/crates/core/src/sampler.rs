//! Seeded sampling from the product measure `μ(p)` and Monte Carlo brackets
//! for the expected uniform deviation `Δ_n = E sup_j |p̃_j − p_j|`.
//!
//! # Randomness
//!
//! Every block is drawn from a ChaCha8 stream: the generator is seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and repetition `r` selects stream `r`.
//! Columns are filled in order, 64 rows per word. A Bernoulli(`p`) lane is
//! decided by comparing fresh uniform bits against the exact binary expansion
//! of the `f64` value `p`, so the output depends only on integer arithmetic
//! and is identical on every platform.
//!
//! # Tail accounting
//!
//! Only coordinates `1..=J` are sampled. The contribution of `j > J` is
//! bracketed according to [`TailMode`]; see [`deviation_mc`].

use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{self, Tail};
use crate::profiles::{Profile, ProfileError, Range, TailSum};

/// Upper bound on `J · ⌈n/64⌉` words per sampled block.
pub const MAX_BLOCK_WORDS: u64 = 1 << 26;
/// Default failure budget for tail truncation.
pub const DEFAULT_DELTA: f64 = 1e-3;

const MAGIC: &[u8; 8] = b"LGCBLK01";
const MAX_MOMENT: u32 = 64;
const MAX_TRUNCATION: u64 = 1 << 60;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("no certified truncation index below 2^60 (n = {n}, delta = {delta})")]
    TruncationTooLarge { n: u64, delta: f64 },
    #[error("block of {cols} columns and {n} rows exceeds the memory budget")]
    BlockTooLarge { cols: u64, n: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed block file: {0}")]
    Format(String),
}

/// How coordinates beyond the truncation index are accounted for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TailMode {
    /// `ṗ_j = 0` beyond `J`: nothing to account for.
    Exact,
    /// `Σ ṗ_j < ∞`; with probability at least `1 − tail_risk` no tail
    /// coordinate sees its minority outcome.
    Summable,
    /// `Σ ṗ_j = ∞` but `Σ ṗ_j^m < ∞`; with probability at least
    /// `1 − tail_risk` no tail coordinate sees `m` minority outcomes.
    Divergent { moment: u32 },
    /// No certificate; the tail is bracketed by `[0, 1]`.
    Unmodeled,
}

impl TailMode {
    pub fn label(&self) -> String {
        match self {
            TailMode::Exact => "exact".into(),
            TailMode::Summable => "summable".into(),
            TailMode::Divergent { moment } => format!("divergent(m={moment})"),
            TailMode::Unmodeled => "unmodeled".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub j: u64,
    pub mode: TailMode,
    /// Bound on the probability that the tail misbehaves.
    pub risk: f64,
}

fn binomial(n: u64, m: u32) -> f64 {
    if m as u64 > n {
        return 0.0;
    }
    let mut acc = 1.0f64;
    for i in 0..m as u64 {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn tail_risk(p: &Profile, n: u64, j: u64, mode: TailMode) -> Result<f64, ProfileError> {
    Ok(match mode {
        TailMode::Exact => 0.0,
        TailMode::Summable => (n as f64 * p.dot_tail_moment(j, 1)?.upper()).min(1.0),
        TailMode::Divergent { moment } => (binomial(n, moment) * p.dot_tail_moment(j, moment)?.upper()).min(1.0),
        TailMode::Unmodeled => 1.0,
    })
}

/// Smallest `J` with `factor · Σ_{j>J} ṗ_j^m ≤ delta`, by doubling then bisection.
fn smallest_index(p: &Profile, m: u32, factor: f64, delta: f64) -> Result<Option<u64>, ProfileError> {
    let ok = |j: u64| -> Result<bool, ProfileError> { Ok(factor * p.dot_tail_moment(j, m)?.upper() <= delta) };
    if ok(0)? {
        return Ok(Some(0));
    }
    let mut hi = 1u64;
    while !ok(hi)? {
        if hi >= MAX_TRUNCATION {
            return Ok(None);
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Chooses the truncation index and tail mode for sample size `n`.
///
/// * finite `ṗ` support: `J` is the last index with `ṗ_j > 0` (exact mode);
/// * `Σ ṗ_j < ∞`: smallest `J` with `n Σ_{j>J} ṗ_j ≤ delta`;
/// * otherwise the smallest `m ≥ 2` with `Σ ṗ_j^m < ∞` and the smallest `J`
///   with `C(n, m) Σ_{j>J} ṗ_j^m ≤ delta`.
pub fn truncation_index(p: &Profile, n: u64, delta: f64) -> Result<Truncation, SampleError> {
    if n == 0 {
        return Err(SampleError::Invalid("n must be >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SampleError::Invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if let Some(end) = p.dot_support_end() {
        return Ok(Truncation {
            j: end,
            mode: TailMode::Exact,
            risk: 0.0,
        });
    }
    if !p.dot_tail_moment(0, 1)?.is_divergent() {
        let j = smallest_index(p, 1, n as f64, delta)?.ok_or(SampleError::TruncationTooLarge { n, delta })?;
        let mode = TailMode::Summable;
        return Ok(Truncation {
            j,
            mode,
            risk: tail_risk(p, n, j, mode)?,
        });
    }
    for m in 2..=MAX_MOMENT.min(n as u32) {
        if let TailSum::Bounded { .. } = p.dot_tail_moment(0, m)? {
            let j = smallest_index(p, m, binomial(n, m), delta)?
                .ok_or(SampleError::TruncationTooLarge { n, delta })?;
            let mode = TailMode::Divergent { moment: m };
            return Ok(Truncation {
                j,
                mode,
                risk: tail_risk(p, n, j, mode)?,
            });
        }
    }
    Err(ProfileError::Uncertifiable {
        what: "truncation index",
        why: "no tail moment of order <= min(n, 64) converges",
    }
    .into())
}

/// An `n × J` binary matrix stored column-major, 64 rows per word.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBlock {
    n: usize,
    cols: usize,
    words: usize,
    data: Vec<u64>,
    seed: u64,
    stream: u64,
    pub tail_mode: TailMode,
    pub tail_risk: f64,
    profile: Option<Profile>,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    n: u64,
    #[serde(rename = "J")]
    cols: u64,
    seed: u64,
    stream: u64,
    tail_mode: TailMode,
    tail_risk: f64,
    row_bytes: u64,
    profile: Option<Profile>,
}

/// Draws 64 Bernoulli(`p`) lanes at once; `lanes` masks the active lanes.
fn bernoulli_word(rng: &mut ChaCha8Rng, p: f64, lanes: u64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return lanes;
    }
    let bits = p.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    let (mant, exp) = if raw_exp == 0 {
        (bits & ((1 << 52) - 1), -1074i64)
    } else {
        ((bits & ((1 << 52) - 1)) | (1 << 52), raw_exp - 1075)
    };
    // p = mant · 2^exp; binary digit k ≥ 1 after the point is bit (−k − exp) of mant.
    let tz = mant.trailing_zeros() as i64;
    let last = -exp - tz;
    let first = -exp - 52;
    let mut undecided = lanes;
    let mut ones = 0u64;
    let mut k = 1i64;
    // Leading zero digits: a lane survives only while its uniform digits are zero.
    while k < first && undecided != 0 {
        undecided &= !rng.next_u64();
        k += 1;
    }
    while k <= last && undecided != 0 {
        let u = rng.next_u64();
        let shift = -k - exp;
        if (mant >> shift) & 1 == 1 {
            ones |= undecided & !u;
            undecided &= u;
        } else {
            undecided &= !u;
        }
        k += 1;
    }
    ones
}

impl SampleBlock {
    fn zeros(n: usize, cols: usize) -> Self {
        let words = n.div_ceil(64);
        SampleBlock {
            n,
            cols,
            words,
            data: vec![0; words * cols],
            seed: 0,
            stream: 0,
            tail_mode: TailMode::Unmodeled,
            tail_risk: 1.0,
            profile: None,
        }
    }

    /// Builds a block from explicit rows (all of equal length).
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self, SampleError> {
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SampleError::Invalid("rows have different lengths".into()));
        }
        let mut b = Self::zeros(n, cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &bit) in row.iter().enumerate() {
                if bit {
                    b.data[j * b.words + i / 64] |= 1 << (i % 64);
                }
            }
        }
        Ok(b)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of sampled coordinates `J`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn profile(&self) -> Option<&Profile> {
        self.profile.as_ref()
    }

    /// Entry for row `i` and coordinate `j` (both 0-based).
    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.n && j < self.cols, "index out of range");
        (self.data[j * self.words + i / 64] >> (i % 64)) & 1 == 1
    }

    /// Packed words of coordinate `j` (0-based); bit `i % 64` of word `i / 64` is row `i`.
    pub fn column_words(&self, j: usize) -> &[u64] {
        &self.data[j * self.words..(j + 1) * self.words]
    }

    pub fn column_ones(&self, j: usize) -> u32 {
        self.column_words(j).iter().map(|w| w.count_ones()).sum()
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn row(&self, i: usize) -> Vec<bool> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// Writes the documented binary container: magic `LGCBLK01`, a
    /// little-endian `u32` header length, a JSON header, then `n` rows of
    /// `⌈J/8⌉` bytes with coordinate `j` at bit `j % 8` of byte `j / 8`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SampleError> {
        let row_bytes = self.cols.div_ceil(8);
        let header = BlockHeader {
            n: self.n as u64,
            cols: self.cols as u64,
            seed: self.seed,
            stream: self.stream,
            tail_mode: self.tail_mode,
            tail_risk: self.tail_risk,
            row_bytes: row_bytes as u64,
            profile: self.profile.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| SampleError::Format(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| SampleError::Format("header too large".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        let mut row = vec![0u8; row_bytes];
        for i in 0..self.n {
            row.fill(0);
            for j in 0..self.cols {
                if self.get(i, j) {
                    row[j / 8] |= 1 << (j % 8);
                }
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SampleError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SampleError::Format("bad magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: BlockHeader = serde_json::from_slice(&json).map_err(|e| SampleError::Format(e.to_string()))?;
        let row_bytes = (h.cols as usize).div_ceil(8);
        if h.row_bytes as usize != row_bytes {
            return Err(SampleError::Format("row_bytes does not match J".into()));
        }
        let mut b = Self::zeros(h.n as usize, h.cols as usize);
        b.seed = h.seed;
        b.stream = h.stream;
        b.tail_mode = h.tail_mode;
        b.tail_risk = h.tail_risk;
        b.profile = h.profile;
        let mut row = vec![0u8; row_bytes];
        for i in 0..b.n {
            r.read_exact(&mut row)?;
            for j in 0..b.cols {
                if (row[j / 8] >> (j % 8)) & 1 == 1 {
                    b.data[j * b.words + i / 64] |= 1 << (i % 64);
                }
            }
        }
        Ok(b)
    }
}

fn check_block_size(n: u64, cols: u64) -> Result<(), SampleError> {
    if cols.saturating_mul(n.div_ceil(64)) > MAX_BLOCK_WORDS || cols > usize::MAX as u64 {
        return Err(SampleError::BlockTooLarge { cols, n });
    }
    Ok(())
}

/// Samples coordinates `1..=cols` of `n` i.i.d. draws from `μ(p)` on stream `stream`.
pub fn sample_block_stream(p: &Profile, n: usize, cols: u64, seed: u64, stream: u64) -> Result<SampleBlock, SampleError> {
    check_block_size(n as u64, cols)?;
    let mut b = SampleBlock::zeros(n, cols as usize);
    b.seed = seed;
    b.stream = stream;
    b.profile = Some(p.clone());
    fill_block(&mut b, p);
    Ok(b)
}

/// As [`sample_block_stream`] on stream 0, with tail metadata computed at `cols`.
pub fn sample_block(p: &Profile, n: usize, cols: u64, seed: u64) -> Result<SampleBlock, SampleError> {
    let mut b = sample_block_stream(p, n, cols, seed, 0)?;
    let (mode, risk) = tail_at(p, n as u64, cols)?;
    b.tail_mode = mode;
    b.tail_risk = risk;
    Ok(b)
}

/// Tail mode and risk when truncating at an arbitrary `cols`.
fn tail_at(p: &Profile, n: u64, cols: u64) -> Result<(TailMode, f64), SampleError> {
    if p.dot_support_end().is_some_and(|e| e <= cols) {
        return Ok((TailMode::Exact, 0.0));
    }
    match truncation_index(p, n, 0.5) {
        Ok(t) if t.mode != TailMode::Exact => {
            let risk = tail_risk(p, n, cols, t.mode)?;
            Ok((t.mode, risk))
        }
        _ => Ok((TailMode::Unmodeled, 1.0)),
    }
}

fn fill_block(b: &mut SampleBlock, p: &Profile) {
    let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
    rng.set_stream(b.stream);
    let full_words = b.n / 64;
    let rem = b.n % 64;
    for j in 0..b.cols {
        let pj = p.value(j as u64 + 1);
        let col = &mut b.data[j * b.words..(j + 1) * b.words];
        for w in col.iter_mut().take(full_words) {
            *w = bernoulli_word(&mut rng, pj, u64::MAX);
        }
        if rem > 0 {
            col[full_words] = bernoulli_word(&mut rng, pj, (1u64 << rem) - 1);
        }
    }
}

/// Estimator selector for [`deviation_mc`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorId {
    /// Empirical mean.
    Eme,
    /// Pattern-test hybrid. `horizon = Some(h)` runs the finite-window test on
    /// coordinates `1..=h`; `None` evaluates the test on the whole infinite
    /// sample, where by the zero-one law it is a deterministic property of `p`.
    Hybrid { horizon: Option<u64> },
    /// Empirical mean on `1..=⌈kappa·n⌉`, 1/2 afterwards.
    Truncated { kappa: f64 },
}

impl EstimatorId {
    pub fn label(&self) -> String {
        match self {
            EstimatorId::Eme => "eme".into(),
            EstimatorId::Hybrid { horizon: None } => "hybrid".into(),
            EstimatorId::Hybrid { horizon: Some(h) } => format!("hybrid(window={h})"),
            EstimatorId::Truncated { kappa } => format!("truncated(kappa={kappa})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    pub low: f64,
    pub high: f64,
    pub std_err: f64,
    pub reps: u64,
    pub tail_bias: f64,
    pub n: u64,
    /// Number of sampled coordinates.
    pub truncation: u64,
    pub tail_mode: TailMode,
    pub tail_risk: f64,
    /// Fraction of repetitions where the pattern test fired (hybrid only).
    pub phi_rate: Option<f64>,
}

impl DeviationEstimate {
    pub fn mid(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// Per-repetition outcome: bounds on the realised sup error plus test flag.
#[derive(Clone, Copy, Debug)]
struct Rep {
    prefix: f64,
    low: f64,
    high: f64,
    flag: bool,
}

/// How the unsampled tail enters one repetition.
#[derive(Clone, Copy, Debug)]
enum TailPlan {
    /// Tail error is the deterministic value given.
    Known(f64),
    /// EME tail under a truncation certificate, with `sup_{j>J} ṗ_j`.
    Eme { mode: TailMode, risk: f64, dot_sup: f64 },
}

fn eme_plan(p: &Profile, n: u64, cols: u64, mode: TailMode) -> Result<(TailPlan, f64), SampleError> {
    Ok(match mode {
        TailMode::Exact => (TailPlan::Known(0.0), 0.0),
        TailMode::Unmodeled => (
            TailPlan::Eme {
                mode,
                risk: 1.0,
                dot_sup: 0.5,
            },
            1.0,
        ),
        _ => {
            let risk = tail_risk(p, n, cols, mode)?;
            let plan = TailPlan::Eme {
                mode,
                risk,
                dot_sup: p.dot_tail_range(cols)?.hi,
            };
            (plan, risk)
        }
    })
}

/// When the hybrid switches to its constant branch.
#[derive(Clone, Copy, Debug)]
enum Switch {
    Never,
    Always,
    Window(u64),
}

/// Everything fixed before the repetitions run.
struct Plan {
    cols: u64,
    eme_tail: TailPlan,
    mode: TailMode,
    risk: f64,
    /// Range of `p_j` beyond `cols`, bounding a constant estimate's tail error.
    const_range: Option<Range>,
    switch: Switch,
}

fn plan(p: &Profile, est: EstimatorId, n: u64, delta: f64) -> Result<Plan, SampleError> {
    match est {
        EstimatorId::Eme => {
            let t = truncation_index(p, n, delta)?;
            let (eme_tail, risk) = eme_plan(p, n, t.j, t.mode)?;
            Ok(Plan {
                cols: t.j,
                eme_tail,
                mode: t.mode,
                risk,
                const_range: None,
                switch: Switch::Never,
            })
        }
        EstimatorId::Truncated { kappa } => {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(SampleError::Invalid("kappa must be positive and finite".into()));
            }
            let k = (kappa * n as f64).ceil().max(1.0) as u64;
            Ok(Plan {
                cols: k,
                eme_tail: TailPlan::Known(0.5 - p.dot_tail_range(k)?.lo),
                mode: TailMode::Exact,
                risk: 0.0,
                const_range: None,
                switch: Switch::Never,
            })
        }
        EstimatorId::Hybrid { horizon: None } => {
            if p.pattern_infinitely_often(n)? {
                Ok(Plan {
                    cols: n,
                    eme_tail: TailPlan::Known(0.0),
                    mode: TailMode::Exact,
                    risk: 0.0,
                    const_range: Some(p.tail_range(n)?),
                    switch: Switch::Always,
                })
            } else {
                let mut plan = plan(p, EstimatorId::Eme, n, delta)?;
                plan.switch = Switch::Never;
                Ok(plan)
            }
        }
        EstimatorId::Hybrid { horizon: Some(h) } => {
            let (cols, mode) = match truncation_index(p, n, delta) {
                Ok(t) => (t.j.max(h).max(n), t.mode),
                Err(SampleError::Profile(_)) => (h.max(n), TailMode::Unmodeled),
                Err(e) => return Err(e),
            };
            let (eme_tail, risk) = eme_plan(p, n, cols, mode)?;
            Ok(Plan {
                cols,
                eme_tail,
                mode,
                risk,
                const_range: p.tail_range(cols).ok(),
                switch: Switch::Window(h),
            })
        }
    }
}

/// Bounds `(low, high)` on the sup error of the EME given the prefix error.
fn eme_rep_bounds(prefix: f64, n: u64, plan: TailPlan) -> (f64, f64, f64) {
    match plan {
        TailPlan::Known(v) => {
            let x = prefix.max(v);
            (x, x, 0.0)
        }
        TailPlan::Eme { mode, risk, dot_sup } => match mode {
            TailMode::Exact => (prefix, prefix, 0.0),
            TailMode::Summable => {
                let good = prefix.max(dot_sup);
                ((1.0 - risk) * good + risk * prefix, (1.0 - risk) * good + risk, risk)
            }
            TailMode::Divergent { moment } => {
                let inv_n = 1.0 / n as f64;
                let low = prefix.max(inv_n);
                let good = prefix.max(dot_sup).max((moment - 1) as f64 * inv_n);
                (low, (1.0 - risk) * good + risk, risk)
            }
            TailMode::Unmodeled => (prefix, 1.0, 1.0),
        },
    }
}

fn prefix_error(values: &[f64], p: &Profile) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(j, v)| (v - p.value(j as u64 + 1)).abs())
        .fold(0.0, f64::max)
}

/// Monte Carlo bracket for `Δ_n` of estimator `est` under `μ(p)`.
///
/// Each repetition samples the certified prefix and bounds the realised sup
/// error over all coordinates. Depending on the tail mode:
///
/// * exact: the error is the prefix error;
/// * summable: on the good event the tail error is `sup_{j>J} ṗ_j`; the
///   failure probability `r` mixes in `[prefix, 1]`;
/// * divergent with moment `m`: almost surely infinitely many tail
///   coordinates see a minority outcome, so the error is at least `1/n`; on
///   the good event it is at most `max(sup_{j>J} ṗ_j, (m−1)/n)`.
///
/// Repetition `r` uses stream `r` of `seed`, and results are reduced in
/// repetition order, so the output does not depend on the thread count.
pub fn deviation_mc(
    p: &Profile,
    est: EstimatorId,
    n: u64,
    reps: u64,
    delta: f64,
    seed: u64,
) -> Result<DeviationEstimate, SampleError> {
    if n == 0 || reps == 0 {
        return Err(SampleError::Invalid("n and reps must be >= 1".into()));
    }
    let nu = n as usize;
    let plan = plan(p, est, n, delta)?;
    let cols = plan.cols;
    check_block_size(n, cols)?;

    let outcomes: Vec<Rep> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Rep, SampleError> {
            let block = sample_block_stream(p, nu, cols, seed, r)?;
            let (flag, estimate) = match est {
                EstimatorId::Eme => (false, estimators::eme(&block)),
                EstimatorId::Truncated { kappa } => (false, estimators::truncated_estimate(&block, kappa)),
                EstimatorId::Hybrid { .. } => {
                    let flag = match plan.switch {
                        Switch::Never => false,
                        Switch::Always => true,
                        Switch::Window(h) => estimators::phi_test(&block, 1..=h.min(cols)).flag,
                    };
                    (flag, estimators::hybrid_from_flag(&block, flag))
                }
            };
            let prefix = prefix_error(&estimate.values, p);
            let (low, high) = match estimate.beyond_j {
                Tail::Constant(c) => {
                    let tail = plan
                        .const_range
                        .map(|range| (c - range.lo).abs().max((range.hi - c).abs()));
                    match tail {
                        Some(t) => (prefix.max(t), prefix.max(t)),
                        None => (prefix, 1.0),
                    }
                }
                _ => {
                    let (lo, hi, _) = eme_rep_bounds(prefix, n, plan.eme_tail);
                    (lo, hi)
                }
            };
            Ok(Rep {
                prefix,
                low,
                high,
                flag,
            })
        })
        .collect::<Result<_, _>>()?;

    let count = outcomes.len() as f64;
    let mut sum_low = 0.0;
    let mut sum_high = 0.0;
    let mut sum_mid = 0.0;
    let mut flags = 0u64;
    for o in &outcomes {
        sum_low += o.low;
        sum_high += o.high;
        sum_mid += 0.5 * (o.low + o.high);
        flags += o.flag as u64;
        debug_assert!(o.prefix <= o.high + 1e-12);
    }
    let mean_mid = sum_mid / count;
    let var = if outcomes.len() > 1 {
        outcomes
            .iter()
            .map(|o| {
                let d = 0.5 * (o.low + o.high) - mean_mid;
                d * d
            })
            .sum::<f64>()
            / (count - 1.0)
    } else {
        0.0
    };
    let low = sum_low / count;
    let high = (sum_high / count).min(1.0).max(low);
    Ok(DeviationEstimate {
        low,
        high,
        std_err: (var / count).sqrt(),
        reps,
        tail_bias: high - low,
        n,
        truncation: cols,
        tail_mode: plan.mode,
        tail_risk: plan.risk,
        phi_rate: matches!(est, EstimatorId::Hybrid { .. }).then(|| flags as f64 / count),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_word_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(bernoulli_word(&mut rng, 0.0, u64::MAX), 0);
        assert_eq!(bernoulli_word(&mut rng, 1.0, 0xff), 0xff);
        assert_eq!(bernoulli_word(&mut rng, 0.5, 0), 0);
    }

    #[test]
    fn bernoulli_rate_matches_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in [0.3, 0.001, 0.75, 1e-9, 0.5 + 1e-12] {
            let words = 40_000;
            let ones: u64 = (0..words)
                .map(|_| bernoulli_word(&mut rng, p, u64::MAX).count_ones() as u64)
                .sum();
            let total = (words * 64) as f64;
            let sd = (p * (1.0 - p) / total).sqrt();
            assert!((ones as f64 / total - p).abs() <= 5.0 * sd + 1e-12, "p = {p}");
        }
    }

    #[test]
    fn power_law_truncation_examples() {
        let t = truncation_index(&Profile::power_law(0.5).unwrap(), 10, 1e-3).unwrap();
        assert_eq!(t.mode, TailMode::Summable);
        assert!((9_000..=11_000).contains(&t.j), "J = {}", t.j);
        assert!(t.risk <= 1e-3);
        let t = truncation_index(&Profile::power_law(2.0).unwrap(), 4, 1e-3).unwrap();
        assert_eq!(t.mode, TailMode::Divergent { moment: 3 });
        // 4 · Σ_{j>J} (j+1)^{-3/2} ≈ 8 / √J ≤ 1e-3
        assert!(t.j > 50_000_000 && t.j < 70_000_000, "J = {}", t.j);
    }

    #[test]
    fn step_is_exact() {
        let t = truncation_index(&Profile::step(0.1, 100).unwrap(), 50, 1e-3).unwrap();
        assert_eq!((t.j, t.mode), (100, TailMode::Exact));
    }
}
