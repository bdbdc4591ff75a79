//! Probability profiles `p ∈ [0,1]^ℕ` and their rearrangement functionals.
//!
//! A [`Profile`] is a closed-form family plus a finite map of overrides.
//! Indices are 1-based. Besides pointwise evaluation every family carries
//! enough tail structure to certify
//!
//! * `S(p) = sup_r ṗ_(r) log(r+1)` and `T(p) = sup_r log(r+1) / log(1/ṗ_(r))`
//!   where `ṗ_(0) ≥ ṗ_(1) ≥ …` is the non-increasing rearrangement of
//!   `ṗ_j = min(p_j, 1 − p_j)`, ranked from zero so that `q` repeated on
//!   `J+1` coordinates gives `S = q log(J+1)`;
//! * tail sums `Σ_{j>J} p_j` and tail moments `Σ_{j>J} ṗ_j^m` as brackets;
//! * the range of `p_j` and `ṗ_j` over `j > J`.
//!
//! Profiles serialize as `{"family": ..., "params": {...}, "overrides": {...}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rearrange::{self, Attained, Functional, TailKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("override index must be >= 1")]
    ZeroIndex,
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("cannot certify {what} for this profile: {why}")]
    Uncertifiable {
        what: &'static str,
        why: &'static str,
    },
}

pub(crate) fn dot_value(x: f64) -> f64 {
    x.min(1.0 - x)
}

/// SplitMix64 finalizer, used for seeded per-index signs.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn seeded_sign(seed: u64, j: u64) -> Sign {
    if mix64(seed ^ mix64(j)) >> 63 == 0 {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// A sign `b ∈ {−1, +1}`; serialized as the integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    /// `b (x − 1/2) + 1/2`.
    pub fn reflect(self, x: f64) -> f64 {
        match self {
            Sign::Plus => x,
            Sign::Minus => 1.0 - x,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.as_i8()
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(format!("sign must be 1 or -1, got {other}")),
        }
    }
}

/// An infinite sign sequence `b_1, b_2, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignSequence {
    /// `head` followed by `tail` forever.
    Eventually { head: Vec<Sign>, tail: Sign },
    /// Independent fair signs derived from a seed.
    Rademacher { seed: u64 },
}

impl SignSequence {
    pub fn constant(s: Sign) -> Self {
        SignSequence::Eventually {
            head: Vec::new(),
            tail: s,
        }
    }

    pub fn sign(&self, j: u64) -> Sign {
        match self {
            SignSequence::Eventually { head, tail } => {
                head.get((j - 1) as usize).copied().unwrap_or(*tail)
            }
            SignSequence::Rademacher { seed } => seeded_sign(*seed, j),
        }
    }
}

/// Extended non-negative real.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtReal::Infinite)
    }

    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => write!(f, "inf"),
        }
    }
}

/// Where a supremum is reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttainedAt {
    /// Rank in the non-increasing rearrangement.
    Rank(f64),
    Limit,
    /// Every term vanishes.
    Nowhere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessPoint {
    pub rank: f64,
    pub term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub value: ExtReal,
    /// Largest rank inspected explicitly before a tail certificate took over.
    pub truncation_index: u64,
    pub tolerance: f64,
    pub attained_at: AttainedAt,
    /// Terms growing without bound, present only for infinite values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness: Vec<WitnessPoint>,
}

/// A tail series `Σ_{j>J} …`, either bracketed or divergent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailSum {
    Bounded { lo: f64, hi: f64 },
    Divergent,
}

impl TailSum {
    fn exact(v: f64) -> Self {
        TailSum::Bounded { lo: v, hi: v }
    }

    fn add(self, other: TailSum) -> TailSum {
        match (self, other) {
            (TailSum::Bounded { lo: a, hi: b }, TailSum::Bounded { lo: c, hi: d }) => {
                TailSum::Bounded { lo: a + c, hi: b + d }
            }
            _ => TailSum::Divergent,
        }
    }

    pub fn upper(self) -> f64 {
        match self {
            TailSum::Bounded { hi, .. } => hi,
            TailSum::Divergent => f64::INFINITY,
        }
    }

    pub fn is_divergent(self) -> bool {
        matches!(self, TailSum::Divergent)
    }
}

/// Closed interval `[lo, hi]` of values over an index set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    fn point(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    fn join(self, other: Range) -> Range {
        Range {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    fn include(self, v: f64) -> Range {
        self.join(Range::point(v))
    }
}

/// Which side of 1/2 the coordinates of a decaying profile accumulate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Orientation {
    /// `p_j → 0` on all but finitely many coordinates.
    Low,
    /// `p_j → 1` on all but finitely many coordinates.
    High,
    /// Infinitely many coordinates on each side.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    /// `min(1/2, (j+1)^(−1/t))`.
    PowerLaw { t: f64 },
    /// `q` on `[1, J+1]`, zero afterwards.
    Step {
        q: f64,
        #[serde(rename = "j_plus_1")]
        support: u64,
    },
    /// A step with coordinate `k` raised to `q_prime`.
    StepBump {
        q: f64,
        q_prime: f64,
        k: u64,
        #[serde(rename = "j_plus_1")]
        support: u64,
    },
    /// `c` everywhere.
    Const { c: f64 },
    /// `1/2 ± c/√j` clamped to `[0,1]`, signs seeded per index.
    HalfBand { c: f64, seed: u64 },
    /// `min(1/2, 1/ln(j+2))`.
    InvLog,
    /// `values[j−1]`, zero beyond the list.
    Explicit { values: Vec<f64> },
    /// Coordinatewise `b_j (p_j − 1/2) + 1/2`.
    Reflect {
        base: Box<Profile>,
        signs: SignSequence,
    },
    /// Coordinatewise `min(p_j, 1 − p_j)`.
    Dot { base: Box<Profile> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "ProfileRepr")]
pub struct Profile {
    family: Family,
    overrides: BTreeMap<u64, f64>,
}

#[derive(Serialize, Deserialize)]
struct ProfileRepr {
    #[serde(flatten)]
    family: Family,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "override_keys")]
    overrides: BTreeMap<u64, f64>,
}

/// Decimal string keys, which survive the buffering done by `flatten`.
mod override_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<u64, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse::<u64>().map(|k| (k, v)).map_err(D::Error::custom))
            .collect()
    }
}

impl TryFrom<ProfileRepr> for Profile {
    type Error = ProfileError;

    fn try_from(r: ProfileRepr) -> Result<Self, Self::Error> {
        let p = Profile {
            family: r.family,
            overrides: r.overrides,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<Profile> for ProfileRepr {
    fn from(p: Profile) -> Self {
        ProfileRepr {
            family: p.family,
            overrides: p.overrides,
        }
    }
}

fn check_prob(name: &'static str, v: f64) -> Result<(), ProfileError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ProfileError::InvalidParam {
            name,
            value: v,
            reason: "must lie in [0, 1]",
        })
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<(), ProfileError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ProfileError::InvalidParam {
            name,
            value: v,
            reason: "must be positive and finite",
        })
    }
}

fn check_index(name: &'static str, v: u64) -> Result<(), ProfileError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ProfileError::InvalidParam {
            name,
            value: v as f64,
            reason: "must be >= 1",
        })
    }
}

fn check_tol(tol: f64) -> Result<(), ProfileError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(ProfileError::BadTolerance(tol))
    }
}

/// `#{j ∈ (lo, hi] : j ∉ excl}`.
fn count_free(lo: u64, hi: u64, excl: &BTreeSet<u64>) -> u64 {
    if hi <= lo {
        return 0;
    }
    hi - lo - excl.range(lo + 1..=hi).count() as u64
}

fn first_free(after: u64, excl: &BTreeSet<u64>) -> u64 {
    let mut j = after + 1;
    while excl.contains(&j) {
        j += 1;
    }
    j
}

/// What a tail series sums.
#[derive(Clone, Copy, Debug)]
enum Series {
    Raw,
    Dot(u32),
}

impl Series {
    fn term(self, v: f64) -> f64 {
        match self {
            Series::Raw => v,
            Series::Dot(m) => dot_value(v).powi(m as i32),
        }
    }
}

/// `Σ_{j > j0} (j+1)^(−s)` for `s > 1`, first terms exact then integral bounds.
fn p_series_bracket(j0: u64, s: f64) -> (f64, f64) {
    const EXACT: u64 = 64;
    let mut acc = 0.0;
    for j in j0 + 1..=j0 + EXACT {
        acc += ((j + 1) as f64).powf(-s);
    }
    let j1 = (j0 + EXACT) as f64;
    let lo = (j1 + 2.0).powf(1.0 - s) / (s - 1.0);
    let hi = (j1 + 1.0).powf(1.0 - s) / (s - 1.0);
    (acc + lo, acc + hi)
}

impl Profile {
    fn from_family(family: Family) -> Result<Self, ProfileError> {
        let p = Profile {
            family,
            overrides: BTreeMap::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn power_law(t: f64) -> Result<Self, ProfileError> {
        Self::from_family(Family::PowerLaw { t })
    }

    /// `q` on the first `support` coordinates (`support = J+1`).
    pub fn step(q: f64, support: u64) -> Result<Self, ProfileError> {
        Self::from_family(Family::Step { q, support })
    }

    pub fn step_bump(q: f64, q_prime: f64, k: u64, support: u64) -> Result<Self, ProfileError> {
        Self::from_family(Family::StepBump {
            q,
            q_prime,
            k,
            support,
        })
    }

    pub fn constant(c: f64) -> Result<Self, ProfileError> {
        Self::from_family(Family::Const { c })
    }

    pub fn half_band(c: f64, seed: u64) -> Result<Self, ProfileError> {
        Self::from_family(Family::HalfBand { c, seed })
    }

    pub fn inv_log() -> Self {
        Profile {
            family: Family::InvLog,
            overrides: BTreeMap::new(),
        }
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self, ProfileError> {
        Self::from_family(Family::Explicit { values })
    }

    pub fn with_override(mut self, j: u64, v: f64) -> Result<Self, ProfileError> {
        if j == 0 {
            return Err(ProfileError::ZeroIndex);
        }
        check_prob("override", v)?;
        self.overrides.insert(j, v);
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn overrides(&self) -> &BTreeMap<u64, f64> {
        &self.overrides
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        match &self.family {
            Family::PowerLaw { t } => check_positive("t", *t)?,
            Family::Step { q, support } => {
                check_prob("q", *q)?;
                check_index("j_plus_1", *support)?;
            }
            Family::StepBump {
                q,
                q_prime,
                k,
                support,
            } => {
                check_prob("q", *q)?;
                check_prob("q_prime", *q_prime)?;
                check_index("k", *k)?;
                check_index("j_plus_1", *support)?;
            }
            Family::Const { c } => check_prob("c", *c)?,
            Family::HalfBand { c, .. } => {
                if !(*c >= 0.0 && c.is_finite()) {
                    return Err(ProfileError::InvalidParam {
                        name: "c",
                        value: *c,
                        reason: "must be non-negative and finite",
                    });
                }
            }
            Family::InvLog => {}
            Family::Explicit { values } => {
                for v in values {
                    check_prob("values", *v)?;
                }
            }
            Family::Reflect { base, .. } | Family::Dot { base } => base.validate()?,
        }
        for (&j, &v) in &self.overrides {
            if j == 0 {
                return Err(ProfileError::ZeroIndex);
            }
            check_prob("override", v)?;
        }
        Ok(())
    }

    fn family_value(&self, j: u64) -> f64 {
        match &self.family {
            Family::PowerLaw { t } => TailKind::PowerLaw(*t).value_j(j as f64),
            Family::Step { q, support } => {
                if j <= *support {
                    *q
                } else {
                    0.0
                }
            }
            Family::StepBump {
                q,
                q_prime,
                k,
                support,
            } => {
                if j == *k {
                    *q_prime
                } else if j <= *support {
                    *q
                } else {
                    0.0
                }
            }
            Family::Const { c } => *c,
            Family::HalfBand { c, seed } => {
                let delta = c / (j as f64).sqrt();
                let v = match seeded_sign(*seed, j) {
                    Sign::Plus => 0.5 + delta,
                    Sign::Minus => 0.5 - delta,
                };
                v.clamp(0.0, 1.0)
            }
            Family::InvLog => TailKind::InvLog.value_j(j as f64),
            Family::Explicit { values } => values.get((j - 1) as usize).copied().unwrap_or(0.0),
            Family::Reflect { base, signs } => signs.sign(j).reflect(base.value(j)),
            Family::Dot { base } => dot_value(base.value(j)),
        }
    }

    /// `p_j` for `j ≥ 1`.
    ///
    /// # Panics
    /// If `j == 0`.
    pub fn value(&self, j: u64) -> f64 {
        assert!(j >= 1, "profile indices start at 1");
        match self.overrides.get(&j) {
            Some(&v) => v,
            None => self.family_value(j),
        }
    }

    /// `ṗ_j = min(p_j, 1 − p_j)`.
    pub fn dot_at(&self, j: u64) -> f64 {
        dot_value(self.value(j))
    }

    /// The profile `j ↦ min(p_j, 1 − p_j)`.
    pub fn dot(&self) -> Profile {
        if matches!(self.family, Family::Dot { .. }) && self.overrides.is_empty() {
            return self.clone();
        }
        Profile {
            family: Family::Dot {
                base: Box::new(self.clone()),
            },
            overrides: BTreeMap::new(),
        }
    }

    /// The `b`-reflection `j ↦ b_j (p_j − 1/2) + 1/2`.
    pub fn reflect(&self, signs: SignSequence) -> Profile {
        Profile {
            family: Family::Reflect {
                base: Box::new(self.clone()),
                signs,
            },
            overrides: BTreeMap::new(),
        }
    }

    fn functional(&self, f: Functional, tol: f64) -> Result<FunctionalReport, ProfileError> {
        check_tol(tol)?;
        let r = rearrange::sup(self, f, tol);
        Ok(FunctionalReport {
            value: r.value,
            truncation_index: if r.examined >= u64::MAX as f64 {
                u64::MAX
            } else {
                r.examined.max(0.0) as u64
            },
            tolerance: tol,
            attained_at: match r.attained {
                Attained::Rank(k) => AttainedAt::Rank(k),
                Attained::Limit => AttainedAt::Limit,
                Attained::Nowhere => AttainedAt::Nowhere,
            },
            witness: r
                .witness
                .into_iter()
                .map(|(rank, term)| WitnessPoint { rank, term })
                .collect(),
        })
    }

    /// `S(p) = sup_{r≥0} ṗ_(r) log(r+1)`, ranks counted from zero.
    pub fn functional_s(&self, tol: f64) -> Result<FunctionalReport, ProfileError> {
        self.functional(Functional::S, tol)
    }

    /// `T(p) = sup_{r≥0} log(r+1) / log(1/ṗ_(r))`, ranks counted from zero.
    pub fn functional_t(&self, tol: f64) -> Result<FunctionalReport, ProfileError> {
        self.functional(Functional::T, tol)
    }

    /// `sup_{r≥1} 2 r ṗ_(r)`.
    pub(crate) fn width(&self, tol: f64) -> Result<ExtReal, ProfileError> {
        Ok(self.functional(Functional::Width, tol)?.value)
    }

    /// `sup_{r≥1} log(r+1) / (n log(2 + log(r+1)/(n ṗ_(r))))`.
    pub(crate) fn log_term(&self, n: f64, tol: f64) -> Result<ExtReal, ProfileError> {
        Ok(self.functional(Functional::Log { n }, tol)?.value)
    }

    /// `Σ_{j>J} p_j`.
    pub fn tail_sum(&self, j0: u64) -> Result<TailSum, ProfileError> {
        self.series(j0, Series::Raw, &BTreeSet::new())
    }

    /// `Σ_{j>J} ṗ_j^m` for `m ≥ 1`.
    pub fn dot_tail_moment(&self, j0: u64, m: u32) -> Result<TailSum, ProfileError> {
        if m == 0 {
            return Ok(TailSum::Divergent);
        }
        self.series(j0, Series::Dot(m), &BTreeSet::new())
    }

    /// Closure of `{ṗ_j : j > J}`.
    pub fn dot_tail_range(&self, j0: u64) -> Result<Range, ProfileError> {
        self.range(j0, true, &BTreeSet::new())
    }

    /// Closure of `{p_j : j > J}`.
    pub fn tail_range(&self, j0: u64) -> Result<Range, ProfileError> {
        self.range(j0, false, &BTreeSet::new())
    }

    /// Whether `ṗ_j → 0`.
    pub fn is_decaying(&self) -> bool {
        match &self.family {
            Family::PowerLaw { .. }
            | Family::InvLog
            | Family::Step { .. }
            | Family::StepBump { .. }
            | Family::Explicit { .. } => true,
            Family::Const { c } => dot_value(*c) == 0.0,
            Family::HalfBand { .. } => false,
            Family::Reflect { base, .. } | Family::Dot { base } => base.is_decaying(),
        }
    }

    /// An index beyond which every `ṗ_j` vanishes, if one exists.
    pub fn dot_support_end(&self) -> Option<u64> {
        let base = match &self.family {
            Family::PowerLaw { .. } | Family::InvLog | Family::HalfBand { .. } => None,
            Family::Step { q, support } => Some(if dot_value(*q) > 0.0 { *support } else { 0 }),
            Family::StepBump {
                q,
                q_prime,
                k,
                support,
            } => {
                let a = if dot_value(*q) > 0.0 { *support } else { 0 };
                let b = if dot_value(*q_prime) > 0.0 { *k } else { 0 };
                Some(a.max(b))
            }
            Family::Const { c } => {
                if dot_value(*c) > 0.0 {
                    None
                } else {
                    Some(0)
                }
            }
            Family::Explicit { values } => Some(
                values
                    .iter()
                    .rposition(|&v| dot_value(v) > 0.0)
                    .map_or(0, |i| i as u64 + 1),
            ),
            Family::Reflect { base, .. } | Family::Dot { base } => base.dot_support_end(),
        }?;
        let ov = self
            .overrides
            .iter()
            .filter(|(_, &v)| dot_value(v) > 0.0)
            .map(|(&j, _)| j)
            .max()
            .unwrap_or(0);
        Some(base.max(ov))
    }

    pub(crate) fn orientation(&self) -> Orientation {
        match &self.family {
            Family::Reflect { base, signs } => match signs {
                SignSequence::Eventually { tail: Sign::Plus, .. } => base.orientation(),
                SignSequence::Eventually { tail: Sign::Minus, .. } => match base.orientation() {
                    Orientation::Low => Orientation::High,
                    Orientation::High => Orientation::Low,
                    Orientation::Mixed => Orientation::Mixed,
                },
                SignSequence::Rademacher { .. } => Orientation::Mixed,
            },
            Family::Const { c } if *c == 1.0 => Orientation::High,
            _ => Orientation::Low,
        }
    }

    fn series(&self, j0: u64, s: Series, excl: &BTreeSet<u64>) -> Result<TailSum, ProfileError> {
        let mut excl2 = excl.clone();
        excl2.extend(self.overrides.keys().copied());
        let mut total = self.family_series(j0, s, &excl2)?;
        for (&j, &v) in &self.overrides {
            if j > j0 && !excl.contains(&j) {
                total = total.add(TailSum::exact(s.term(v)));
            }
        }
        Ok(total)
    }

    fn family_series(&self, j0: u64, s: Series, excl: &BTreeSet<u64>) -> Result<TailSum, ProfileError> {
        Ok(match &self.family {
            Family::PowerLaw { t } => {
                let m = match s {
                    Series::Raw => 1.0,
                    Series::Dot(m) => m as f64,
                };
                let expo = m / t;
                if expo <= 1.0 {
                    return Ok(TailSum::Divergent);
                }
                let kind = TailKind::PowerLaw(*t);
                let capped = match rearrange_cap_count(kind) {
                    Some(c) => c,
                    None => {
                        return Err(ProfileError::Uncertifiable {
                            what: "tail sum",
                            why: "cap region too large",
                        })
                    }
                };
                let half = 0.5f64.powf(m);
                let cap_part = count_free(j0, capped, excl) as f64 * half;
                let j1 = j0.max(capped);
                let (mut lo, mut hi) = p_series_bracket(j1, expo);
                for &e in excl.range(j1 + 1..) {
                    let v = s.term(kind.value_j(e as f64));
                    lo -= v;
                    hi -= v;
                }
                TailSum::Bounded {
                    lo: (lo + cap_part).max(0.0),
                    hi: (hi + cap_part).max(0.0),
                }
            }
            Family::InvLog => TailSum::Divergent,
            Family::Step { q, support } => {
                TailSum::exact(count_free(j0, *support, excl) as f64 * s.term(*q))
            }
            Family::StepBump {
                q,
                q_prime,
                k,
                support,
            } => {
                let mut e = excl.clone();
                e.insert(*k);
                let mut v = count_free(j0, *support, &e) as f64 * s.term(*q);
                if *k > j0 && !excl.contains(k) {
                    v += s.term(*q_prime);
                }
                TailSum::exact(v)
            }
            Family::Const { c } => {
                if s.term(*c) == 0.0 {
                    TailSum::exact(0.0)
                } else {
                    TailSum::Divergent
                }
            }
            Family::HalfBand { .. } => TailSum::Divergent,
            Family::Explicit { values } => {
                let mut acc = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    let j = i as u64 + 1;
                    if j > j0 && !excl.contains(&j) {
                        acc += s.term(v);
                    }
                }
                TailSum::exact(acc)
            }
            Family::Dot { base } => match s {
                Series::Raw => base.series(j0, Series::Dot(1), excl)?,
                Series::Dot(_) => base.series(j0, s, excl)?,
            },
            Family::Reflect { base, signs } => match s {
                Series::Dot(_) => base.series(j0, s, excl)?,
                Series::Raw => match signs {
                    SignSequence::Eventually { head, tail } => {
                        let len = head.len() as u64;
                        let mut acc = 0.0;
                        for j in j0 + 1..=len {
                            if !excl.contains(&j) {
                                acc += signs.sign(j).reflect(base.value(j));
                            }
                        }
                        let j1 = j0.max(len);
                        let rest = match tail {
                            Sign::Plus => base.series(j1, Series::Raw, excl)?,
                            Sign::Minus => reflected_tail(base, j1, excl)?,
                        };
                        TailSum::exact(acc).add(rest)
                    }
                    SignSequence::Rademacher { .. } => reflected_tail(base, j0, excl)?,
                },
            },
        })
    }

    fn range(&self, j0: u64, dotted: bool, excl: &BTreeSet<u64>) -> Result<Range, ProfileError> {
        let mut excl2 = excl.clone();
        excl2.extend(self.overrides.keys().copied());
        let mut r = self.family_range(j0, dotted, &excl2)?;
        for (&j, &v) in &self.overrides {
            if j > j0 && !excl.contains(&j) {
                r = r.include(if dotted { dot_value(v) } else { v });
            }
        }
        Ok(r)
    }

    fn family_range(&self, j0: u64, dotted: bool, excl: &BTreeSet<u64>) -> Result<Range, ProfileError> {
        let g = |v: f64| if dotted { dot_value(v) } else { v };
        Ok(match &self.family {
            Family::PowerLaw { .. } | Family::InvLog => Range {
                lo: 0.0,
                hi: self.family_value(first_free(j0, excl)),
            },
            Family::Step { q, support } => {
                let mut r = Range::point(0.0);
                if count_free(j0, *support, excl) > 0 {
                    r = r.include(g(*q));
                }
                r
            }
            Family::StepBump {
                q,
                q_prime,
                k,
                support,
            } => {
                let mut r = Range::point(0.0);
                let mut e = excl.clone();
                e.insert(*k);
                if count_free(j0, *support, &e) > 0 {
                    r = r.include(g(*q));
                }
                if *k > j0 && !excl.contains(k) {
                    r = r.include(g(*q_prime));
                }
                r
            }
            Family::Const { c } => Range::point(g(*c)),
            Family::HalfBand { c, seed } => {
                if *c == 0.0 {
                    Range::point(0.5)
                } else if dotted {
                    Range {
                        lo: dot_value(self.family_value(first_free(j0, excl))),
                        hi: 0.5,
                    }
                } else {
                    let mut plus = None;
                    let mut minus = None;
                    let mut j = j0;
                    for _ in 0..4096 {
                        j = first_free(j, excl);
                        match seeded_sign(*seed, j) {
                            Sign::Plus if plus.is_none() => plus = Some(j),
                            Sign::Minus if minus.is_none() => minus = Some(j),
                            _ => {}
                        }
                        if plus.is_some() && minus.is_some() {
                            break;
                        }
                    }
                    match (plus, minus) {
                        (Some(a), Some(b)) => Range {
                            lo: self.family_value(b),
                            hi: self.family_value(a),
                        },
                        _ => {
                            return Err(ProfileError::Uncertifiable {
                                what: "tail range",
                                why: "no sign change within the scan window",
                            })
                        }
                    }
                }
            }
            Family::Explicit { values } => {
                let mut r = Range::point(0.0);
                for (i, &v) in values.iter().enumerate() {
                    let j = i as u64 + 1;
                    if j > j0 && !excl.contains(&j) {
                        r = r.include(g(v));
                    }
                }
                r
            }
            Family::Dot { base } => base.range(j0, true, excl)?,
            Family::Reflect { base, signs } => {
                if dotted {
                    base.range(j0, true, excl)?
                } else {
                    match signs {
                        SignSequence::Eventually { head, tail } => {
                            let len = head.len() as u64;
                            let j1 = j0.max(len);
                            let b = base.range(j1, false, excl)?;
                            let mut r = match tail {
                                Sign::Plus => b,
                                Sign::Minus => Range {
                                    lo: 1.0 - b.hi,
                                    hi: 1.0 - b.lo,
                                },
                            };
                            for j in j0 + 1..=len {
                                if !excl.contains(&j) {
                                    r = r.include(signs.sign(j).reflect(base.value(j)));
                                }
                            }
                            r
                        }
                        SignSequence::Rademacher { .. } => {
                            return Err(ProfileError::Uncertifiable {
                                what: "tail range",
                                why: "random reflections mix both sides of 1/2",
                            })
                        }
                    }
                }
            }
        })
    }

    /// Whether the pattern event of the test for `T = ∞` happens infinitely
    /// often with probability one (otherwise with probability zero).
    ///
    /// The events are independent across coordinates with probability
    /// `(1−p_j)^⌊n/2⌋ p_j^⌈n/2⌉`, so this is the divergence of that series.
    pub fn pattern_infinitely_often(&self, n: u64) -> Result<bool, ProfileError> {
        if n == 0 {
            return Err(ProfileError::InvalidParam {
                name: "n",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        if n == 1 {
            return Ok(self.tail_sum(0)?.is_divergent());
        }
        if !self.is_decaying() {
            return Ok(true);
        }
        let zeros = (n / 2) as u32;
        let ones = n.div_ceil(2) as u32;
        let diverges = |m: u32| -> Result<bool, ProfileError> { Ok(self.dot_tail_moment(0, m)?.is_divergent()) };
        match self.orientation() {
            Orientation::Low => diverges(ones),
            Orientation::High | Orientation::Mixed => diverges(zeros),
        }
    }
}

/// `Σ_{j>j0, j∉excl} (1 − p_j)`.
fn reflected_tail(base: &Profile, j0: u64, excl: &BTreeSet<u64>) -> Result<TailSum, ProfileError> {
    let r = base.range(j0, false, excl)?;
    if r.hi < 1.0 {
        Ok(TailSum::Divergent)
    } else {
        Err(ProfileError::Uncertifiable {
            what: "tail sum",
            why: "reflected base approaches 1",
        })
    }
}

/// Number of leading PowerLaw coordinates sitting on the 1/2 cap.
fn rearrange_cap_count(kind: TailKind) -> Option<u64> {
    let TailKind::PowerLaw(t) = kind else {
        return Some(0);
    };
    let x = t * std::f64::consts::LN_2;
    if x > 40.0 {
        return None;
    }
    let mut k = (x.exp().floor() as u64).saturating_sub(1);
    while k >= 1 && kind.value_j(k as f64) < 0.5 {
        k -= 1;
    }
    while kind.value_j((k + 1) as f64) >= 0.5 {
        k += 1;
    }
    Some(k)
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            Family::PowerLaw { t } => write!(f, "power_law(t={t})")?,
            Family::Step { q, support } => write!(f, "step(q={q},j_plus_1={support})")?,
            Family::StepBump {
                q,
                q_prime,
                k,
                support,
            } => write!(f, "step_bump(q={q},q_prime={q_prime},k={k},j_plus_1={support})")?,
            Family::Const { c } => write!(f, "const(c={c})")?,
            Family::HalfBand { c, seed } => write!(f, "half_band(c={c},seed={seed})")?,
            Family::InvLog => write!(f, "inv_log")?,
            Family::Explicit { values } => {
                write!(f, "explicit(")?;
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, ")")?;
            }
            Family::Reflect { base, signs } => match signs {
                SignSequence::Eventually { head, tail } if head.is_empty() => {
                    write!(f, "reflect({base},{})", tail.as_i8())?
                }
                SignSequence::Eventually { .. } => write!(f, "reflect({base},custom)")?,
                SignSequence::Rademacher { seed } => write!(f, "reflect({base},rademacher={seed})")?,
            },
            Family::Dot { base } => write!(f, "dot({base})")?,
        }
        if !self.overrides.is_empty() {
            write!(f, "+{}overrides", self.overrides.len())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn values_per_family() {
        assert_eq!(Profile::power_law(2.0).unwrap().value(1), 0.5);
        let s = Profile::step(0.1, 100).unwrap();
        assert_eq!(s.value(5), 0.1);
        assert_eq!(s.value(100), 0.1);
        assert_eq!(s.value(101), 0.0);
        assert_eq!(Profile::constant(0.3).unwrap().value(1_000_000), 0.3);
        let b = Profile::step_bump(0.1, 0.3, 7, 10).unwrap();
        assert_eq!(b.value(7), 0.3);
        assert_eq!(b.value(8), 0.1);
        assert_eq!(b.value(11), 0.0);
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(Profile::power_law(0.0).is_err());
        assert!(Profile::step(1.5, 3).is_err());
        assert!(Profile::step(0.5, 0).is_err());
        assert!(Profile::explicit(vec![0.2, -0.1]).is_err());
        assert!(Profile::constant(0.2).unwrap().with_override(0, 0.1).is_err());
    }

    #[test]
    fn reflect_examples() {
        let p = Profile::constant(0.1).unwrap();
        let r = p.reflect(SignSequence::constant(Sign::Minus));
        assert_relative_eq!(r.value(3), 0.9);
        let id = p.reflect(SignSequence::constant(Sign::Plus));
        assert_eq!(id.value(3), 0.1);
        let e = Profile::explicit(vec![0.2, 0.8]).unwrap();
        let r = e.reflect(SignSequence::Eventually {
            head: vec![Sign::Minus, Sign::Plus],
            tail: Sign::Plus,
        });
        assert_relative_eq!(r.value(1), 0.8);
        assert_relative_eq!(r.value(2), 0.8);
    }

    #[test]
    fn dot_is_idempotent() {
        let p = Profile::explicit(vec![0.7, 0.5, 0.2]).unwrap();
        let d = p.dot();
        assert_relative_eq!(d.value(1), 0.3, epsilon = 1e-15);
        assert_eq!(d.value(2), 0.5);
        assert_eq!(d.dot(), d);
    }

    #[test]
    fn step_functionals() {
        let s = Profile::step(0.1, 100).unwrap();
        let sv = s.functional_s(1e-12).unwrap().value.finite().unwrap();
        assert_relative_eq!(sv, 0.1 * 100f64.ln(), epsilon = 1e-12);
        let tv = s.functional_t(1e-12).unwrap().value.finite().unwrap();
        assert_relative_eq!(tv, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_half_has_infinite_s() {
        let r = Profile::constant(0.5).unwrap().functional_s(1e-9).unwrap();
        assert!(r.value.is_infinite());
        assert!(!r.witness.is_empty());
    }

    #[test]
    fn all_zero_functionals_vanish() {
        let z = Profile::explicit(vec![0.0; 5]).unwrap();
        let s = z.functional_s(1e-9).unwrap();
        assert_eq!(s.value, ExtReal::Finite(0.0));
        assert_eq!(s.attained_at, AttainedAt::Nowhere);
        assert_eq!(z.functional_t(1e-9).unwrap().value, ExtReal::Finite(0.0));
    }

    #[test]
    fn power_law_t_is_exact() {
        for t in [0.5, 1.0, 2.0, 5.0, 13.0] {
            let v = Profile::power_law(t).unwrap().functional_t(1e-12).unwrap();
            assert_eq!(v.value, ExtReal::Finite(t));
        }
    }

    #[test]
    fn inv_log_has_unit_s_and_infinite_t() {
        let p = Profile::inv_log();
        let s = p.functional_s(1e-9).unwrap();
        assert_eq!(s.value, ExtReal::Finite(1.0));
        assert_eq!(s.attained_at, AttainedAt::Limit);
        assert!(p.functional_t(1e-9).unwrap().value.is_infinite());
    }

    #[test]
    fn tail_sums() {
        let s = Profile::step(0.25, 10).unwrap();
        assert_eq!(s.tail_sum(10).unwrap(), TailSum::exact(0.0));
        assert_eq!(s.tail_sum(6).unwrap(), TailSum::exact(1.0));
        assert!(Profile::power_law(2.0).unwrap().tail_sum(0).unwrap().is_divergent());
        let TailSum::Bounded { lo, hi } = Profile::power_law(0.5).unwrap().tail_sum(100).unwrap() else {
            panic!("summable")
        };
        assert!(lo >= 1.0 / 102.0 && hi <= 1.0 / 101.0 && lo <= hi);
        // Σ_{m≥102} m^-2 = ψ'(102)
        let exact = 1.0 / 101.5 + 1.0 / (6.0 * 101.5f64.powi(3));
        assert!(lo <= exact + 1e-9 && exact <= hi + 1e-9);
    }

    #[test]
    fn overrides_change_sums_and_ranges() {
        let p = Profile::step(0.1, 10).unwrap().with_override(20, 0.4).unwrap();
        assert_eq!(p.value(20), 0.4);
        let TailSum::Bounded { lo, .. } = p.tail_sum(0).unwrap() else { panic!() };
        assert_relative_eq!(lo, 1.4, epsilon = 1e-12);
        assert_eq!(p.dot_tail_range(10).unwrap(), Range { lo: 0.0, hi: 0.4 });
        assert_eq!(p.dot_support_end(), Some(20));
    }

    #[test]
    fn json_round_trip() {
        let p = Profile::step_bump(0.1, 0.2, 3, 50)
            .unwrap()
            .with_override(60, 0.5)
            .unwrap()
            .reflect(SignSequence::Rademacher { seed: 9 });
        let s = serde_json::to_string(&p).unwrap();
        let back: Profile = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let inv: Profile = serde_json::from_str(r#"{"family":"inv_log"}"#).unwrap();
        assert_eq!(inv, Profile::inv_log());
        let bad = serde_json::from_str::<Profile>(r#"{"family":"const","params":{"c":2.0}}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn half_band_stays_in_band() {
        let p = Profile::half_band(0.5, 3).unwrap();
        for j in 1..2000u64 {
            let v = p.value(j);
            assert!((v - 0.5).abs() <= 0.5 / (j as f64).sqrt() + 1e-15);
        }
        assert!(p.functional_t(1e-9).unwrap().value.is_infinite());
    }

    #[test]
    fn pattern_zero_one_law() {
        assert!(Profile::constant(0.3).unwrap().pattern_infinitely_often(32).unwrap());
        assert!(!Profile::step(0.1, 100).unwrap().pattern_infinitely_often(32).unwrap());
        // PowerLaw(t): Σ p^m diverges iff m ≤ t.
        let p = Profile::power_law(2.0).unwrap();
        assert!(p.pattern_infinitely_often(4).unwrap());
        assert!(!p.pattern_infinitely_often(10).unwrap());
        assert!(Profile::inv_log().pattern_infinitely_often(64).unwrap());
    }
}
