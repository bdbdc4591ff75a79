//! Closed-form bounds: Bernoulli KL divergences, inclusion–exclusion, Fano
//! and union lower bounds, the two-regime rate expression for `Δ_n`, and the
//! step-profile minimax construction.
//!
//! The universal constants of the asymptotic statements are unspecified, so
//! every constant here is a runtime parameter; the defaults are arbitrary
//! choices, not values from any proof.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::{ExtReal, Profile, ProfileError, TailSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

fn domain(msg: impl Into<String>) -> BoundsError {
    BoundsError::Domain(msg.into())
}

fn check_prob(name: &str, v: f64) -> Result<(), BoundsError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(domain(format!("{name} = {v} is not in [0, 1]")))
    }
}

/// `x log(x/y)` with `0 log 0 = 0`.
fn xlogxy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if y == 0.0 {
        f64::INFINITY
    } else {
        x * (x / y).ln()
    }
}

/// `h(q‖q′) = q log(q/q′) + (1−q) log((1−q)/(1−q′))`, infinite when `q′`
/// sits on a boundary that `q` does not.
pub fn bernoulli_kl(q: f64, q_prime: f64) -> Result<f64, BoundsError> {
    check_prob("q", q)?;
    check_prob("q_prime", q_prime)?;
    if q == q_prime {
        return Ok(0.0);
    }
    Ok(xlogxy(q, q_prime) + xlogxy(1.0 - q, 1.0 - q_prime))
}

/// `h(q‖q′) + h(q′‖q) = (q′ − q) log(q′(1−q) / (q(1−q′)))` for `q, q′ ∈ (0,1)`.
pub fn symmetric_kl(q: f64, q_prime: f64) -> f64 {
    if q == q_prime {
        return 0.0;
    }
    (q_prime - q) * ((q_prime / q).ln() + ((1.0 - q) / (1.0 - q_prime)).ln())
}

/// `(lower, value, upper)` for `(q′−q)²/q′ ≤ h(q‖q′)+h(q′‖q) ≤ 2(q′−q)²/q`.
pub fn sandwich_s(q: f64, q_prime: f64) -> (f64, f64, f64) {
    let d = q_prime - q;
    (d * d / q_prime, symmetric_kl(q, q_prime), 2.0 * d * d / q)
}

/// `(h(q‖q′)+h(q′‖q)) / (q · x log x)` with `x = (q′−q)/q`; meaningful for `q′ ≥ 9q`.
pub fn sandwich_t_ratio(q: f64, q_prime: f64) -> f64 {
    let x = (q_prime - q) / q;
    symmetric_kl(q, q_prime) / (q * x * x.ln())
}

/// `α_{N+1} = x_{N+1} + (1 − x_{N+1}) α_N` with `α_0 = 0`.
pub fn alpha_ie(xs: &[f64]) -> Result<f64, BoundsError> {
    let mut a = 0.0;
    for &x in xs {
        check_prob("x", x)?;
        a = x + (1.0 - x) * a;
    }
    Ok(a)
}

/// `max(0, (α/2)(1 − (β + log 2)/log r))`.
pub fn fano_bound(alpha: f64, beta: f64, r: u64) -> Result<f64, BoundsError> {
    if r < 2 {
        return Err(domain("fano_bound needs r >= 2"));
    }
    if !(alpha >= 0.0) || !(beta >= 0.0) {
        return Err(domain("alpha and beta must be non-negative"));
    }
    if beta.is_infinite() {
        return Ok(0.0);
    }
    let v = 0.5 * alpha * (1.0 - (beta + std::f64::consts::LN_2) / (r as f64).ln());
    Ok(v.max(0.0))
}

/// `(1 − e^{−1}) · min(1, Σ ps)`, a lower bound on the union of independent events.
pub fn union_lower_bound(ps: &[f64]) -> Result<f64, BoundsError> {
    let mut sum = 0.0;
    for &p in ps {
        check_prob("p", p)?;
        sum += p;
    }
    Ok((1.0 - (-1.0f64).exp()) * sum.min(1.0))
}

/// Result of solving `h(q‖q′) + h(q′‖q) = target` for `q′ ∈ [q, 1/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QPrime {
    pub value: f64,
    pub saturated: bool,
    pub residual: f64,
    pub iterations: u32,
}

pub const QPRIME_TOL: f64 = 1e-12;
const QPRIME_MAX_ITER: u32 = 200;

/// Bisection for the increasing map `q′ ↦ h(q‖q′) + h(q′‖q)` on `[q, 1/2]`.
pub fn solve_qprime(q: f64, target: f64) -> Result<QPrime, BoundsError> {
    if !(q > 0.0 && q <= 0.5) {
        return Err(domain(format!("q = {q} is not in (0, 1/2]")));
    }
    if !(target >= 0.0 && target.is_finite()) {
        return Err(domain(format!("target = {target} must be finite and >= 0")));
    }
    if target == 0.0 {
        return Ok(QPrime {
            value: q,
            saturated: false,
            residual: 0.0,
            iterations: 0,
        });
    }
    let f = |x: f64| symmetric_kl(q, x) - target;
    let top = f(0.5);
    if top <= 0.0 {
        return Ok(QPrime {
            value: 0.5,
            saturated: top < 0.0,
            residual: top.abs(),
            iterations: 0,
        });
    }
    let (mut lo, mut hi) = (q, 0.5);
    let mut iterations = 0;
    let mut mid = 0.5 * (lo + hi);
    while iterations < QPRIME_MAX_ITER {
        iterations += 1;
        mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || mid <= lo || mid >= hi {
            break;
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = f(mid).abs();
    if residual > QPRIME_TOL {
        return Err(domain(format!("bisection stalled with residual {residual:e}")));
    }
    Ok(QPrime {
        value: mid,
        saturated: false,
        residual,
        iterations,
    })
}

/// The family `p^(1), …, p^(J+1)`: bumps at `k ∈ [J]` and the flat step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepProfiles {
    pub q: f64,
    pub q_prime: f64,
    #[serde(rename = "j_plus_1")]
    pub support: u64,
}

impl StepProfiles {
    pub fn len(&self) -> u64 {
        self.support
    }

    pub fn is_empty(&self) -> bool {
        self.support == 0
    }

    /// `p^(k)` for `k ∈ [1, J+1]`.
    pub fn profile(&self, k: u64) -> Profile {
        assert!(k >= 1 && k <= self.support, "k out of range");
        let p = if k == self.support {
            Profile::step(self.q, self.support)
        } else {
            Profile::step_bump(self.q, self.q_prime, k, self.support)
        };
        p.expect("validated at construction")
    }

    pub fn iter(&self) -> impl Iterator<Item = Profile> + '_ {
        (1..=self.support).map(|k| self.profile(k))
    }

    pub fn to_vec(&self) -> Vec<Profile> {
        self.iter().collect()
    }
}

pub fn step_profiles(q: f64, q_prime: f64, support: u64) -> Result<StepProfiles, BoundsError> {
    if !(0.0 <= q && q <= q_prime && q_prime <= 0.5) {
        return Err(domain(format!("need 0 <= q <= q' <= 1/2, got q = {q}, q' = {q_prime}")));
    }
    if support == 0 {
        return Err(domain("J+1 must be >= 1"));
    }
    Ok(StepProfiles { q, q_prime, support })
}

/// Constants of the minimax statement. Not taken from any proof.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxConstants {
    #[serde(rename = "C")]
    pub big_c: f64,
    pub c: f64,
    pub c_prime: f64,
}

impl Default for MinimaxConstants {
    fn default() -> Self {
        MinimaxConstants {
            big_c: 8.0,
            c: 0.1,
            c_prime: 4.0,
        }
    }
}

/// Constant pair realising `≍` in the two-regime rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub c_low: f64,
    pub c_high: f64,
}

impl Default for RateConstants {
    fn default() -> Self {
        RateConstants {
            c_low: 0.25,
            c_high: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `n · sup_r 2r ṗ_(r) > 1`
    Active,
    Dormant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightBoundReport {
    pub regime: Regime,
    /// The rate expression before constants.
    pub value: f64,
    pub value_low: f64,
    pub value_high: f64,
    pub width: ExtReal,
    pub constants: RateConstants,
}

const RATE_TOL: f64 = 1e-12;

/// The two-regime expression, evaluated on the rearrangement of `ṗ`:
/// `1 ∧ (√(S/n) + sup_r log(r+1) / (n log(2 + log(r+1)/(n ṗ_(r)))))` when
/// `n sup_r 2r ṗ_(r) > 1`, and `(1/n) ∧ Σ ṗ_j` otherwise.
pub fn tight_bound(p: &Profile, n: u64, constants: RateConstants) -> Result<TightBoundReport, BoundsError> {
    if n == 0 {
        return Err(domain("n must be >= 1"));
    }
    if !(constants.c_low > 0.0 && constants.c_low <= constants.c_high) {
        return Err(domain("need 0 < c_low <= c_high"));
    }
    let nf = n as f64;
    let width = p.width(RATE_TOL)?;
    let active = match width {
        ExtReal::Infinite => true,
        ExtReal::Finite(w) => nf * w > 1.0,
    };
    let (regime, lo, hi) = if active {
        let s = p.functional_s(RATE_TOL)?.value;
        let l = p.log_term(nf, RATE_TOL)?;
        let v = match (s, l) {
            (ExtReal::Finite(s), ExtReal::Finite(l)) => ((s / nf).sqrt() + l).min(1.0),
            _ => 1.0,
        };
        (Regime::Active, v, v)
    } else {
        match p.dot_tail_moment(0, 1)? {
            TailSum::Bounded { lo, hi } => (Regime::Dormant, lo.min(1.0 / nf), hi.min(1.0 / nf)),
            TailSum::Divergent => (Regime::Dormant, 1.0 / nf, 1.0 / nf),
        }
    };
    Ok(TightBoundReport {
        regime,
        value: 0.5 * (lo + hi),
        value_low: constants.c_low * lo,
        value_high: constants.c_high * hi,
        width,
        constants,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    /// `c′ log n / n ≤ s/t ≤ e^{−1}`
    pub sample_range: bool,
    /// The sample-size threshold of the statement, evaluated verbatim.
    pub n_threshold: f64,
    pub n_threshold_met: bool,
    /// `t/s` is strictly above `e`, so `log log(t/s) > 0`.
    pub ratio_above_e: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InClassCheck {
    /// `max_k max(S(p^(k)) − S(p^(J+1)), T(p^(k)) − T(p^(J+1)), 0)`, also
    /// covering the bump terms `q′ log 2 ≤ q log(J+1)` and
    /// `log 2 / log(1/q′) ≤ log(J+1) / log(1/q)`.
    pub residual: f64,
    /// `T(p^(J+1)) ≤ t`.
    pub t_within: bool,
    pub holds: bool,
    /// Profiles checked through the functional engine (all bumps share `S`, `T`).
    pub checked: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxInstance {
    pub s: f64,
    pub t: f64,
    pub n: u64,
    pub constants: MinimaxConstants,
    pub ratio: f64,
    pub q: f64,
    /// `t log(t/s)` before rounding.
    pub log_j_plus_1_target: f64,
    #[serde(rename = "J_plus_1")]
    pub j_plus_1: u64,
    /// `S(p^(J+1))` after rounding.
    pub s_rounded: f64,
    pub s_rel_err: f64,
    /// `log(1 + 1/J) / (t log(t/s))`, the worst rounding error.
    pub s_rel_bound: f64,
    /// `log(J+1)/log(1/q)` before rounding.
    pub t_unrounded: f64,
    /// `t (1 + log log(t/s) / log(t/s))^{-1}`.
    pub t_closed_form: f64,
    pub t_rounded: f64,
    pub kl_target: f64,
    pub q_prime: QPrime,
    pub in_class: InClassCheck,
    /// `(q′−q)²/q′ ≤ h+h ≤ 2(q′−q)²/q`.
    pub sandwich_s: bool,
    /// Ratio bracket `[1/2, 4]`, when `q′ ≥ 9q`.
    pub sandwich_t: Option<bool>,
    /// `q′ − q ≥ √(s/(4Cn))`.
    pub sqrt_gap: bool,
    /// Fano with `α = q′ − q`, `β = n(h(q‖q′) + h(q′‖q))`, `r = J+1`.
    pub fano_value: f64,
    /// `C (1 + log(t/s) / log log(t/s))^{-1}`.
    #[serde(rename = "Q_factor")]
    pub q_factor: f64,
    pub lower_bound: f64,
    pub validity: Validity,
}

impl MinimaxInstance {
    pub fn profiles(&self) -> StepProfiles {
        StepProfiles {
            q: self.q,
            q_prime: self.q_prime.value,
            support: self.j_plus_1,
        }
    }
}

/// Builds the step-profile family for `(s, t, n)` and checks its properties.
pub fn minimax_instance(s: f64, t: f64, n: u64, constants: MinimaxConstants) -> Result<MinimaxInstance, BoundsError> {
    if !(s > 0.0 && s.is_finite() && t > 0.0 && t.is_finite()) || n == 0 {
        return Err(domain("s, t and n must be positive"));
    }
    let MinimaxConstants { big_c, c, c_prime } = constants;
    if !(big_c > 0.0 && c > 0.0 && c_prime > 0.0) {
        return Err(domain("constants must be positive"));
    }
    let ratio = t / s;
    let e = std::f64::consts::E;
    if ratio <= e {
        return Err(domain(format!("t/s = {ratio} must exceed e")));
    }
    let nf = n as f64;
    let lr = ratio.ln();
    let llr = lr.ln();
    let q = 1.0 / (ratio * lr);
    let log_target = t * lr;
    if log_target > 53.0 * std::f64::consts::LN_2 {
        return Err(domain("J+1 would exceed 2^53"));
    }
    let j_plus_1 = log_target.exp().ceil().max(2.0) as u64;
    let log_j = (j_plus_1 as f64).ln();
    let j = (j_plus_1 - 1) as f64;

    let flat = Profile::step(q, j_plus_1)?;
    let s_flat = flat.functional_s(RATE_TOL)?.value.as_f64();
    let t_flat = flat.functional_t(RATE_TOL)?.value.as_f64();
    let s_rel_err = s_flat / s - 1.0;
    let s_rel_bound = (1.0 / j).ln_1p() / log_target;
    let t_unrounded = log_target / (1.0 / q).ln();
    let t_closed_form = t / (1.0 + llr / lr);

    let kl_target = log_j / (2.0 * big_c * nf);
    let qp = solve_qprime(q, kl_target)?;
    let family = step_profiles(q, qp.value, j_plus_1)?;

    let mut checked = vec![1, j_plus_1 - 1, (j_plus_1 / 2).max(1)];
    checked.sort_unstable();
    checked.dedup();
    checked.retain(|&k| k >= 1 && k < j_plus_1);
    let mut residual = 0.0f64;
    for &k in &checked {
        let pk = family.profile(k);
        let sk = pk.functional_s(RATE_TOL)?.value.as_f64();
        let tk = pk.functional_t(RATE_TOL)?.value.as_f64();
        residual = residual.max(sk - s_flat).max(tk - t_flat);
    }
    // The bump's own terms at rank one, as in the displayed maxima.
    let ln2 = std::f64::consts::LN_2;
    residual = residual
        .max(qp.value * ln2 - q * log_j)
        .max(ln2 / (1.0 / qp.value).ln() - log_j / (1.0 / q).ln());
    let t_within = t_flat <= t;
    let in_class = InClassCheck {
        residual,
        t_within,
        holds: residual <= 1e-12 && t_within,
        checked,
    };

    let (lo, value, hi) = sandwich_s(q, qp.value);
    let sandwich_s_ok = qp.value == q || (lo <= value && value <= hi);
    let sandwich_t = (qp.value >= 9.0 * q).then(|| {
        let r = sandwich_t_ratio(q, qp.value);
        (0.5..=4.0).contains(&r)
    });
    let sqrt_gap = qp.value - q >= (s / (4.0 * big_c * nf)).sqrt() * (1.0 - 1e-12);
    let beta = nf * (bernoulli_kl(q, qp.value)? + bernoulli_kl(qp.value, q)?);
    let fano_value = fano_bound(qp.value - q, beta, j_plus_1)?;

    let q_factor = big_c / (1.0 + lr / llr);
    let lower_bound = (c * (s / nf).sqrt()).max(q_factor * t / nf).min(1.0);

    let n_threshold = (t * t / (big_c * s) * lr) / (ratio * lr * (-log_target / std::f64::consts::LN_2).exp() - 1.0);
    let sr = s / t;
    let validity = Validity {
        sample_range: c_prime * nf.ln() / nf <= sr && sr <= 1.0 / e,
        n_threshold,
        n_threshold_met: nf >= n_threshold,
        ratio_above_e: ratio > e,
    };

    Ok(MinimaxInstance {
        s,
        t,
        n,
        constants,
        ratio,
        q,
        log_j_plus_1_target: log_target,
        j_plus_1,
        s_rounded: s_flat,
        s_rel_err,
        s_rel_bound,
        t_unrounded,
        t_closed_form,
        t_rounded: t_flat,
        kl_target,
        q_prime: qp,
        in_class,
        sandwich_s: sandwich_s_ok,
        sandwich_t,
        sqrt_gap,
        fano_value,
        q_factor,
        lower_bound,
        validity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kl_examples() {
        assert_eq!(bernoulli_kl(0.3, 0.3).unwrap(), 0.0);
        let v = 0.1 * 0.5f64.ln() + 0.9 * (9.0f64 / 8.0).ln();
        assert_relative_eq!(bernoulli_kl(0.1, 0.2).unwrap(), v, epsilon = 1e-15);
        assert_relative_eq!(bernoulli_kl(0.1, 0.2).unwrap(), 0.0366900, epsilon = 1e-7);
        assert_relative_eq!(bernoulli_kl(0.0, 0.3).unwrap(), -(0.7f64).ln(), epsilon = 1e-15);
        assert_eq!(bernoulli_kl(0.2, 0.0).unwrap(), f64::INFINITY);
        assert_eq!(bernoulli_kl(1.0, 1.0).unwrap(), 0.0);
        assert!(bernoulli_kl(1.2, 0.5).is_err());
    }

    #[test]
    fn symmetric_form_matches_sum() {
        for &(a, b) in &[(0.1, 0.2), (0.01, 0.4), (0.3, 0.5), (1e-6, 1e-3)] {
            let sum = bernoulli_kl(a, b).unwrap() + bernoulli_kl(b, a).unwrap();
            assert_relative_eq!(symmetric_kl(a, b), sum, max_relative = 1e-12);
        }
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_ie(&[0.5, 0.5]).unwrap(), 0.75);
        assert_eq!(alpha_ie(&[0.2, 1.0, 0.3]).unwrap(), 1.0);
        assert_eq!(alpha_ie(&[]).unwrap(), 0.0);
    }

    #[test]
    fn fano_examples() {
        assert_relative_eq!(fano_bound(1.0, 0.0, 4).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(fano_bound(1.0, 0.0, 2).unwrap(), 0.0);
        assert_eq!(fano_bound(1.0, f64::INFINITY, 10).unwrap(), 0.0);
        assert!(fano_bound(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn union_examples() {
        assert_eq!(union_lower_bound(&[0.0; 4]).unwrap(), 0.0);
        assert_relative_eq!(union_lower_bound(&[0.6, 0.7]).unwrap(), 0.6321205588285577, epsilon = 1e-15);
        assert!(union_lower_bound(&[0.3]).unwrap() <= 0.3);
    }

    #[test]
    fn qprime_inverts_forward_value() {
        let target = bernoulli_kl(0.1, 0.2).unwrap() + bernoulli_kl(0.2, 0.1).unwrap();
        assert_relative_eq!(target, 0.0366900 + 0.0444040, epsilon = 1e-6);
        let r = solve_qprime(0.1, target).unwrap();
        assert!(!r.saturated);
        assert_relative_eq!(r.value, 0.2, epsilon = 1e-11);
        assert!(r.residual <= QPRIME_TOL);
        assert_eq!(solve_qprime(0.1, 0.0).unwrap().value, 0.1);
        let sat = solve_qprime(0.1, 10.0).unwrap();
        assert!(sat.saturated && sat.value == 0.5);
        assert!(solve_qprime(0.0, 0.1).is_err());
    }

    #[test]
    fn step_family_distances() {
        let fam = step_profiles(0.1, 0.25, 6).unwrap();
        let all = fam.to_vec();
        assert_eq!(all.len(), 6);
        assert_eq!(all[5].value(3), 0.1);
        assert_eq!(all[5].value(7), 0.0);
        assert_eq!(all[2].value(3), 0.25);
        for a in 0..6 {
            for b in 0..6 {
                if a == b {
                    continue;
                }
                let d = (1..=8)
                    .map(|j| (all[a].value(j) - all[b].value(j)).abs())
                    .fold(0.0, f64::max);
                assert_relative_eq!(d, 0.15, epsilon = 1e-15);
            }
        }
        assert!(step_profiles(0.3, 0.2, 5).is_err());
    }

    #[test]
    fn minimax_example_e_to_e() {
        let e = std::f64::consts::E;
        let t = 2.0;
        let s = t / e.powf(e);
        let m = minimax_instance(s, t, 1000, MinimaxConstants::default()).unwrap();
        assert_relative_eq!(m.q, (-(e + 1.0)).exp(), epsilon = 1e-15);
        assert_relative_eq!(m.q, 0.0242756, epsilon = 1e-7);
        assert_relative_eq!(m.log_j_plus_1_target, 2.0 * e, epsilon = 1e-14);
        assert_eq!(m.j_plus_1, 230);
        assert!(m.in_class.holds);
        assert!(m.sandwich_s);
        assert!(m.sqrt_gap);
        assert!(minimax_instance(1.0, 2.0, 10, MinimaxConstants::default()).is_err());
    }

    #[test]
    fn tight_bound_examples() {
        let tiny = Profile::explicit(vec![1e-9]).unwrap();
        let r = tight_bound(&tiny, 10, RateConstants::default()).unwrap();
        assert_eq!(r.regime, Regime::Dormant);
        assert_relative_eq!(r.value, 1e-9, max_relative = 1e-12);
        assert_relative_eq!(r.value_low, 0.25e-9, max_relative = 1e-12);
        let step = Profile::step(0.1, 100).unwrap();
        let r = tight_bound(&step, 100, RateConstants::default()).unwrap();
        assert_eq!(r.regime, Regime::Active);
        assert!(r.value > (0.1 * 100f64.ln() / 100.0).sqrt());
        let zero = Profile::explicit(vec![0.0; 3]).unwrap();
        assert_eq!(tight_bound(&zero, 5, RateConstants::default()).unwrap().value, 0.0);
    }
}
