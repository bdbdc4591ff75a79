//! Exact `Δ_n` for profiles whose `ṗ` has finite support.
//!
//! With `Y_j ~ Binomial(n, p_j)` independent, the maximum deviation
//! `max_j |Y_j/n − p_j|` has CDF `F(v) = Π_j P(|Y_j/n − p_j| ≤ v)`, so its
//! expectation is `Σ_v v (F(v) − F(v⁻))` over the attainable values `v`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::Profile;

pub const MAX_SUPPORT: u64 = 24;
pub const MAX_N: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("profile has no finite support")]
    InfiniteSupport,
    #[error("support {j} exceeds the limit {MAX_SUPPORT}")]
    SupportTooLarge { j: u64 },
    #[error("n = {n} is outside [1, {MAX_N}]")]
    BadN { n: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactDeviation {
    pub value: f64,
    pub support_points: Vec<f64>,
    pub n: u64,
    #[serde(rename = "J")]
    pub j: u64,
}

/// Neumaier-compensated sum.
#[derive(Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// `P(Y = k)` for `Y ~ Binomial(n, p)`, `k = 0..=n`.
pub(crate) fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let n_us = n as usize;
    let mut out = vec![0.0; n_us + 1];
    if p == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p == 1.0 {
        out[n_us] = 1.0;
        return out;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut log_choose = 0.0f64;
    for k in 0..=n_us {
        if k > 0 {
            log_choose += ((n_us - k + 1) as f64).ln() - (k as f64).ln();
        }
        out[k] = (log_choose + k as f64 * lp + (n_us - k) as f64 * lq).exp();
    }
    out
}

/// Distribution of `|k/n − p|` as `(value, probability)` sorted by value,
/// merging equal values.
fn deviation_law(n: u64, p: f64) -> Vec<(f64, f64)> {
    let pmf = binomial_pmf(n, p);
    let nf = n as f64;
    let mut law: Vec<(f64, f64)> = pmf
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(k, &w)| ((k as f64 / nf - p).abs(), w))
        .collect();
    law.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(law.len());
    for (v, w) in law {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    merged
}

/// Exact `E max_j |Y_j/n − p_j|` over the support of `ṗ`.
pub fn exact_deviation(p: &Profile, n: u64) -> Result<ExactDeviation, OracleError> {
    if n == 0 || n > MAX_N {
        return Err(OracleError::BadN { n });
    }
    let j = p.dot_support_end().ok_or(OracleError::InfiniteSupport)?;
    if j > MAX_SUPPORT {
        return Err(OracleError::SupportTooLarge { j });
    }
    let laws: Vec<Vec<(f64, f64)>> = (1..=j).map(|k| deviation_law(n, p.value(k))).collect();
    let mut points: Vec<f64> = laws.iter().flatten().map(|&(v, _)| v).collect();
    points.push(0.0);
    points.sort_by(f64::total_cmp);
    points.dedup();

    // cursor[i] indexes the first atom of law i above the current point.
    let mut cursor = vec![0usize; laws.len()];
    let mut cdf: Vec<Sum> = laws.iter().map(|_| Sum::default()).collect();
    let mut prev_f = 0.0;
    let mut total = Sum::default();
    for &v in &points {
        let mut f = 1.0;
        for (i, law) in laws.iter().enumerate() {
            while cursor[i] < law.len() && law[cursor[i]].0 <= v {
                cdf[i].add(law[cursor[i]].1);
                cursor[i] += 1;
            }
            f *= if cursor[i] == law.len() { 1.0 } else { cdf[i].value().min(1.0) };
        }
        total.add(v * (f - prev_f));
        prev_f = f;
    }
    Ok(ExactDeviation {
        value: total.value().clamp(0.0, 1.0),
        support_points: points,
        n,
        j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spec_examples() {
        let half = Profile::explicit(vec![0.5]).unwrap();
        assert_relative_eq!(exact_deviation(&half, 2).unwrap().value, 0.25, epsilon = 1e-15);
        let zero = Profile::explicit(vec![0.0]).unwrap();
        assert_eq!(exact_deviation(&zero, 7).unwrap().value, 0.0);
        let small = Profile::explicit(vec![0.1]).unwrap();
        assert_relative_eq!(exact_deviation(&small, 1).unwrap().value, 0.18, epsilon = 1e-15);
    }

    #[test]
    fn pmf_sums_to_one() {
        for &(n, p) in &[(1, 0.3), (16, 0.01), (64, 0.5), (64, 0.999)] {
            let s: f64 = binomial_pmf(n, p).iter().sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn limits_enforced() {
        assert!(matches!(
            exact_deviation(&Profile::power_law(1.0).unwrap(), 4),
            Err(OracleError::InfiniteSupport)
        ));
        let big = Profile::explicit(vec![0.2; 25]).unwrap();
        assert!(matches!(exact_deviation(&big, 4), Err(OracleError::SupportTooLarge { j: 25 })));
        let one = Profile::explicit(vec![0.2]).unwrap();
        assert!(exact_deviation(&one, 65).is_err());
        assert!(exact_deviation(&one, 0).is_err());
    }

    #[test]
    fn ones_and_zeros_contribute_nothing() {
        let p = Profile::explicit(vec![1.0, 0.3, 0.0]).unwrap();
        let q = Profile::explicit(vec![0.3]).unwrap();
        assert_eq!(exact_deviation(&p, 5).unwrap().value, exact_deviation(&q, 5).unwrap().value);
    }
}
