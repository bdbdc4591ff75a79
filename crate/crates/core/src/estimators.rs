//! Estimators of `p` from a [`SampleBlock`].
//!
//! All estimators return an [`Estimate`] over the sampled coordinates
//! together with the rule used for every coordinate beyond them.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::sampler::SampleBlock;

pub use crate::profiles::Sign;

/// The implicit estimate for coordinates beyond the sampled block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Zero,
    Half,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub values: Vec<f64>,
    #[serde(rename = "beyond_J")]
    pub beyond_j: Tail,
}

impl Estimate {
    /// Estimated value of coordinate `j` (1-based).
    pub fn value(&self, j: u64) -> f64 {
        match self.values.get((j - 1) as usize) {
            Some(&v) => v,
            None => match self.beyond_j {
                Tail::Zero => 0.0,
                Tail::Half => 0.5,
                Tail::Constant(c) => c,
            },
        }
    }
}

/// Coordinatewise sample mean.
pub fn eme(block: &SampleBlock) -> Estimate {
    let n = block.n() as f64;
    Estimate {
        values: (0..block.cols()).map(|j| block.column_ones(j) as f64 / n).collect(),
        beyond_j: Tail::Zero,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiOutcome {
    pub flag: bool,
    /// 1-based coordinates whose column is the test pattern.
    pub hits: Vec<u64>,
}

/// Packed words of the pattern: first `⌊n/2⌋` rows zero, the rest one.
fn pattern_words(n: usize) -> Vec<u64> {
    let zeros = n / 2;
    (0..n.div_ceil(64))
        .map(|w| {
            let mut word = 0u64;
            for b in 0..64 {
                let i = w * 64 + b;
                if i >= zeros && i < n {
                    word |= 1 << b;
                }
            }
            word
        })
        .collect()
}

/// Finds the coordinates in `horizon` (1-based, clipped to the block) whose
/// column has its first `⌊n/2⌋` entries zero and the remaining `⌈n/2⌉` one.
///
/// The flag is raised when a hit falls in the upper half of the window,
/// i.e. among its last `⌈len/2⌉` coordinates.
pub fn phi_test(block: &SampleBlock, horizon: RangeInclusive<u64>) -> PhiOutcome {
    let lo = (*horizon.start()).max(1);
    let hi = (*horizon.end()).min(block.cols() as u64);
    if block.n() == 0 || lo > hi {
        return PhiOutcome {
            flag: false,
            hits: Vec::new(),
        };
    }
    let pattern = pattern_words(block.n());
    let hits: Vec<u64> = (lo..=hi)
        .filter(|&j| block.column_words((j - 1) as usize) == pattern.as_slice())
        .collect();
    let len = hi - lo + 1;
    let upper_start = lo + len / 2;
    let flag = hits.iter().any(|&j| j >= upper_start);
    PhiOutcome { flag, hits }
}

/// The hybrid estimator given the test outcome: the average of the first
/// `min(n, J)` empirical means as a constant estimate when `flag` is set,
/// the empirical mean otherwise.
pub fn hybrid_from_flag(block: &SampleBlock, flag: bool) -> Estimate {
    let base = eme(block);
    if !flag {
        return base;
    }
    let m = block.n().min(block.cols());
    let c = if m == 0 {
        0.0
    } else {
        base.values[..m].iter().sum::<f64>() / m as f64
    };
    Estimate {
        values: vec![c; block.cols()],
        beyond_j: Tail::Constant(c),
    }
}

/// Hybrid estimator with the pattern test run on `horizon`.
pub fn hybrid_estimate(block: &SampleBlock, horizon: RangeInclusive<u64>) -> Estimate {
    let flag = phi_test(block, horizon).flag;
    hybrid_from_flag(block, flag)
}

/// Sample mean on the first `k = ⌈kappa·n⌉ ∧ J` coordinates, 1/2 elsewhere.
pub fn truncated_estimate(block: &SampleBlock, kappa: f64) -> Estimate {
    let k = ((kappa * block.n() as f64).ceil().max(0.0) as usize).min(block.cols());
    let mut est = eme(block);
    for v in est.values.iter_mut().skip(k) {
        *v = 0.5;
    }
    est.beyond_j = Tail::Half;
    est
}

/// Majority vote of a column; ties go to `Minus`.
pub fn majority_sign(column: &[bool]) -> Sign {
    let ones = column.iter().filter(|&&b| b).count();
    majority_from_count(ones, column.len())
}

pub fn majority_from_count(ones: usize, n: usize) -> Sign {
    if 2 * ones > n {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(rows: &[&[u8]]) -> SampleBlock {
        let rows: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect();
        SampleBlock::from_rows(&rows).unwrap()
    }

    #[test]
    fn eme_arithmetic() {
        let b = block(&[&[1, 0], &[1, 1]]);
        assert_eq!(eme(&b).values, vec![1.0, 0.5]);
        let z: &[u8] = &[0, 0, 0];
        assert_eq!(eme(&block(&[z; 4])).values, vec![0.0; 3]);
    }

    #[test]
    fn phi_pattern_and_window() {
        // n = 4: pattern is (0,0,1,1) down a column.
        let b = block(&[&[0, 0, 1, 0], &[0, 0, 1, 0], &[1, 0, 1, 1], &[1, 0, 1, 1]]);
        let out = phi_test(&b, 1..=4);
        assert_eq!(out.hits, vec![1, 4]);
        assert!(out.flag);
        let lower_only = phi_test(&b, 1..=2);
        assert_eq!(lower_only.hits, vec![1]);
        assert!(!lower_only.flag);
        let ones = block(&[&[1, 1], &[1, 1], &[1, 1]]);
        assert!(!phi_test(&ones, 1..=2).flag);
    }

    #[test]
    fn odd_n_pattern_has_more_ones() {
        let b = block(&[&[0], &[1], &[1]]);
        assert_eq!(phi_test(&b, 1..=1).hits, vec![1]);
    }

    #[test]
    fn hybrid_constant_branch() {
        let b = block(&[&[0, 1, 0], &[1, 1, 0]]);
        let e = hybrid_from_flag(&b, true);
        assert_eq!(e.values, vec![0.75; 3]);
        assert_eq!(e.beyond_j, Tail::Constant(0.75));
        assert_eq!(hybrid_from_flag(&b, false), eme(&b));
    }

    #[test]
    fn truncation_sets_half() {
        let rows = vec![vec![true; 10]; 4];
        let b = SampleBlock::from_rows(&rows).unwrap();
        let e = truncated_estimate(&b, 1.0);
        assert_eq!(&e.values[..4], &[1.0; 4]);
        assert_eq!(&e.values[4..], &[0.5; 6]);
        assert_eq!(truncated_estimate(&b, 1e9).values, eme(&b).values);
    }

    #[test]
    fn majority_examples() {
        assert_eq!(majority_sign(&[true, true, false]), Sign::Plus);
        assert_eq!(majority_sign(&[false; 4]), Sign::Minus);
        assert_eq!(majority_sign(&[true, false]), Sign::Minus);
    }

    #[test]
    fn estimate_json_shape() {
        let e = Estimate {
            values: vec![0.5],
            beyond_j: Tail::Constant(0.25),
        };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["beyond_J"]["constant"], 0.25);
    }
}
