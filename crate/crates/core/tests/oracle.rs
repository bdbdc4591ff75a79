//! Exact deviation against joint enumeration and Monte Carlo.

use approx::assert_relative_eq;
use lgc_core::oracle::exact_deviation;
use lgc_core::sampler::{deviation_mc, EstimatorId};
use lgc_core::Profile;
use proptest::prelude::*;

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1)) as f64
}

/// `E max_j |Y_j/n − p_j|` by summing over all `(n+1)^J` joint outcomes.
fn brute_force(p: &[f64], n: u64) -> f64 {
    let j = p.len();
    let mut total = 0.0;
    let mut ks = vec![0u64; j];
    loop {
        let mut prob = 1.0;
        let mut dev = 0.0f64;
        for (i, &k) in ks.iter().enumerate() {
            prob *= choose(n, k) * p[i].powi(k as i32) * (1.0 - p[i]).powi((n - k) as i32);
            dev = dev.max((k as f64 / n as f64 - p[i]).abs());
        }
        total += prob * dev;
        let mut i = 0;
        loop {
            if i == j {
                return total;
            }
            ks[i] += 1;
            if ks[i] <= n {
                break;
            }
            ks[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn frozen_values() {
    let cases: [(&[f64], u64, f64); 4] = [
        (&[0.5], 2, 0.25),
        (&[0.1], 1, 0.18),
        (&[0.0], 9, 0.0),
        // max(|X1 − 1/2|, |X2 − 1/2|) = 1/2 always for n = 1
        (&[0.5, 0.5], 1, 0.5),
    ];
    for (p, n, want) in cases {
        let got = exact_deviation(&Profile::explicit(p.to_vec()).unwrap(), n).unwrap();
        assert_relative_eq!(got.value, want, epsilon = 1e-15);
    }
}

#[test]
fn two_coordinate_hand_value() {
    // p = (0.2, 0.6), n = 1: deviations (0.2|0.8) and (0.6|0.4).
    // max over the four outcomes: (0,0): .6, (0,1): .4, (1,0): .8, (1,1): .8
    let want = 0.6 * (0.8 * 0.4) + 0.4 * (0.8 * 0.6) + 0.8 * (0.2 * 0.4) + 0.8 * (0.2 * 0.6);
    let got = exact_deviation(&Profile::explicit(vec![0.2, 0.6]).unwrap(), 1).unwrap();
    assert_relative_eq!(got.value, want, epsilon = 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_joint_enumeration(p in prop::collection::vec(0.0f64..=1.0, 1..=3), n in 1u64..=4) {
        let exact = exact_deviation(&Profile::explicit(p.clone()).unwrap(), n).unwrap();
        prop_assert!((exact.value - brute_force(&p, n)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&exact.value));
    }

    #[test]
    fn appending_zero_is_neutral(p in prop::collection::vec(0.0f64..=1.0, 1..=6), n in 1u64..=16) {
        let a = exact_deviation(&Profile::explicit(p.clone()).unwrap(), n).unwrap().value;
        let mut q = p.clone();
        q.push(0.0);
        let b = exact_deviation(&Profile::explicit(q).unwrap(), n).unwrap().value;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reflection_invariant(p in prop::collection::vec(0.0f64..=1.0, 1..=5), n in 1u64..=12) {
        let a = exact_deviation(&Profile::explicit(p.clone()).unwrap(), n).unwrap().value;
        let flipped: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let b = exact_deviation(&Profile::explicit(flipped).unwrap(), n).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn monte_carlo_brackets_oracle() {
    let profiles = [
        vec![0.5],
        vec![0.1, 0.9, 0.3],
        vec![0.05; 6],
        vec![0.2, 0.0, 0.7, 0.45],
    ];
    for (i, v) in profiles.iter().enumerate() {
        let p = Profile::explicit(v.clone()).unwrap();
        for n in [1u64, 5, 16] {
            let exact = exact_deviation(&p, n).unwrap().value;
            let d = deviation_mc(&p, EstimatorId::Eme, n, 20_000, 1e-3, 100 + i as u64).unwrap();
            assert!(
                d.low - 4.0 * d.std_err <= exact && exact <= d.high + d.tail_risk + 4.0 * d.std_err,
                "profile {i}, n = {n}: exact {exact}, bracket [{}, {}] ± {}",
                d.low,
                d.high,
                d.std_err
            );
        }
    }
}
