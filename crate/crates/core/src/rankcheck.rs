//! Rank-preservation diagnostics.
//!
//! Observational slopes equal `beta + bias` in population. They order units
//! the same way as `beta` whenever units with larger effects also carry at
//! least as much bias; a bias that falls faster than the effect rises
//! (slope <= -1) reverses the order.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{theoretical_bias, DgpSpec, UnitParams};
use crate::error::{Error, Result};
use crate::panel::UnitEffectEstimate;
use crate::rng::substream;
use crate::stats;

/// Exact pair enumeration up to this many units, sampling above it.
pub const EXACT_PAIR_LIMIT: usize = 2000;
pub const SAMPLED_PAIRS: usize = 1_000_000;

/// Population-level check for one pair: with the larger-effect unit first,
/// its bias must be at least the other's. Equal effects always pass.
pub fn sufficient_condition_holds(i: &UnitParams, j: &UnitParams, spec: &DgpSpec) -> Result<bool> {
    let (bi, bj) = (theoretical_bias(i, spec)?, theoretical_bias(j, spec)?);
    Ok(match i.beta.total_cmp(&j.beta) {
        std::cmp::Ordering::Greater => bi >= bj,
        std::cmp::Ordering::Less => bj >= bi,
        std::cmp::Ordering::Equal => true,
    })
}

/// Count adjacent pairs (in effect order) whose bias slope is `<= -1`, which
/// inverts the population ordering of the observational slopes. Pairs with
/// equal effects are skipped.
pub fn necessary_condition_check(units: &[UnitParams], spec: &DgpSpec) -> Result<usize> {
    let mut sorted: Vec<(f64, f64)> = units
        .iter()
        .map(|u| Ok((u.beta, theoretical_bias(u, spec)?)))
        .collect::<Result<_>>()?;
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(sorted
        .windows(2)
        .filter(|w| {
            let (lo, hi) = (w[0], w[1]);
            hi.0 > lo.0 && (hi.1 - lo.1) / (hi.0 - lo.0) <= -1.0
        })
        .count())
}

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation("kendall_tau", "sequences differ in length"));
    }
    if a.len() < 2 {
        return Err(Error::validation("kendall_tau", "need at least two observations"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::validation("kendall_tau", "input contains NaN"));
    }
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    // ties in a, and joint ties in (a, b)
    let mut ties_a = 0u64;
    let mut ties_joint = 0u64;
    let mut run_a = 1u64;
    let mut run_joint = 1u64;
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            run_a += 1;
            if w[0].1 == w[1].1 {
                run_joint += 1;
            } else {
                ties_joint += run_joint * (run_joint - 1) / 2;
                run_joint = 1;
            }
        } else {
            ties_a += run_a * (run_a - 1) / 2;
            ties_joint += run_joint * (run_joint - 1) / 2;
            run_a = 1;
            run_joint = 1;
        }
    }
    ties_a += run_a * (run_a - 1) / 2;
    ties_joint += run_joint * (run_joint - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys);

    let mut ties_b = 0u64;
    let mut run_b = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_b += 1;
        } else {
            ties_b += run_b * (run_b - 1) / 2;
            run_b = 1;
        }
    }
    ties_b += run_b * (run_b - 1) / 2;

    let total = n * (n - 1) / 2;
    if ties_a == total || ties_b == total {
        return Err(Error::validation(
            "kendall_tau",
            "one input is entirely tied; tau-b is undefined",
        ));
    }
    let concordant_minus_discordant =
        total as i128 - ties_a as i128 - ties_b as i128 + ties_joint as i128 - 2 * swaps as i128;
    let (pa, pb) = (total - ties_a, total - ties_b);
    // exact when the tie counts agree, so untied monotone inputs give exactly 1
    let denom = if pa == pb {
        pa as f64
    } else {
        (pa as f64).sqrt() * (pb as f64).sqrt()
    };
    Ok((concordant_minus_discordant as f64 / denom).clamp(-1.0, 1.0))
}

/// Stable merge sort returning the number of inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    let mut swaps = 0u64;
    let mut width = 1;
    let (mut src, mut dst) = (v.to_vec(), vec![0.0; n]);
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if src[j] < src[i] {
                    dst[k] = src[j];
                    swaps += (mid - i) as u64;
                    j += 1;
                } else {
                    dst[k] = src[i];
                    i += 1;
                }
                k += 1;
            }
            dst[k..k + (mid - i)].copy_from_slice(&src[i..mid]);
            k += mid - i;
            dst[k..k + (end - j)].copy_from_slice(&src[j..end]);
            start = end;
        }
        std::mem::swap(&mut src, &mut dst);
        width *= 2;
    }
    v.copy_from_slice(&src);
    swaps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub kendall_tau: f64,
    pub spearman_rho: f64,
    pub n_units: usize,
    pub n_pairs_checked: u64,
    pub sufficient_condition_fraction: f64,
    pub necessary_condition_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSampling {
    pub exact_limit: usize,
    pub sampled_pairs: usize,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        PairSampling {
            exact_limit: EXACT_PAIR_LIMIT,
            sampled_pairs: SAMPLED_PAIRS,
            seed: 0,
        }
    }
}

/// Compare observational slopes against ground truth. Every estimate must
/// have a truth record and vice versa.
pub fn rank_preservation_report(
    truth: &[UnitParams],
    estimates: &[UnitEffectEstimate],
    spec: &DgpSpec,
    sampling: &PairSampling,
) -> Result<RankReport> {
    let by_id: HashMap<u64, &UnitParams> = truth.iter().map(|u| (u.unit_id, u)).collect();
    let estimated: HashSet<u64> = estimates.iter().map(|e| e.unit_id).collect();
    let mut missing: Vec<u64> = estimates
        .iter()
        .map(|e| e.unit_id)
        .filter(|id| !by_id.contains_key(id))
        .chain(truth.iter().map(|u| u.unit_id).filter(|id| !estimated.contains(id)))
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::IdMismatch { missing });
    }
    let aligned: Vec<UnitParams> = estimates.iter().map(|e| *by_id[&e.unit_id]).collect();
    let betas: Vec<f64> = aligned.iter().map(|u| u.beta).collect();
    let hats: Vec<f64> = estimates.iter().map(|e| e.beta_hat).collect();

    let kendall = kendall_tau(&betas, &hats)?;
    let spearman = stats::spearman(&betas, &hats)
        .ok_or_else(|| Error::validation("spearman_rho", "one input has zero rank variance"))?;

    let biases: Vec<f64> = aligned
        .iter()
        .map(|u| theoretical_bias(u, spec))
        .collect::<Result<_>>()?;
    let holds = |i: usize, j: usize| match betas[i].total_cmp(&betas[j]) {
        std::cmp::Ordering::Greater => biases[i] >= biases[j],
        std::cmp::Ordering::Less => biases[j] >= biases[i],
        std::cmp::Ordering::Equal => true,
    };
    let n = aligned.len();
    let (checked, ok) = if n <= sampling.exact_limit {
        let mut ok = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                ok += u64::from(holds(i, j));
            }
        }
        ((n * (n - 1) / 2) as u64, ok)
    } else {
        let mut rng = substream(sampling.seed, "pairs", 0);
        let mut ok = 0u64;
        for _ in 0..sampling.sampled_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            ok += u64::from(holds(i, j));
        }
        (sampling.sampled_pairs as u64, ok)
    };
    Ok(RankReport {
        kendall_tau: kendall,
        spearman_rho: spearman,
        n_units: n,
        n_pairs_checked: checked,
        sufficient_condition_fraction: if checked == 0 { 1.0 } else { ok as f64 / checked as f64 },
        necessary_condition_violations: necessary_condition_check(&aligned, spec)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_units, DgpSpec, LinkFn};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// O(n^2) tau-b straight from the definition.
    fn brute_tau_b(a: &[f64], b: &[f64]) -> f64 {
        let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let sa = (a[i] - a[j]).signum() * f64::from(u8::from(a[i] != a[j]));
                let sb = (b[i] - b[j]).signum() * f64::from(u8::from(b[i] != b[j]));
                match (sa == 0.0, sb == 0.0) {
                    (true, true) => {}
                    (true, false) => ta += 1,
                    (false, true) => tb += 1,
                    (false, false) if sa == sb => c += 1,
                    _ => d += 1,
                }
            }
        }
        (c - d) as f64 / (((c + d + ta) as f64) * ((c + d + tb) as f64)).sqrt()
    }

    fn unit(beta: f64, psi: f64, gamma: f64) -> UnitParams {
        UnitParams {
            unit_id: 0,
            affinity: 0.0,
            theta: 0.0,
            mu: 0.0,
            beta,
            psi,
            gamma,
        }
    }

    fn unit_var_spec() -> DgpSpec {
        DgpSpec {
            var_u: 1.0,
            var_eps: 1.0,
            ..DgpSpec::default()
        }
    }

    /// Unit with the requested bias under `unit_var_spec` (psi = 1 gives
    /// bias = gamma / 2).
    fn unit_with_bias(beta: f64, bias: f64) -> UnitParams {
        unit(beta, 1.0, 2.0 * bias)
    }

    #[test]
    fn tau_small_cases() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            brute_tau_b(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]),
            1.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn tau_errors() {
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn tau_matches_brute_force_with_ties() {
        use rand::Rng;
        let mut rng = crate::rng::substream(3, "tau-test", 0);
        for n in [2usize, 3, 7, 50, 200] {
            for _ in 0..20 {
                let a: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect();
                let b: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u8))).collect();
                let expect = brute_tau_b(&a, &b);
                match kendall_tau(&a, &b) {
                    Ok(t) => assert_abs_diff_eq!(t, expect, epsilon = 1e-12),
                    Err(_) => assert!(expect.is_nan()),
                }
            }
        }
    }

    #[test]
    fn sufficient_condition_examples() {
        let spec = unit_var_spec();
        let u = unit(1.0, 0.5, 0.5);
        assert!(sufficient_condition_holds(&u, &u, &spec).unwrap());
        let hi = unit_with_bias(2.0, 0.5);
        let lo = unit_with_bias(1.0, 0.1);
        assert!(sufficient_condition_holds(&hi, &lo, &spec).unwrap());
        assert!(sufficient_condition_holds(&lo, &hi, &spec).unwrap());
        let hi = unit_with_bias(2.0, 0.0);
        let lo = unit_with_bias(1.0, 1.5);
        assert!(!sufficient_condition_holds(&hi, &lo, &spec).unwrap());
        // population slopes flip: 2.0 < 2.5
        let pop = |u: &UnitParams| u.beta + theoretical_bias(u, &spec).unwrap();
        assert_abs_diff_eq!(pop(&hi), 2.0);
        assert_abs_diff_eq!(pop(&lo), 2.5);
    }

    #[test]
    fn necessary_condition_examples() {
        let spec = unit_var_spec();
        let equal = [
            unit_with_bias(1.0, 0.3),
            unit_with_bias(2.0, 0.3),
            unit_with_bias(3.0, 0.3),
        ];
        assert_eq!(necessary_condition_check(&equal, &spec).unwrap(), 0);
        let steep = [unit_with_bias(2.0, -1.5), unit_with_bias(1.0, 0.0)];
        assert_eq!(necessary_condition_check(&steep, &spec).unwrap(), 1);
        let mild = [unit_with_bias(1.0, 0.0), unit_with_bias(2.0, -0.5)];
        assert_eq!(necessary_condition_check(&mild, &spec).unwrap(), 0);
    }

    fn estimates_from(units: &[UnitParams], f: impl Fn(&UnitParams) -> f64) -> Vec<UnitEffectEstimate> {
        units
            .iter()
            .map(|u| UnitEffectEstimate {
                unit_id: u.unit_id,
                beta_hat: f(u),
                intercept: 0.0,
                stderr_beta: 0.0,
                n_obs: 60,
                r_squared: 0.5,
            })
            .collect()
    }

    #[test]
    fn report_on_population_slopes() {
        let spec = DgpSpec::sufficient_regime(300, 60, 5);
        let units = sample_units(&spec).unwrap();
        let est = estimates_from(&units, |u| u.beta + theoretical_bias(u, &spec).unwrap());
        let r = rank_preservation_report(&units, &est, &spec, &PairSampling::default()).unwrap();
        assert_eq!(r.kendall_tau, 1.0);
        assert_eq!(r.sufficient_condition_fraction, 1.0);
        assert_eq!(r.necessary_condition_violations, 0);
        assert_eq!(r.n_pairs_checked, 300 * 299 / 2);
    }

    #[test]
    fn report_on_violating_regime() {
        let spec = DgpSpec::violating_regime(200, 60, 5);
        let units = sample_units(&spec).unwrap();
        let est = estimates_from(&units, |u| u.beta + theoretical_bias(u, &spec).unwrap());
        let r = rank_preservation_report(&units, &est, &spec, &PairSampling::default()).unwrap();
        assert_eq!(r.kendall_tau, -1.0);
        assert_eq!(r.sufficient_condition_fraction, 0.0);
        assert_eq!(r.necessary_condition_violations, 199);
    }

    #[test]
    fn shuffled_estimates_have_null_tau() {
        let spec = DgpSpec::sufficient_regime(1000, 60, 6);
        let units = sample_units(&spec).unwrap();
        let mut rng = crate::rng::substream(6, "shuffle", 0);
        let mut hats: Vec<f64> = units.iter().map(|u| u.beta).collect();
        rand::seq::SliceRandom::shuffle(hats.as_mut_slice(), &mut rng);
        let est = estimates_from(&units, |u| hats[u.unit_id as usize]);
        let r = rank_preservation_report(&units, &est, &spec, &PairSampling::default()).unwrap();
        // null sd of tau: sqrt(2(2n+5) / (9n(n-1)))
        let n: f64 = 1000.0;
        let sd = (2.0 * (2.0 * n + 5.0) / (9.0 * n * (n - 1.0))).sqrt();
        assert!(r.kendall_tau.abs() <= 3.0 * sd, "tau {}", r.kendall_tau);
    }

    #[test]
    fn sampled_pairs_are_seeded() {
        let spec = DgpSpec::sufficient_regime(100, 60, 1);
        let units = sample_units(&spec).unwrap();
        let est = estimates_from(&units, |u| u.beta);
        let sampling = PairSampling {
            exact_limit: 10,
            sampled_pairs: 5000,
            seed: 4,
        };
        let r = rank_preservation_report(&units, &est, &spec, &sampling).unwrap();
        assert_eq!(r.n_pairs_checked, 5000);
        assert_eq!(r.sufficient_condition_fraction, 1.0);
        assert_eq!(r, rank_preservation_report(&units, &est, &spec, &sampling).unwrap());
    }

    #[test]
    fn misaligned_ids_are_listed() {
        let spec = DgpSpec::sufficient_regime(5, 60, 1);
        let units = sample_units(&spec).unwrap();
        let mut est = estimates_from(&units[..4], |u| u.beta);
        est[0].unit_id = 99;
        match rank_preservation_report(&units, &est, &spec, &PairSampling::default()) {
            Err(Error::IdMismatch { missing }) => assert_eq!(missing, vec![0, 4, 99]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sufficient_everywhere_means_population_tau_is_one() {
        let mut spec = DgpSpec::sufficient_regime(400, 60, 9);
        spec.links.demand_load = LinkFn::PiecewiseLinear {
            knots: vec![[0.0, 0.2], [0.3, 1.0], [1.0, 3.0]],
        };
        let units = sample_units(&spec).unwrap();
        for i in 0..units.len() {
            for j in 0..units.len() {
                assert!(sufficient_condition_holds(&units[i], &units[j], &spec).unwrap());
            }
        }
        let betas: Vec<f64> = units.iter().map(|u| u.beta).collect();
        let pop: Vec<f64> = units
            .iter()
            .map(|u| u.beta + theoretical_bias(u, &spec).unwrap())
            .collect();
        assert_eq!(kendall_tau(&betas, &pop).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn tau_properties(a in prop::collection::vec(-100.0f64..100.0, 2..60), b_seed in prop::collection::vec(-100.0f64..100.0, 60)) {
            let b = &b_seed[..a.len()];
            prop_assume!(a.iter().any(|v| *v != a[0]) && b.iter().any(|v| *v != b[0]));
            let t = kendall_tau(&a, b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&t));
            prop_assert!((t - kendall_tau(b, &a).unwrap()).abs() < 1e-12);
            let inc: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert_eq!(kendall_tau(&inc, b).unwrap(), t);
            let mut distinct = a.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() == a.len() {
                prop_assert_eq!(kendall_tau(&a, &inc).unwrap(), 1.0);
                let dec: Vec<f64> = a.iter().map(|v| -v.exp()).collect();
                prop_assert_eq!(kendall_tau(&a, &dec).unwrap(), -1.0);
            }
        }
    }
}
