//! Headline diagnostics: the martingale limit, `σ²`, the minimizers of `U`,
//! and the finite-`n` checks on local times, favorite sites and the barrier.

mod barrier;
mod diagnostics;
mod umin;

pub use barrier::{barrier_sum, barrier_sum_brute, BarrierLimits, BarrierSum};
pub use diagnostics::{
    favorite_frequency, far_favorite_diagnostic, local_time_convergence, trend_nonincreasing, ConvergenceReport, ConvergenceRow,
    FrequencyConfig, FrequencyReport, ExcursionCheck, FrequencyRow, FarFavoriteConfig, FarFavoriteReport, FarFavoriteRow,
    ConvergenceConfig, TrendStep,
};
pub use umin::{find_umin, lowest_u, LowestU, TieBreak, UminConfig, UminResult};

use std::sync::Arc;

use rand::Rng;

use crate::env::{derivative_martingale, derivative_martingale_pruned, DisplacementLaw, MarkedTree};
use crate::error::{Error, Result};
use crate::rng::{par_blocks, stream_seed};
use crate::stats::MeanVar;

/// Default depth for survival conditioning and for the `D_∞` proxy.
pub const DEFAULT_DEPTH: u32 = 30;
/// Subtrees rooted above this potential are replaced by their conditional mean
/// when estimating `D_∞`.
pub const DEFAULT_V_PRUNE: f64 = 10.0;
/// Relative change over the stability window above which an estimate is
/// flagged as not yet stabilized.
pub const STABILITY_TOL: f64 = 0.05;
const MAX_ATTEMPTS: u32 = 100_000;

/// `σ² = E[Σ_{|x|=1} V(x)² e^{-V(x)}]` by finite summation.
pub fn sigma2(law: &DisplacementLaw) -> f64 {
    law.first_generation_sum(|v| v * v * (-v).exp())
}

/// Monte Carlo estimate of `σ²` from independent first generations.
pub fn sigma2_monte_carlo(law: &DisplacementLaw, samples: u64, seed: u64) -> MeanVar {
    let blocks = par_blocks(seed, "sigma2", samples, 1 << 16, |rng, count| {
        let mut acc = MeanVar::new();
        for _ in 0..count {
            let kids = law.offspring.sample(rng);
            let s: f64 = (0..kids)
                .map(|_| {
                    let v = law.displacement.sample(rng);
                    v * v * (-v).exp()
                })
                .sum();
            acc.push(s);
        }
        acc
    });
    let mut total = MeanVar::new();
    for b in &blocks {
        total.merge(b);
    }
    total
}

/// An environment conditioned to reach generation `depth`, by rejection.
/// Attempt `k` uses the stream `(master, index, "{label}/env/{k}")`.
pub fn surviving_tree(
    law: &Arc<DisplacementLaw>,
    master: u64,
    index: u64,
    label: &str,
    depth: u32,
    cap: usize,
) -> Result<(MarkedTree, u32)> {
    law.check_simulable()?;
    let mut tree = MarkedTree::with_cap(law.clone(), 0, cap);
    for attempt in 0..MAX_ATTEMPTS {
        tree.reset(stream_seed(master, index, &format!("{label}/env/{attempt}")));
        if tree.survives_to(depth)? {
            return Ok((tree, attempt + 1));
        }
    }
    Err(Error::ExtinctBefore { depth })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DinfEstimate {
    pub depth: u32,
    pub value: f64,
    /// `D_k` for `k = 0..=depth`, with pruned subtrees at their conditional mean.
    pub by_generation: Vec<f64>,
    /// `max |D_k - D_depth| / |D_depth|` over the last `window` generations.
    pub max_rel_change: f64,
    pub pre_asymptotic: bool,
    pub pruned: usize,
    pub visited: usize,
}

pub fn estimate_dinf(tree: &mut MarkedTree, depth: u32, window: u32, v_prune: f64) -> Result<DinfEstimate> {
    if !tree.survives_to(depth)? {
        return Err(Error::ExtinctBefore { depth });
    }
    let pm = derivative_martingale_pruned(tree, depth, v_prune)?;
    let value = pm.last();
    let from = depth.saturating_sub(window) as usize;
    let max_rel_change = if value == 0.0 {
        f64::INFINITY
    } else {
        pm.by_generation[from..].iter().map(|d| (d - value).abs() / value.abs()).fold(0.0, f64::max)
    };
    Ok(DinfEstimate {
        depth,
        value,
        pre_asymptotic: depth == 0 || value <= 0.0 || max_rel_change > STABILITY_TOL,
        by_generation: pm.by_generation,
        max_rel_change,
        pruned: pm.pruned,
        visited: pm.visited,
    })
}

/// Sample mean and standard error of `D_n` over independent environments.
pub fn martingale_mean(law: &Arc<DisplacementLaw>, n: u32, trees: u64, seed: u64) -> Result<MeanVar> {
    let blocks = par_blocks(seed, &format!("martingale-mean/{n}"), trees, 4096, |rng, count| {
        let mut acc = MeanVar::new();
        let mut tree = MarkedTree::new(law.clone(), 0);
        for _ in 0..count {
            tree.reset(rng.random());
            acc.push(derivative_martingale(&mut tree, n)?);
        }
        Ok::<_, Error>(acc)
    });
    let mut total = MeanVar::new();
    for b in blocks {
        total.merge(&b?);
    }
    Ok(total)
}

/// `D_n` of a fixed tree together with `draws` independent resamplings of
/// `D_{n+1}` given generation `n`.
pub fn martingale_step(tree: &mut MarkedTree, n: u32, draws: u64, seed: u64) -> Result<(f64, MeanVar)> {
    let d_n = derivative_martingale(tree, n)?;
    let parents: Vec<f64> = tree.generation(n)?.iter().map(|&x| tree.get(x).v).collect();
    let law = tree.law().clone();
    let blocks = par_blocks(seed, &format!("martingale-step/{n}"), draws, 4096, |rng, count| {
        let mut acc = MeanVar::new();
        for _ in 0..count {
            let mut d = 0.0;
            for &v in &parents {
                for _ in 0..law.offspring.sample(rng) {
                    let w = v + law.displacement.sample(rng);
                    d += w * (-w).exp();
                }
            }
            acc.push(d);
        }
        acc
    });
    let mut total = MeanVar::new();
    for b in &blocks {
        total.merge(b);
    }
    Ok((d_n, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::law::{DiscreteDisplacement, OffspringLaw};
    use crate::env::{calibrate_law, FamilyId};
    use crate::spine::TiltedStepLaw;

    #[test]
    fn sigma2_matches_tilted_variance() {
        for fam in FamilyId::all_presets() {
            let law = calibrate_law(fam, &fam.default_params()).unwrap();
            let t = TiltedStepLaw::new(&law).unwrap();
            assert!((sigma2(&law) - t.variance()).abs() < 1e-12, "{fam:?}");
            assert!((sigma2(&law) - law.sigma2()).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_sigma2_closed_form() {
        let law = calibrate_law(FamilyId::F1, &[0.25]).unwrap();
        let q = law.displacement.probs[0];
        let (u, v) = (law.displacement.values[0], law.displacement.values[1]);
        let want = 2.0 * (q * u * u * (-u).exp() + (1.0 - q) * v * v * (-v).exp());
        assert!((sigma2(&law) - want).abs() < 1e-13);
    }

    #[test]
    fn degenerate_law_has_zero_sigma2_and_is_rejected() {
        let law = DisplacementLaw::uncalibrated(
            OffspringLaw::fixed(1),
            DiscreteDisplacement::new(vec![0.0], vec![1.0]).unwrap(),
        );
        assert_eq!(sigma2(&law), 0.0);
        assert!(law.check_simulable().is_err());
    }

    #[test]
    fn sigma2_monte_carlo_agrees() {
        for fam in FamilyId::all_presets() {
            let law = calibrate_law(fam, &fam.default_params()).unwrap();
            let mc = sigma2_monte_carlo(&law, 1_000_000, 7);
            assert!((mc.mean() - sigma2(&law)).abs() <= 4.0 * mc.se(), "{fam:?}: {} vs {}", mc.mean(), sigma2(&law));
        }
    }

    #[test]
    fn depth_zero_is_pre_asymptotic() {
        let law = Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap());
        let mut tree = MarkedTree::new(law, 3);
        let d = estimate_dinf(&mut tree, 0, 5, DEFAULT_V_PRUNE).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.pre_asymptotic);
    }

    #[test]
    fn extinct_environment_is_a_conditioning_error() {
        let law = Arc::new(calibrate_law(FamilyId::F2, &FamilyId::F2.default_params()).unwrap());
        let seed = (0..1000u64)
            .find(|&s| !MarkedTree::new(law.clone(), s).survives_to(10).unwrap())
            .expect("some environment dies out");
        let mut tree = MarkedTree::new(law, seed);
        assert!(matches!(estimate_dinf(&mut tree, 10, 3, f64::INFINITY), Err(Error::ExtinctBefore { depth: 10 })));
    }

    #[test]
    fn surviving_trees_are_reproducible() {
        let law = Arc::new(calibrate_law(FamilyId::F3, &FamilyId::F3.default_params()).unwrap());
        let (mut a, na) = surviving_tree(&law, 5, 2, "t", 20, 1 << 22).unwrap();
        let (b, nb) = surviving_tree(&law, 5, 2, "t", 20, 1 << 22).unwrap();
        assert_eq!((a.seed(), na), (b.seed(), nb));
        assert!(a.survives_to(20).unwrap());
    }

    #[test]
    fn derivative_martingale_has_mean_zero() {
        let law = Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap());
        let m = martingale_mean(&law, 3, 20_000, 1).unwrap();
        assert!(m.mean().abs() <= 4.0 * m.se(), "{} ± {}", m.mean(), m.se());
    }

    #[test]
    fn resampled_next_generation_is_centred_on_current_value() {
        let law = Arc::new(calibrate_law(FamilyId::F3, &FamilyId::F3.default_params()).unwrap());
        for seed in 0..3 {
            let mut tree = MarkedTree::new(law.clone(), seed);
            let (d, next) = martingale_step(&mut tree, 4, 20_000, seed).unwrap();
            assert!((next.mean() - d).abs() <= 4.0 * next.se().max(1e-12), "{d} vs {}", next.mean());
        }
    }
}
