//! Monte Carlo checks of the excursion law: step simulation against the fast
//! sampler, and the tail bound for sums of excursion counts.

use super::{excursion_sum_tail_bound, path_stats, ExcursionLaw, TailBound};
use crate::env::{MarkedTree, VertexId};
use crate::error::Result;
use crate::rng::{par_blocks, stream, stream_seed};
use crate::stats::{ks_two_sample, KsResult};
use crate::walk::excursion_local_times;

#[derive(Clone, Debug, PartialEq)]
pub struct LawEquivalence {
    pub vertex: VertexId,
    pub depth: u32,
    pub u: f64,
    pub a: f64,
    pub p: f64,
    pub m: u64,
    pub replicas: usize,
    pub mean_step: f64,
    pub mean_fast: f64,
    /// `m a / (1 - p)`.
    pub expected: f64,
    pub ks: KsResult,
}

/// `L_{T^{(m)}}(x)` from `replicas` walks against as many draws of the
/// closed-form excursion law, for every target at once.
pub fn law_equivalence(
    tree: &mut MarkedTree,
    targets: &[VertexId],
    m: u64,
    replicas: usize,
    seed: u64,
    soft_cap: usize,
) -> Result<Vec<LawEquivalence>> {
    let stats = targets.iter().map(|&x| path_stats(tree, x)).collect::<Result<Vec<_>>>()?;
    let step = excursion_local_times(tree, targets, m, replicas, stream_seed(seed, 0, "excursions/step"), soft_cap)?;
    let mut out = Vec::with_capacity(targets.len());
    for (i, s) in stats.iter().enumerate() {
        let law = s.law();
        let mut rng = stream(seed, i as u64, "excursions/fast");
        let fast: Vec<f64> = (0..replicas).map(|_| law.sample_total(m, &mut rng) as f64).collect();
        let walked: Vec<f64> = step.iter().map(|r| f64::from(r[i])).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        out.push(LawEquivalence {
            vertex: s.target,
            depth: s.depth,
            u: s.u,
            a: s.a,
            p: s.p,
            m,
            replicas,
            mean_step: mean(&walked),
            mean_fast: mean(&fast),
            expected: m as f64 * law.mean(),
            ks: ks_two_sample(&walked, &fast),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailCheck {
    pub a: f64,
    pub p: f64,
    pub eps: f64,
    pub n: u64,
    pub bound: TailBound,
    pub hits: u64,
    pub replicas: u64,
    pub probability: f64,
    pub se: f64,
}

impl TailCheck {
    /// The Monte Carlo probability does not exceed the bound by more than
    /// `sigmas` standard errors.
    pub fn pass(&self, sigmas: f64) -> bool {
        self.probability <= self.bound.bound + sigmas * self.se
    }
}

/// `P(Σ_{i≤n} ξ_i ≥ ⌈εn⌉)` by simulation, next to the bound.
pub fn tail_bound_check(a: f64, p: f64, eps: f64, n: u64, replicas: u64, seed: u64) -> Result<TailCheck> {
    let bound = excursion_sum_tail_bound(a, p, eps, n)?;
    let law = ExcursionLaw::new(a, p)?;
    let label = format!("tail-bound/{a}/{p}/{eps}/{n}");
    let hits: u64 = par_blocks(seed, &label, replicas, 1 << 16, |rng, count| {
        (0..count).filter(|_| law.sample_total(n, rng) >= bound.level).count() as u64
    })
    .into_iter()
    .sum();
    let probability = hits as f64 / replicas as f64;
    Ok(TailCheck {
        a,
        p,
        eps,
        n,
        bound,
        hits,
        replicas,
        probability,
        se: (probability * (1.0 - probability) / replicas as f64).sqrt(),
    })
}

/// Parameter points `(a, p, ε, n)` of the default grid that satisfy
/// `1 - p > 8a/ε`.
pub fn tail_bound_grid() -> Vec<(f64, f64, f64, u64)> {
    let mut out = Vec::new();
    for a in [1e-4, 1e-3, 1e-2] {
        for q in [0.3, 0.6, 0.9] {
            for eps in [0.25, 0.5, 0.9] {
                for n in [10u64, 100, 1000] {
                    let p = 1.0 - q;
                    if excursion_sum_tail_bound(a, p, eps, n).is_ok_and(|b| b.precondition_ok) {
                        out.push((a, p, eps, n));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{calibrate_law, FamilyId, ROOT};
    use std::sync::Arc;

    #[test]
    fn grid_respects_the_precondition() {
        let g = tail_bound_grid();
        assert!(g.len() > 20);
        for (a, p, eps, _) in g {
            assert!(1.0 - p > 8.0 * a / eps);
        }
    }

    #[test]
    fn tail_check_is_below_bound() {
        let c = tail_bound_check(0.01, 0.4, 0.5, 100, 100_000, 3).unwrap();
        assert!(c.pass(4.0), "{c:?}");
    }

    #[test]
    fn small_law_equivalence_run() {
        let law = Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap());
        let mut tree = MarkedTree::new(law, 2);
        let kids: Vec<_> = tree.expand(ROOT).unwrap().collect();
        let r = law_equivalence(&mut tree, &kids, 50, 2000, 9, 1 << 20).unwrap();
        for row in &r {
            assert!(row.ks.p_value > 1e-4, "{row:?}");
        }
    }
}
