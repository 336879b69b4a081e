//! Derivative martingale `D_n = Σ_{|x|=n} V(x) e^{-V(x)}`.

use crate::env::tree::{MarkedTree, VertexId, ROOT};
use crate::error::Result;

/// Exact `D_n` over the realized generation `n`; zero for an extinct generation.
pub fn derivative_martingale(tree: &mut MarkedTree, n: u32) -> Result<f64> {
    let gen = tree.generation(n)?;
    Ok(gen.iter().map(|&x| weighted(tree.get(x).v)).sum())
}

#[inline]
fn weighted(v: f64) -> f64 {
    v * (-v).exp()
}

/// `D_0 ..= D_depth` computed on a pruned tree.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedMartingale {
    /// Estimate of `D_k` for `k = 0 ..= depth`.
    pub by_generation: Vec<f64>,
    /// Number of vertices whose subtree was replaced by its conditional mean.
    pub pruned: usize,
    /// Vertices actually touched.
    pub visited: usize,
}

impl PrunedMartingale {
    pub fn last(&self) -> f64 {
        *self.by_generation.last().expect("depth >= 0")
    }
}

/// `D_k` for every `k ≤ depth`, without expanding subtrees rooted at vertices
/// with `V(y) > v_prune`.
///
/// A pruned subtree contributes `E[Σ_{z ≥ y, |z| = k} V(z) e^{-V(z)} | y] =
/// V(y) e^{-V(y)}` to every later generation, so each entry is the
/// conditional expectation of `D_k` given the explored part of the tree.
/// With `v_prune = +∞` this is the exact value.
pub fn derivative_martingale_pruned(tree: &mut MarkedTree, depth: u32, v_prune: f64) -> Result<PrunedMartingale> {
    let d = depth as usize;
    let mut exact = vec![0.0; d + 1];
    let mut carried = vec![0.0; d + 2];
    let mut pruned = 0usize;
    let mut visited = 0usize;
    let mut stack: Vec<VertexId> = vec![ROOT];
    while let Some(x) = stack.pop() {
        visited += 1;
        let (v, k) = {
            let r = tree.get(x);
            (r.v, r.depth as usize)
        };
        exact[k] += weighted(v);
        if k == d {
            continue;
        }
        if x != ROOT && v > v_prune {
            pruned += 1;
            carried[k + 1] += weighted(v);
            continue;
        }
        let kids = tree.expand(x)?;
        stack.extend(kids);
    }
    let mut acc = 0.0;
    let by_generation = (0..=d)
        .map(|k| {
            acc += carried[k];
            exact[k] + acc
        })
        .collect();
    Ok(PrunedMartingale { by_generation, pruned, visited })
}

/// `P(generation n non-empty)` from the iterated generating function
/// `q_{k+1} = f(q_k)`, `q_0 = 0`.
pub fn survival_probability(pgf: impl Fn(f64) -> f64, n: u32) -> f64 {
    let mut q = 0.0;
    for _ in 0..n {
        q = pgf(q);
    }
    1.0 - q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::law::{calibrate_law, FamilyId};
    use std::sync::Arc;

    #[test]
    fn d0_is_zero() {
        let law = Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap());
        let mut tree = MarkedTree::new(law, 1);
        assert_eq!(derivative_martingale(&mut tree, 0).unwrap(), 0.0);
    }

    #[test]
    fn pruning_at_infinity_is_exact() {
        let law = Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap());
        for seed in 0..5 {
            let mut a = MarkedTree::new(law.clone(), seed);
            let mut b = MarkedTree::new(law.clone(), seed);
            let p = derivative_martingale_pruned(&mut a, 8, f64::INFINITY).unwrap();
            assert_eq!(p.pruned, 0);
            for k in 0..=8 {
                let exact = derivative_martingale(&mut b, k).unwrap();
                assert!((p.by_generation[k as usize] - exact).abs() < 1e-12 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn pruning_is_close_to_exact_for_high_cutoff() {
        let law = Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap());
        let mut a = MarkedTree::new(law.clone(), 4);
        let mut b = MarkedTree::new(law, 4);
        let p = derivative_martingale_pruned(&mut a, 14, 8.0).unwrap();
        let exact = derivative_martingale(&mut b, 14).unwrap();
        assert!(p.pruned > 0 && p.visited < b.len());
        assert!((p.last() - exact).abs() < 0.05, "{} vs {exact}", p.last());
    }

    #[test]
    fn extinct_generation_contributes_zero() {
        let law = Arc::new(calibrate_law(FamilyId::F2, &[2.0, 0.3]).unwrap());
        for seed in 0..200 {
            let mut tree = MarkedTree::new(law.clone(), seed);
            if !tree.survives_to(6).unwrap() {
                assert_eq!(derivative_martingale(&mut tree, 6).unwrap(), 0.0);
                return;
            }
        }
        panic!("no extinct tree among 200 seeds");
    }

    #[test]
    fn survival_iteration_fixed_point() {
        // Poisson(2): extinction probability solves q = e^{2(q-1)}, q ≈ 0.2031878.
        let s = survival_probability(|q| (2.0 * (q - 1.0)).exp(), 200);
        assert!((s - (1.0 - 0.203_187_869_979_979_4)).abs() < 1e-9);
        assert_eq!(survival_probability(|q| q * q, 10), 1.0);
    }
}
