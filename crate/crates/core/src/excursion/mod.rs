//! Exact excursion formulas along a ray and the per-vertex excursion law.
//!
//! For a vertex `x ≠ ∅` with path sum `S(x) = Σ_{z ∈ ]∅, x]} e^{V(z)}`:
//!
//! * `a = P_ω(T_x < T_∅^+) = ω(∅, ←∅) / S(x)`,
//! * `1 - p = P_{x,ω}(T_∅ < T_x^+) = e^{U(x)} / S(x)`,
//!
//! and the number of visits to `x` during one root excursion is `0` with
//! probability `1 - a` and `1 + Geometric(1 - p)` otherwise.

mod checks;
mod oracle;

pub use checks::{law_equivalence, tail_bound_check, tail_bound_grid, LawEquivalence, TailCheck};
pub use oracle::{oracle_hitting, oracle_path_stats};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Poisson};

use crate::env::{MarkedTree, VertexId, ROOT};
use crate::error::{Error, Result};
use crate::fmt17;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStats {
    pub target: VertexId,
    pub depth: u32,
    pub u: f64,
    pub sum_exp_v: f64,
    pub log_sum_exp_v: f64,
    pub exp_u: f64,
    /// `ω(∅, ←∅)`.
    pub w_root_ghost: f64,
    pub a: f64,
    pub p: f64,
    pub log_a: f64,
    pub log_one_minus_p: f64,
}

impl PathStats {
    pub fn law(&self) -> ExcursionLaw {
        ExcursionLaw { a: self.a, p: self.p }
    }

    /// Per-excursion mean `a / (1 - p)`, evaluated in the log domain.
    pub fn mean(&self) -> f64 {
        (self.log_a - self.log_one_minus_p).exp()
    }
}

/// `a` and `p` for the ray to `x`, expanding `x` (for `Λ(x)`) and the root.
pub fn path_stats(tree: &mut MarkedTree, x: VertexId) -> Result<PathStats> {
    if x == ROOT {
        return Err(Error::domain("the excursion law at the root is degenerate; count root returns instead"));
    }
    tree.expand(ROOT)?;
    let u = tree.u(x)?;
    let w_root_ghost = tree.get(ROOT).w_parent;
    let r = tree.get(x);
    let log_sum = r.log_cum_exp_v;
    let log_a = w_root_ghost.ln() - log_sum;
    let log_one_minus_p = u - log_sum;
    let one_minus_p = log_one_minus_p.exp();
    Ok(PathStats {
        target: x,
        depth: r.depth,
        u,
        sum_exp_v: r.path_exp_sum(),
        log_sum_exp_v: log_sum,
        exp_u: u.exp(),
        w_root_ghost,
        a: log_a.exp(),
        p: (1.0 - one_minus_p).max(0.0),
        log_a,
        log_one_minus_p,
    })
}

/// `P(ξ = 0) = 1 - a`, `P(ξ ≥ k) = a p^{k-1}` for `k ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExcursionLaw {
    pub a: f64,
    pub p: f64,
}

impl ExcursionLaw {
    pub fn new(a: f64, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&p) {
            return Err(Error::domain(format!("excursion law needs 0 <= a < 1 and 0 <= p < 1, got a = {a}, p = {p}")));
        }
        Ok(ExcursionLaw { a, p })
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            1.0 - self.a
        } else {
            self.a * self.p.powi((k - 1) as i32) * (1.0 - self.p)
        }
    }

    /// `P(ξ ≥ k)`.
    pub fn tail(&self, k: u64) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.a * self.p.powi((k - 1) as i32)
        }
    }

    pub fn mean(&self) -> f64 {
        self.a / (1.0 - self.p)
    }

    pub fn variance(&self) -> f64 {
        let q = 1.0 - self.p;
        self.a * (1.0 + self.p) / (q * q) - self.mean().powi(2)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if rng.random::<f64>() >= self.a {
            return 0;
        }
        1 + geometric_failures(1.0 - self.p, rng)
    }

    /// `Σ_{i=1}^m ξ_i` in time `O(min(K, 32))`, `K ~ Binomial(m, a)`.
    pub fn sample_total<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> u64 {
        if m == 0 || self.a == 0.0 {
            return 0;
        }
        let k = Binomial::new(m, self.a).expect("a in [0, 1)").sample(rng);
        k + negative_binomial_failures(k, 1.0 - self.p, rng)
    }
}

fn geometric_failures<R: Rng + ?Sized>(success: f64, rng: &mut R) -> u64 {
    if success >= 1.0 {
        return 0;
    }
    Geometric::new(success).expect("success probability in (0, 1]").sample(rng)
}

/// Failures before the `k`-th success.
fn negative_binomial_failures<R: Rng + ?Sized>(k: u64, success: f64, rng: &mut R) -> u64 {
    if k == 0 || success >= 1.0 {
        return 0;
    }
    if k <= 32 {
        let g = Geometric::new(success).expect("success probability in (0, 1]");
        return (0..k).map(|_| g.sample(rng)).sum();
    }
    // Gamma–Poisson mixture.
    let scale = (1.0 - success) / success;
    let rate = Gamma::new(k as f64, scale).expect("positive shape and scale").sample(rng);
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as u64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailBound {
    pub bound: f64,
    /// `1 - p > 8a / ε`, strictly.
    pub precondition_ok: bool,
    /// `⌈ε n⌉`.
    pub level: u64,
}

/// `6 n a e^{-(1-p) ε n / 8}`, valid as a bound on `P(Σ_{i≤n} ξ_i ≥ ⌈εn⌉)`
/// when `1 - p > 8a/ε`.
pub fn excursion_sum_tail_bound(a: f64, p: f64, eps: f64, n: u64) -> Result<TailBound> {
    if !(0.0..1.0).contains(&a) || !(0.0..1.0).contains(&p) || !(eps > 0.0 && eps < 1.0) || n == 0 {
        return Err(Error::domain(format!("tail bound needs a, p in [0, 1), eps in (0, 1), n >= 1; got a = {a}, p = {p}, eps = {eps}, n = {n}")));
    }
    let nf = n as f64;
    Ok(TailBound {
        bound: 6.0 * nf * a * (-(1.0 - p) * eps * nf / 8.0).exp(),
        precondition_ok: 1.0 - p > 8.0 * a / eps,
        level: (eps * nf).ceil() as u64,
    })
}

/// Excursion-law table for a set of vertices.
pub fn excursion_table(tree: &mut MarkedTree, ids: &[VertexId]) -> Result<Vec<PathStats>> {
    ids.iter().map(|&x| path_stats(tree, x)).collect()
}

pub const EXCURSION_COLUMNS: [&str; 6] = ["vertex", "depth", "U", "a", "p", "mean"];

pub fn excursion_row(s: &PathStats) -> Vec<String> {
    vec![s.target.to_string(), s.depth.to_string(), fmt17(s.u), fmt17(s.a), fmt17(s.p), fmt17(s.mean())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{calibrate_law, FamilyId};
    use crate::rng::from_seed;
    use std::sync::Arc;

    fn tree(fam: FamilyId, seed: u64) -> MarkedTree {
        MarkedTree::new(Arc::new(calibrate_law(fam, &fam.default_params()).unwrap()), seed)
    }

    #[test]
    fn first_generation_hit_probability_is_edge_weight() {
        let mut t = tree(FamilyId::F1, 5);
        for x in t.expand(ROOT).unwrap() {
            let s = path_stats(&mut t, x).unwrap();
            assert!((s.a - t.get(x).w_in).abs() < 1e-14);
            t.expand(x).unwrap();
            assert!((1.0 - s.p - t.get(x).w_parent).abs() < 1e-14);
        }
    }

    #[test]
    fn identities_and_mean() {
        let mut t = tree(FamilyId::F3, 2);
        t.generation(6).unwrap();
        let u_root = t.u(ROOT).unwrap();
        for x in 1..t.len() as VertexId {
            if t.get(x).depth > 5 {
                continue;
            }
            let s = path_stats(&mut t, x).unwrap();
            assert!((s.a * s.sum_exp_v - s.w_root_ghost).abs() < 1e-12 * s.w_root_ghost);
            assert!(((1.0 - s.p) * s.sum_exp_v - s.exp_u).abs() < 1e-12 * s.exp_u.max(1.0));
            assert!(s.a > 0.0 && s.a < 1.0 && s.p < 1.0);
            let want = (-(s.u - u_root)).exp();
            assert!((s.mean() - want).abs() < 1e-12 * want);
            assert!((s.law().mean() - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn root_is_a_domain_error() {
        let mut t = tree(FamilyId::F1, 5);
        assert!(matches!(path_stats(&mut t, ROOT), Err(Error::Domain(_))));
    }

    #[test]
    fn law_mass_and_moments() {
        let law = ExcursionLaw::new(0.2, 0.6).unwrap();
        let total: f64 = (0..400).map(|k| law.pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = (0..400).map(|k| k as f64 * law.pmf(k)).sum();
        let m2: f64 = (0..400).map(|k| (k * k) as f64 * law.pmf(k)).sum();
        assert!((mean - law.mean()).abs() < 1e-12);
        assert!((m2 - mean * mean - law.variance()).abs() < 1e-10);
        for k in 1..10 {
            let t: f64 = (k..400).map(|j| law.pmf(j)).sum();
            assert!((t - law.tail(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_a_gives_zero() {
        let law = ExcursionLaw::new(0.0, 0.9).unwrap();
        let mut rng = from_seed(1);
        assert!((0..1000).all(|_| law.sample_total(1000, &mut rng) == 0 && law.sample(&mut rng) == 0));
    }

    #[test]
    fn single_draw_tail_matches_formula() {
        let law = ExcursionLaw::new(0.2, 0.6).unwrap();
        let mut rng = from_seed(11);
        let n = 1_000_000u64;
        let mut counts = [0u64; 12];
        for _ in 0..n {
            let k = law.sample(&mut rng) as usize;
            counts[k.min(11)] += 1;
        }
        for k in 1..=10u64 {
            let hits: u64 = counts[k as usize..].iter().sum();
            let phat = hits as f64 / n as f64;
            let want = law.tail(k);
            let se = (want * (1.0 - want) / n as f64).sqrt();
            assert!((phat - want).abs() <= 4.0 * se, "k = {k}: {phat} vs {want}");
        }
    }

    #[test]
    fn total_sampler_matches_moments() {
        let mut rng = from_seed(4);
        for &(a, p, m) in &[(0.2, 0.6, 10u64), (0.01, 0.9, 5000), (0.3, 0.0, 50), (0.05, 0.5, 2000)] {
            let law = ExcursionLaw::new(a, p).unwrap();
            let reps = 200_000;
            let xs: Vec<f64> = (0..reps).map(|_| law.sample_total(m, &mut rng) as f64).collect();
            let mv: crate::stats::MeanVar = xs.iter().copied().collect();
            let mean = m as f64 * law.mean();
            let var = m as f64 * law.variance();
            assert!((mv.mean() - mean).abs() <= 4.0 * (var / reps as f64).sqrt(), "{a} {p} {m}");
            assert!((mv.variance() / var - 1.0).abs() < 0.05, "{a} {p} {m}");
        }
    }

    #[test]
    fn bound_boundary_and_trivial_cases() {
        let b = excursion_sum_tail_bound(1.0 / 64.0, 0.75, 0.5, 100).unwrap();
        assert!(!b.precondition_ok);
        let b = excursion_sum_tail_bound(1.0 / 64.0, 0.74, 0.5, 100).unwrap();
        assert!(b.precondition_ok);
        assert_eq!(excursion_sum_tail_bound(0.0, 0.3, 0.25, 50).unwrap().bound, 0.0);
        assert!(excursion_sum_tail_bound(0.1, 1.0, 0.5, 10).is_err());
        assert!(excursion_sum_tail_bound(0.1, 0.5, 1.0, 10).is_err());
        assert_eq!(excursion_sum_tail_bound(0.01, 0.3, 0.25, 50).unwrap().level, 13);
    }
}
