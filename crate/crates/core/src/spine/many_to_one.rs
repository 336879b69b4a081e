//! Two-sided Monte Carlo check of the many-to-one identity
//!
//! `E[Σ_{|x|=n} g(V(x_1), …, V(x_n), Λ(x))] = E[e^{S_n} G(S_1, …, S_n)]`,
//!
//! with `G(a) = E[g(a, Σ_{|x|=1} e^{-V(x)})]` estimated by an independent
//! one-generation sample.

use std::sync::Arc;

use rand::Rng;

use crate::env::{DisplacementLaw, MarkedTree};
use crate::error::{Error, Result};
use crate::rng::par_blocks;
use crate::spine::TiltedStepLaw;
use crate::stats::MeanVar;

pub const MAX_GENERATION: u32 = 6;
const BLOCK: u64 = 4096;

/// Built-in test functionals `g(v_1, …, v_n, λ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GFunctional {
    One,
    /// `e^{-v_n}`.
    ExpNegLast,
    /// `1{min_i v_i ≥ -1} · min(λ, 5)`.
    MinPathLambdaCapped,
    /// `λ`; bounded only when the offspring count is.
    Lambda,
}

impl GFunctional {
    pub const ALL: [GFunctional; 4] =
        [GFunctional::One, GFunctional::ExpNegLast, GFunctional::MinPathLambdaCapped, GFunctional::Lambda];

    pub fn name(self) -> &'static str {
        match self {
            GFunctional::One => "one",
            GFunctional::ExpNegLast => "exp_neg_last",
            GFunctional::MinPathLambdaCapped => "min_path_lambda_capped",
            GFunctional::Lambda => "lambda",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown functional `{s}`")))
    }

    #[inline]
    pub fn eval(self, path: &[f64], lambda: f64) -> f64 {
        match self {
            GFunctional::One => 1.0,
            GFunctional::ExpNegLast => (-path.last().copied().unwrap_or(0.0)).exp(),
            GFunctional::MinPathLambdaCapped => {
                if path.iter().all(|&v| v >= -1.0) {
                    lambda.min(5.0)
                } else {
                    0.0
                }
            }
            GFunctional::Lambda => lambda,
        }
    }

    /// Rejects functionals that are unbounded on the given law.
    pub fn check_bounded(self, law: &DisplacementLaw) -> Result<()> {
        if self == GFunctional::Lambda && law.lambda_sup().is_none() {
            return Err(Error::LawRejected(format!(
                "g = {} is unbounded when the offspring count is unbounded",
                self.name()
            )));
        }
        Ok(())
    }

    /// Exact value of both sides where one is available.
    pub fn analytic(self, law: &DisplacementLaw, n: u32) -> Option<f64> {
        let m = law.mean_offspring();
        match self {
            GFunctional::One => Some(m.powi(n as i32)),
            GFunctional::ExpNegLast => Some(1.0),
            // Λ(x) is independent of the path and has mean E[Σ e^{-V}] = 1.
            GFunctional::Lambda => Some(m.powi(n as i32)),
            GFunctional::MinPathLambdaCapped => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManyToOne {
    pub g: GFunctional,
    pub n: u32,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub analytic: Option<f64>,
    pub samples: u64,
}

impl ManyToOne {
    pub fn combined_se(&self) -> f64 {
        self.lhs_se.hypot(self.rhs_se)
    }

    /// `|lhs - rhs|` in units of the combined standard error.
    pub fn z(&self) -> f64 {
        let se = self.combined_se();
        if se == 0.0 {
            if self.lhs == self.rhs {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.lhs - self.rhs).abs() / se
        }
    }

    pub fn pass(&self, sigmas: f64) -> bool {
        let close = |x: f64, se: f64, want: f64| (x - want).abs() <= sigmas * se.max(1e-12 * want.abs());
        self.z() <= sigmas
            && self.analytic.is_none_or(|a| close(self.lhs, self.lhs_se, a) && close(self.rhs, self.rhs_se, a))
    }
}

pub fn many_to_one_check(law: &Arc<DisplacementLaw>, n: u32, g: GFunctional, samples: u64, seed: u64) -> Result<ManyToOne> {
    Ok(many_to_one_multi(law, n, &[g], samples, seed, 1)?.remove(0))
}

/// Evaluates several functionals on shared samples: `samples` fresh trees for
/// the left side and `samples` tilted paths for the right side, each path
/// paired with `inner` one-generation draws.
pub fn many_to_one_multi(
    law: &Arc<DisplacementLaw>,
    n: u32,
    gs: &[GFunctional],
    samples: u64,
    seed: u64,
    inner: u32,
) -> Result<Vec<ManyToOne>> {
    if n == 0 || n > MAX_GENERATION {
        return Err(Error::domain(format!("many-to-one check needs 1 <= n <= {MAX_GENERATION}, got {n}")));
    }
    if samples < 2 || inner == 0 {
        return Err(Error::domain("need at least two samples and one inner draw"));
    }
    for g in gs {
        g.check_bounded(law)?;
    }
    let tilted = TiltedStepLaw::new(law)?;

    let lhs_blocks = par_blocks(seed, &format!("many-to-one/lhs/{n}"), samples, BLOCK, |rng, count| {
        let mut acc = vec![MeanVar::new(); gs.len()];
        let mut tree = MarkedTree::new(law.clone(), 0);
        let mut path = Vec::with_capacity(n as usize);
        for _ in 0..count {
            tree.reset(rng.random());
            let mut sums = vec![0.0; gs.len()];
            let gen = tree.generation(n)?;
            for &x in &gen {
                tree.expand(x)?;
                path.clear();
                path.extend(tree.path(x)[1..].iter().map(|&z| tree.get(z).v));
                let lambda = tree.get(x).lambda;
                for (s, g) in sums.iter_mut().zip(gs) {
                    *s += g.eval(&path, lambda);
                }
            }
            for (a, s) in acc.iter_mut().zip(sums) {
                a.push(s);
            }
        }
        Ok::<_, Error>(acc)
    });

    let rhs_blocks = par_blocks(seed, &format!("many-to-one/rhs/{n}"), samples, BLOCK, |rng, count| {
        let mut acc = vec![MeanVar::new(); gs.len()];
        let mut path = vec![0.0; n as usize];
        for _ in 0..count {
            let mut s = 0.0;
            for p in path.iter_mut() {
                s += tilted.sample(rng);
                *p = s;
            }
            let weight = s.exp();
            let mut inner_sums = vec![0.0; gs.len()];
            for _ in 0..inner {
                let kids = law.offspring.sample(rng);
                let lambda: f64 = (0..kids).map(|_| (-law.displacement.sample(rng)).exp()).sum();
                for (t, g) in inner_sums.iter_mut().zip(gs) {
                    *t += g.eval(&path, lambda);
                }
            }
            for (a, t) in acc.iter_mut().zip(inner_sums) {
                a.push(weight * t / f64::from(inner));
            }
        }
        acc
    });

    let mut lhs = vec![MeanVar::new(); gs.len()];
    for b in lhs_blocks {
        for (a, m) in lhs.iter_mut().zip(b?) {
            a.merge(&m);
        }
    }
    let mut rhs = vec![MeanVar::new(); gs.len()];
    for b in rhs_blocks {
        for (a, m) in rhs.iter_mut().zip(b) {
            a.merge(&m);
        }
    }
    Ok(gs
        .iter()
        .enumerate()
        .map(|(i, &g)| ManyToOne {
            g,
            n,
            lhs: lhs[i].mean(),
            lhs_se: lhs[i].se(),
            rhs: rhs[i].mean(),
            rhs_se: rhs[i].se(),
            analytic: g.analytic(law, n),
            samples,
        })
        .collect())
}
