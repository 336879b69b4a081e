//! The tilted one-dimensional walk `(S_i)` and its path statistics.
//!
//! The step law puts mass `P(ΔS = v) = E[#{children with displacement v}]·e^{-v}`
//! on each support point. Under the boundary-case calibration it is a
//! probability law with mean zero and variance `σ²`.

mod estimates;
mod many_to_one;

pub use estimates::{
    ladder_excursion_sum, drawdown_sum, lambda_moment_exact, lambda_tail_check, persistence_curve, spine_statistics, DrawdownEstimate,
    LambdaTail, PersistencePoint, SpineSummary, DEFAULT_STEP_CAP,
};
pub use many_to_one::{many_to_one_check, many_to_one_multi, GFunctional, ManyToOne};

use rand::Rng;

use crate::env::DisplacementLaw;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TiltedStepLaw {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
    cum: Vec<f64>,
    /// `|Σ P(ΔS = v) - 1|` before the final renormalization.
    pub normalization_error: f64,
}

impl TiltedStepLaw {
    pub fn new(law: &DisplacementLaw) -> Result<Self> {
        if !law.is_calibrated() {
            return Err(Error::LawRejected("tilted step law needs a calibrated law".into()));
        }
        let m = law.mean_offspring();
        let d = &law.displacement;
        let raw: Vec<f64> = d.values.iter().zip(&d.probs).map(|(&v, &q)| m * q * (-v).exp()).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let cum = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(TiltedStepLaw { support: d.values.clone(), probs, cum, normalization_error: (total - 1.0).abs() })
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.support.iter().zip(&self.probs).map(|(&v, &p)| p * f(v)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    pub fn second_moment(&self) -> f64 {
        self.expect(|v| v * v)
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean().powi(2)
    }

    /// `E[e^{a ΔS}]`; finite for every real `a` on a finite support.
    pub fn mgf(&self, a: f64) -> f64 {
        self.expect(|v| (a * v).exp())
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r: f64 = rng.random();
        for (i, &c) in self.cum.iter().enumerate() {
            if r < c {
                return self.support[i];
            }
        }
        *self.support.last().expect("non-empty support")
    }
}

/// A realized path `S_0 = 0, S_1, …, S_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinePath {
    pub s: Vec<f64>,
}

impl SpinePath {
    pub fn simulate<R: Rng + ?Sized>(law: &TiltedStepLaw, k: usize, rng: &mut R) -> Self {
        let mut s = Vec::with_capacity(k + 1);
        let mut x = 0.0;
        s.push(x);
        for _ in 0..k {
            x += law.sample(rng);
            s.push(x);
        }
        SpinePath { s }
    }

    pub fn len(&self) -> usize {
        self.s.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `S̄_k = max_{1≤i≤k} S_i`.
    pub fn running_max(&self, k: usize) -> f64 {
        self.s[1..=k].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `S̲_k = min_{1≤i≤k} S_i`.
    pub fn running_min(&self, k: usize) -> f64 {
        self.s[1..=k].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `S#_k = max_{1≤i≤k} (S̄_i - S_i)`.
    pub fn record_drop(&self, k: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut drop: f64 = 0.0;
        for i in 1..=k {
            best = best.max(self.s[i]);
            drop = drop.max(best - self.s[i]);
        }
        drop
    }

    /// Strict ascending ladder epochs `H_1 < H_2 < …` within the path,
    /// measured against records that include `S_0 = 0`.
    pub fn ladder_times(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut record = self.s[0];
        for (i, &x) in self.s.iter().enumerate().skip(1) {
            if x > record {
                record = x;
                out.push(i);
            }
        }
        out
    }

    /// Drawdown `max_{0≤j≤i} S_j - S_i` at every `i`.
    pub fn drawdowns(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.s
            .iter()
            .map(|&x| {
                best = best.max(x);
                best - x
            })
            .collect()
    }

    /// `τ_λ = inf{i ≥ 1 : drawdown_i > λ}`, if it happens within the path.
    pub fn tau(&self, lambda: f64) -> Option<usize> {
        self.drawdowns().iter().skip(1).position(|&d| d > lambda).map(|i| i + 1)
    }

    /// `σ_{-λ} = inf{i ≥ 0 : S_i < -λ}`, if it happens within the path.
    pub fn sigma_neg(&self, lambda: f64) -> Option<usize> {
        self.s.iter().position(|&x| x < -lambda)
    }
}
