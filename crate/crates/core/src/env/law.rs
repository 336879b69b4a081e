//! Offspring and displacement laws calibrated to the boundary case.
//!
//! Every built-in family is a discrete "shape": an offspring law plus a base
//! displacement support `b_i` with weights `q_i`. Calibration looks for an
//! affine map `a_i = θ·b_i + ψ(θ)` with `ψ(θ) = log(m·Σ q_i e^{-θ b_i})`.
//! The shift makes `E[Σ e^{-V}] = 1` hold identically, and the remaining
//! condition `E[Σ V e^{-V}] = 0` reduces to the scalar equation
//! `θ·ψ'(θ) = ψ(θ)`, whose left minus right side is strictly increasing in θ
//! (its derivative is `θ·ψ''(θ) > 0`). A root exists iff `m·q_min < 1`, where
//! `q_min` is the weight of the smallest support point.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Both boundary-case residuals must end below this after calibration.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Integrability exponent certified for the built-in families. All of them
/// have bounded displacement support and offspring laws with every moment.
pub const DELTA_CERTIFICATE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyId {
    /// Exactly two children, two-point displacement `{u, v}`, `P(A = u) = q`.
    F1,
    /// Geometric offspring, two-point displacement.
    F2,
    /// Poisson offspring, three-point displacement.
    F3,
    /// `N ≡ 1`, `A ≡ 0`. Satisfies both equations trivially; not supercritical.
    Degenerate,
}

impl FamilyId {
    pub fn name(self) -> &'static str {
        match self {
            FamilyId::F1 => "f1",
            FamilyId::F2 => "f2",
            FamilyId::F3 => "f3",
            FamilyId::Degenerate => "degenerate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(FamilyId::F1),
            "f2" => Ok(FamilyId::F2),
            "f3" => Ok(FamilyId::F3),
            "degenerate" | "d0" => Ok(FamilyId::Degenerate),
            other => Err(Error::domain(format!("unknown family `{other}`"))),
        }
    }

    /// Parameters of the shipped preset.
    pub fn default_params(self) -> Vec<f64> {
        match self {
            FamilyId::F1 => vec![0.25],
            FamilyId::F2 => vec![2.0, 0.3],
            FamilyId::F3 => vec![2.0, 0.2, 0.3, 0.5],
            FamilyId::Degenerate => vec![],
        }
    }

    pub fn all_presets() -> [FamilyId; 3] {
        [FamilyId::F1, FamilyId::F2, FamilyId::F3]
    }
}

/// Offspring count distribution.
#[derive(Clone, Debug)]
pub enum OffspringLaw {
    Fixed(u32),
    /// Number of failures before the first success; `mean = (1 - s) / s`.
    Geometric { mean: f64, sampler: Geometric },
    Poisson { mean: f64, sampler: Poisson<f64> },
}

impl OffspringLaw {
    pub fn fixed(n: u32) -> Self {
        OffspringLaw::Fixed(n)
    }

    pub fn geometric(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::domain(format!("geometric mean must be positive, got {mean}")));
        }
        let sampler = Geometric::new(1.0 / (1.0 + mean))
            .map_err(|e| Error::domain(format!("geometric offspring: {e}")))?;
        Ok(OffspringLaw::Geometric { mean, sampler })
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        let sampler =
            Poisson::new(mean).map_err(|e| Error::domain(format!("poisson offspring: {e}")))?;
        Ok(OffspringLaw::Poisson { mean, sampler })
    }

    pub fn mean(&self) -> f64 {
        match self {
            OffspringLaw::Fixed(n) => f64::from(*n),
            OffspringLaw::Geometric { mean, .. } | OffspringLaw::Poisson { mean, .. } => *mean,
        }
    }

    /// `E[N(N-1)]`.
    pub fn factorial_moment2(&self) -> f64 {
        match self {
            OffspringLaw::Fixed(n) => {
                let n = f64::from(*n);
                n * (n - 1.0)
            }
            OffspringLaw::Geometric { mean, .. } => 2.0 * mean * mean,
            OffspringLaw::Poisson { mean, .. } => mean * mean,
        }
    }

    /// `E[N^2]`.
    pub fn second_moment(&self) -> f64 {
        self.factorial_moment2() + self.mean()
    }

    /// Largest possible offspring count, if bounded.
    pub fn max(&self) -> Option<u32> {
        match self {
            OffspringLaw::Fixed(n) => Some(*n),
            _ => None,
        }
    }

    /// `P(N = k)`.
    pub fn pmf(&self, k: u32) -> f64 {
        match self {
            OffspringLaw::Fixed(n) => f64::from(u8::from(k == *n)),
            OffspringLaw::Geometric { mean, .. } => {
                let r = mean / (1.0 + mean);
                (1.0 - r) * r.powi(k as i32)
            }
            OffspringLaw::Poisson { mean, .. } => {
                let lg = statrs::function::gamma::ln_gamma(f64::from(k) + 1.0);
                (f64::from(k) * mean.ln() - mean - lg).exp()
            }
        }
    }

    /// Probability generating function `E[s^N]`.
    pub fn pgf(&self, s: f64) -> f64 {
        match self {
            OffspringLaw::Fixed(n) => s.powi(*n as i32),
            OffspringLaw::Geometric { mean, .. } => 1.0 / (1.0 + mean * (1.0 - s)),
            OffspringLaw::Poisson { mean, .. } => (mean * (s - 1.0)).exp(),
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            OffspringLaw::Fixed(n) => *n,
            OffspringLaw::Geometric { sampler, .. } => sampler.sample(rng).min(u64::from(u32::MAX)) as u32,
            OffspringLaw::Poisson { sampler, .. } => sampler.sample(rng) as u32,
        }
    }
}

/// Finite-support displacement distribution, shared by all children.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDisplacement {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    cum: Vec<f64>,
}

impl DiscreteDisplacement {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::domain("displacement support and weights must be non-empty and aligned"));
        }
        if probs.iter().any(|&q| !(q > 0.0 && q <= 1.0)) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("displacement weights must lie in (0, 1] and values be finite"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("displacement weights sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cum = probs
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect();
        Ok(DiscreteDisplacement { values, probs, cum })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r: f64 = rng.random();
        for (i, &c) in self.cum.iter().enumerate() {
            if r < c {
                return self.values[i];
            }
        }
        *self.values.last().expect("non-empty support")
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `E[f(A)]`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().zip(&self.probs).map(|(&a, &q)| q * f(a)).sum()
    }
}

/// Numbers reported alongside a calibrated law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// `E[Σ e^{-V}] - 1`.
    pub residual_mass: f64,
    /// `E[Σ V e^{-V}]`.
    pub residual_mean: f64,
    pub sigma2: f64,
    pub mean_offspring: f64,
    pub delta_certificate: f64,
    /// The three expectations of the integrability condition at `delta_certificate`.
    pub integrability: [f64; 3],
    pub scale: f64,
    pub shift: f64,
    pub supercritical: bool,
}

#[derive(Clone, Debug)]
pub struct DisplacementLaw {
    pub family: FamilyId,
    pub params: Vec<f64>,
    pub offspring: OffspringLaw,
    pub displacement: DiscreteDisplacement,
    pub report: CalibrationReport,
}

impl DisplacementLaw {
    /// A law taken as given, without calibration. Residuals are evaluated but
    /// not enforced, so downstream consumers can reject it.
    pub fn uncalibrated(offspring: OffspringLaw, displacement: DiscreteDisplacement) -> Self {
        let report = evaluate(&offspring, &displacement, f64::NAN, f64::NAN);
        DisplacementLaw { family: FamilyId::Degenerate, params: vec![], offspring, displacement, report }
    }

    pub fn mean_offspring(&self) -> f64 {
        self.offspring.mean()
    }

    pub fn sigma2(&self) -> f64 {
        self.report.sigma2
    }

    pub fn is_calibrated(&self) -> bool {
        self.report.residual_mass.abs() <= RESIDUAL_TOL && self.report.residual_mean.abs() <= RESIDUAL_TOL
    }

    /// Rejects laws that cannot drive a boundary-case simulation: uncalibrated,
    /// non-supercritical, or with `σ² = 0`.
    pub fn check_simulable(&self) -> Result<()> {
        if !self.is_calibrated() {
            return Err(Error::LawRejected("law is not calibrated to the boundary case".into()));
        }
        if !self.report.supercritical {
            return Err(Error::LawRejected("offspring mean must exceed 1".into()));
        }
        if !(self.report.sigma2 > 0.0 && self.report.sigma2.is_finite()) {
            return Err(Error::LawRejected(format!("sigma^2 = {} is not in (0, inf)", self.report.sigma2)));
        }
        Ok(())
    }

    /// `E[Σ_{|x|=1} f(V(x))] = m·E[f(A)]` (children i.i.d. and independent of N).
    pub fn first_generation_sum(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.offspring.mean() * self.displacement.expect(f)
    }

    /// Upper bound of `Σ_{|x|=1} e^{-V(x)}` when the offspring count is bounded.
    pub fn lambda_sup(&self) -> Option<f64> {
        self.offspring.max().map(|n| f64::from(n) * (-self.displacement.min()).exp())
    }

    pub fn document(&self) -> LawDocument {
        LawDocument {
            family: self.family,
            params: self.params.clone(),
            support: self.displacement.values.clone(),
            weights: self.displacement.probs.clone(),
            residuals: [self.report.residual_mass, self.report.residual_mean],
            sigma2: self.report.sigma2,
            mean_offspring: self.report.mean_offspring,
            delta_certificate: self.report.delta_certificate,
            supercritical: self.report.supercritical,
        }
    }
}

/// Structured, serializable view of a calibrated law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawDocument {
    pub family: FamilyId,
    pub params: Vec<f64>,
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub residuals: [f64; 2],
    pub sigma2: f64,
    pub mean_offspring: f64,
    pub delta_certificate: f64,
    pub supercritical: bool,
}

impl LawDocument {
    /// Recalibrates from `family` and `params`; calibration is deterministic so
    /// this reproduces the original law exactly.
    pub fn to_law(&self) -> Result<DisplacementLaw> {
        calibrate_law(self.family, &self.params)
    }
}

fn evaluate(offspring: &OffspringLaw, disp: &DiscreteDisplacement, scale: f64, shift: f64) -> CalibrationReport {
    let m = offspring.mean();
    let mass = m * disp.expect(|a| (-a).exp());
    let mean = m * disp.expect(|a| a * (-a).exp());
    let sigma2 = m * disp.expect(|a| a * a * (-a).exp());
    let d = DELTA_CERTIFICATE;
    let integrability = [
        m * disp.expect(|a| (-(1.0 + d) * a).exp()),
        m * disp.expect(|a| (d * a).exp()),
        // E[N^{1+δ}] with δ = 1.
        offspring.second_moment(),
    ];
    CalibrationReport {
        residual_mass: mass - 1.0,
        residual_mean: mean,
        sigma2,
        mean_offspring: m,
        delta_certificate: d,
        integrability,
        scale,
        shift,
        supercritical: m > 1.0,
    }
}

fn check_prob(name: &str, q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in (0, 1), got {q}")))
    }
}

/// Calibrates a built-in family so that both boundary-case equations hold.
///
/// Parameters per family (see [`FamilyId::default_params`]):
/// `f1: [q]`, `f2: [mean, q]`, `f3: [mean, q1, q2, q3]`, `degenerate: []`.
pub fn calibrate_law(family: FamilyId, free_params: &[f64]) -> Result<DisplacementLaw> {
    let params = free_params.to_vec();
    let (offspring, base, weights) = match family {
        FamilyId::F1 => {
            let [q] = take::<1>(family, free_params)?;
            check_prob("q", q)?;
            (OffspringLaw::fixed(2), vec![-1.0, 1.0], vec![q, 1.0 - q])
        }
        FamilyId::F2 => {
            let [mean, q] = take::<2>(family, free_params)?;
            if !(mean > 1.0 && mean.is_finite()) {
                return Err(Error::domain(format!("f2 offspring mean must exceed 1, got {mean}")));
            }
            check_prob("q", q)?;
            (OffspringLaw::geometric(mean)?, vec![-1.0, 1.0], vec![q, 1.0 - q])
        }
        FamilyId::F3 => {
            let [mean, q1, q2, q3] = take::<4>(family, free_params)?;
            if !(mean > 1.0 && mean.is_finite()) {
                return Err(Error::domain(format!("f3 offspring mean must exceed 1, got {mean}")));
            }
            for (n, q) in [("q1", q1), ("q2", q2), ("q3", q3)] {
                check_prob(n, q)?;
            }
            if ((q1 + q2 + q3) - 1.0).abs() > 1e-12 {
                return Err(Error::domain("f3 weights must sum to 1"));
            }
            (OffspringLaw::poisson(mean)?, vec![-1.0, 0.0, 1.0], vec![q1, q2, q3])
        }
        FamilyId::Degenerate => {
            take::<0>(family, free_params)?;
            let disp = DiscreteDisplacement::new(vec![0.0], vec![1.0])?;
            let offspring = OffspringLaw::fixed(1);
            let report = evaluate(&offspring, &disp, 1.0, 0.0);
            return Ok(DisplacementLaw { family, params, offspring, displacement: disp, report });
        }
    };

    let m = offspring.mean();
    let shape = Shape { log_m: m.ln(), base: &base, weights: &weights };
    let scale = shape.solve()?;
    let shift = shape.psi(scale);
    let values: Vec<f64> = base.iter().map(|b| scale * b + shift).collect();
    let disp = DiscreteDisplacement::new(values, weights)?;
    let report = evaluate(&offspring, &disp, scale, shift);

    if report.integrability.iter().any(|v| !v.is_finite()) {
        return Err(Error::LawRejected(format!(
            "integrability expectations are not finite: {:?}",
            report.integrability
        )));
    }
    if report.residual_mass.abs() > RESIDUAL_TOL || report.residual_mean.abs() > RESIDUAL_TOL {
        return Err(Error::Calibration(format!(
            "residuals ({:e}, {:e}) above tolerance after solving",
            report.residual_mass, report.residual_mean
        )));
    }
    Ok(DisplacementLaw { family, params, offspring, displacement: disp, report })
}

fn take<const K: usize>(family: FamilyId, p: &[f64]) -> Result<[f64; K]> {
    p.try_into().map_err(|_| {
        Error::domain(format!("family {} expects {K} parameters, got {}", family.name(), p.len()))
    })
}

struct Shape<'a> {
    log_m: f64,
    base: &'a [f64],
    weights: &'a [f64],
}

impl Shape<'_> {
    /// `ψ(θ) = log m + log Σ q_i e^{-θ b_i}`, evaluated stably.
    fn psi(&self, theta: f64) -> f64 {
        let top = self.base.iter().map(|b| -theta * b).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = self.base.iter().zip(self.weights).map(|(b, q)| q * (-theta * b - top).exp()).sum();
        self.log_m + top + s.ln()
    }

    /// `θ ψ'(θ) - ψ(θ)`; increasing in θ, equal to `-log m` at 0.
    fn residual(&self, theta: f64) -> f64 {
        let top = self.base.iter().map(|b| -theta * b).fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1) = (0.0, 0.0);
        for (b, q) in self.base.iter().zip(self.weights) {
            let w = q * (-theta * b - top).exp();
            s0 += w;
            s1 += w * b;
        }
        -theta * s1 / s0 - (self.log_m + top + s0.ln())
    }

    fn solve(&self) -> Result<f64> {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let mut probes = vec![(lo, self.residual(lo))];
        let b_min = self.base.iter().copied().fold(f64::INFINITY, f64::min);
        let q_min: f64 =
            self.base.iter().zip(self.weights).filter(|(b, _)| **b == b_min).map(|(_, q)| q).sum();
        // The residual increases to -log(m q_min) as θ → ∞.
        let feasible = self.log_m + q_min.ln() < -1e-12;
        loop {
            let r = self.residual(hi);
            probes.push((hi, r));
            if r > 0.0 && feasible {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 || !feasible {
                return Err(Error::Calibration(format!(
                    "no root of the boundary-case equations: residual stays negative on (0, {hi:e}], \
                     limit -log(m*q_min) = {:.6} must be positive (m*q_min = {:.6}); probes {:?}",
                    -(self.log_m + q_min.ln()),
                    (self.log_m + q_min.ln()).exp(),
                    &probes[probes.len().saturating_sub(4)..]
                )));
            }
        }
        // Bisect until the bracket stops shrinking.
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.residual(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (rl, rh) = (self.residual(lo).abs(), self.residual(hi).abs());
        Ok(if rl <= rh { lo } else { hi })
    }
}
