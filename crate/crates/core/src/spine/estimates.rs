//! Monte Carlo estimates on the tilted walk: ladder and record statistics,
//! persistence probabilities, stopped drawdown sums, and the tail of
//! `1 + Σ_{|x|=1} e^{-V(x)}`.

use crate::env::law::DELTA_CERTIFICATE;
use crate::env::DisplacementLaw;
use crate::error::{Error, Result};
use crate::rng::par_blocks;
use crate::spine::{SpinePath, TiltedStepLaw};
use crate::stats::{linear_fit, MeanVar};

const BLOCK: u64 = 1024;
/// Default path-length cap for the stopped sums; paths still running at the
/// cap are counted in `truncated`.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000;

/// Per-trial values of `S̄_k`, `S̲_k`, `S#_k` and the number of ladder epochs
/// up to `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpineSummary {
    pub k: usize,
    pub max: Vec<f64>,
    pub min: Vec<f64>,
    pub record_drop: Vec<f64>,
    pub ladder_count: Vec<usize>,
}

impl SpineSummary {
    pub fn trials(&self) -> usize {
        self.max.len()
    }

    pub fn mean(values: &[f64]) -> MeanVar {
        values.iter().copied().collect()
    }
}

pub fn spine_statistics(law: &TiltedStepLaw, k: usize, trials: u64, seed: u64) -> Result<SpineSummary> {
    if k == 0 {
        return Err(Error::domain("path length k must be at least 1"));
    }
    let blocks = par_blocks(seed, "spine-statistics", trials, BLOCK, |rng, count| {
        (0..count)
            .map(|_| {
                let p = SpinePath::simulate(law, k, rng);
                (p.running_max(k), p.running_min(k), p.record_drop(k), p.ladder_times().len())
            })
            .collect::<Vec<_>>()
    });
    let mut out = SpineSummary { k, max: Vec::new(), min: Vec::new(), record_drop: Vec::new(), ladder_count: Vec::new() };
    for (mx, mn, rd, lc) in blocks.into_iter().flatten() {
        out.max.push(mx);
        out.min.push(mn);
        out.record_drop.push(rd);
        out.ladder_count.push(lc);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PersistencePoint {
    pub k: usize,
    /// `P(S̲_k ≥ -α)`.
    pub p: f64,
    pub se: f64,
}

/// `P(S̲_k ≥ -α)` for each `k` in `ks`, plus the least-squares slope of
/// `log P` against `log k` and its standard error.
pub fn persistence_curve(
    law: &TiltedStepLaw,
    alpha: f64,
    ks: &[usize],
    trials: u64,
    seed: u64,
) -> Result<(Vec<PersistencePoint>, f64, f64)> {
    let kmax = ks.iter().copied().max().ok_or_else(|| Error::domain("empty k grid"))?;
    if ks.contains(&0) {
        return Err(Error::domain("k must be at least 1"));
    }
    // Each trial reports the first i ≥ 1 with S_i < -α (or kmax + 1).
    let blocks = par_blocks(seed, "persistence", trials, BLOCK, |rng, count| {
        let mut survived = vec![0u64; ks.len()];
        for _ in 0..count {
            let mut s = 0.0;
            let mut exit = kmax + 1;
            for i in 1..=kmax {
                s += law.sample(rng);
                if s < -alpha {
                    exit = i;
                    break;
                }
            }
            for (c, &k) in survived.iter_mut().zip(ks) {
                if exit > k {
                    *c += 1;
                }
            }
        }
        survived
    });
    let mut survived = vec![0u64; ks.len()];
    for b in blocks {
        for (c, x) in survived.iter_mut().zip(b) {
            *c += x;
        }
    }
    let points: Vec<PersistencePoint> = ks
        .iter()
        .zip(&survived)
        .map(|(&k, &c)| {
            let p = c as f64 / trials as f64;
            PersistencePoint { k, p, se: (p * (1.0 - p) / trials as f64).sqrt() }
        })
        .collect();
    if points.iter().any(|pt| pt.p == 0.0) {
        return Err(Error::domain("a persistence probability is zero; increase the number of trials"));
    }
    let xs: Vec<f64> = points.iter().map(|pt| (pt.k as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|pt| pt.p.ln()).collect();
    let (slope, _, slope_se) = linear_fit(&xs, &ys);
    Ok((points, slope, slope_se))
}

/// Monte Carlo value of a stopped path functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrawdownEstimate {
    pub lambda: f64,
    pub b: f64,
    pub mean: f64,
    pub se: f64,
    pub trials: u64,
    /// Trials that hit the step cap before their stopping time.
    pub truncated: u64,
    /// `mean · λ · e^{-bλ}` for the ladder-excursion quantity; NaN otherwise.
    pub constant: f64,
}

impl DrawdownEstimate {
    pub fn truncated_fraction(&self) -> f64 {
        self.truncated as f64 / self.trials as f64
    }
}

fn check_b(b: f64, lambda: f64) -> Result<()> {
    if !(b > 0.0 && b < DELTA_CERTIFICATE) {
        return Err(Error::domain(format!("b = {b} must lie in (0, {DELTA_CERTIFICATE})")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("lambda = {lambda} must be positive")));
    }
    Ok(())
}

fn reduce(blocks: Vec<(MeanVar, u64)>) -> (MeanVar, u64) {
    let mut acc = MeanVar::new();
    let mut truncated = 0;
    for (m, t) in blocks {
        acc.merge(&m);
        truncated += t;
    }
    (acc, truncated)
}

/// `E[Σ_{ℓ=0}^{τ_λ-1} e^{-b(λ - (S̄_ℓ - S_ℓ))}]` with running maxima over
/// `0..=ℓ`, each path cut at `cap` steps.
pub fn drawdown_sum(law: &TiltedStepLaw, b: f64, lambda: f64, trials: u64, cap: u64, seed: u64) -> Result<DrawdownEstimate> {
    check_b(b, lambda)?;
    let label = format!("drawdown-sum/{lambda}/{b}");
    let blocks = par_blocks(seed, &label, trials, BLOCK, |rng, count| {
        let mut acc = MeanVar::new();
        let mut truncated = 0u64;
        for _ in 0..count {
            let (mut s, mut best, mut sum) = (0.0f64, 0.0f64, 0.0f64);
            let mut steps = 0u64;
            loop {
                // Term ℓ, with drawdown ≤ λ because τ_λ > ℓ.
                sum += (-b * (lambda - (best - s))).exp();
                if steps == cap {
                    truncated += 1;
                    break;
                }
                s += law.sample(rng);
                steps += 1;
                best = best.max(s);
                if best - s > lambda {
                    break;
                }
            }
            acc.push(sum);
        }
        (acc, truncated)
    });
    let (acc, truncated) = reduce(blocks);
    Ok(DrawdownEstimate { lambda, b, mean: acc.mean(), se: acc.se(), trials, truncated, constant: f64::NAN })
}

/// `E[Σ_{ℓ=0}^{H_1-1} e^{-b S_ℓ} 1{σ_{-λ} > ℓ}]`; the walk is stopped at
/// `min(H_1, σ_{-λ})`, which is where the summand vanishes for good.
pub fn ladder_excursion_sum(law: &TiltedStepLaw, b: f64, lambda: f64, trials: u64, cap: u64, seed: u64) -> Result<DrawdownEstimate> {
    check_b(b, lambda)?;
    let label = format!("ladder-excursion/{lambda}/{b}");
    let blocks = par_blocks(seed, &label, trials, BLOCK, |rng, count| {
        let mut acc = MeanVar::new();
        let mut truncated = 0u64;
        for _ in 0..count {
            let (mut s, mut sum) = (0.0f64, 0.0f64);
            let mut steps = 0u64;
            loop {
                if s < -lambda {
                    break;
                }
                sum += (-b * s).exp();
                if steps == cap {
                    truncated += 1;
                    break;
                }
                s += law.sample(rng);
                steps += 1;
                if s > 0.0 {
                    break;
                }
            }
            acc.push(sum);
        }
        (acc, truncated)
    });
    let (acc, truncated) = reduce(blocks);
    let mean = acc.mean();
    Ok(DrawdownEstimate {
        lambda,
        b,
        mean,
        se: acc.se(),
        trials,
        truncated,
        constant: mean * lambda * (-b * lambda).exp(),
    })
}

/// Moment and tail diagnostics for `Y = 1 + Σ_{|x|=1} e^{-V(x)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTail {
    /// Exact `E[Y^2]`.
    pub moment_exact: f64,
    /// `(sample size, estimate of E[Y^2], standard error)`.
    pub moments: Vec<(u64, f64, f64)>,
    /// `(λ, F(λ), F(λ)·λ^2)` from the largest sample.
    pub tail: Vec<(f64, f64, f64)>,
    /// `sup Y` when the offspring count is bounded; `F(λ) = 0` beyond it.
    pub cutoff: Option<f64>,
}

impl LambdaTail {
    /// Largest relative change of the moment estimate between consecutive sample sizes.
    pub fn max_relative_change(&self) -> f64 {
        self.moments.windows(2).map(|w| ((w[1].1 - w[0].1) / w[0].1).abs()).fold(0.0, f64::max)
    }

    pub fn max_scaled_tail(&self) -> f64 {
        self.tail.iter().map(|t| t.2).fold(0.0, f64::max)
    }
}

/// `E[Y^{1+δ₁}]` with `δ₁ = 1`:
/// `1 + 2 m μ₁ + m μ₂ + E[N(N-1)] μ₁²`, `μ_j = E[e^{-jA}]`.
pub fn lambda_moment_exact(law: &DisplacementLaw) -> f64 {
    let m = law.mean_offspring();
    let mu1 = law.displacement.expect(|a| (-a).exp());
    let mu2 = law.displacement.expect(|a| (-2.0 * a).exp());
    1.0 + 2.0 * m * mu1 + m * mu2 + law.offspring.factorial_moment2() * mu1 * mu1
}

pub fn lambda_tail_check(law: &DisplacementLaw, sizes: &[u64], grid: &[f64], seed: u64) -> Result<LambdaTail> {
    if !law.is_calibrated() {
        return Err(Error::LawRejected("tail check needs a calibrated law".into()));
    }
    if sizes.is_empty() {
        return Err(Error::domain("no sample sizes given"));
    }
    let mut moments = Vec::new();
    let mut tail = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let blocks = par_blocks(seed, &format!("lambda-tail/{i}"), size, 8192, |rng, count| {
            let mut acc = MeanVar::new();
            let mut above = vec![0u64; grid.len()];
            for _ in 0..count {
                let kids = law.offspring.sample(rng);
                let y = 1.0 + (0..kids).map(|_| (-law.displacement.sample(rng)).exp()).sum::<f64>();
                acc.push(y * y);
                for (c, &l) in above.iter_mut().zip(grid) {
                    if y > l {
                        *c += 1;
                    }
                }
            }
            (acc, above)
        });
        let mut acc = MeanVar::new();
        let mut above = vec![0u64; grid.len()];
        for (m, a) in blocks {
            acc.merge(&m);
            for (c, x) in above.iter_mut().zip(a) {
                *c += x;
            }
        }
        moments.push((size, acc.mean(), acc.se()));
        if i + 1 == sizes.len() {
            tail = grid
                .iter()
                .zip(&above)
                .map(|(&l, &c)| {
                    let f = c as f64 / size as f64;
                    (l, f, f * l * l)
                })
                .collect();
        }
    }
    Ok(LambdaTail {
        moment_exact: lambda_moment_exact(law),
        moments,
        tail,
        cutoff: law.lambda_sup().map(|s| 1.0 + s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{calibrate_law, FamilyId};

    fn f1() -> (DisplacementLaw, TiltedStepLaw) {
        let law = calibrate_law(FamilyId::F1, &[0.25]).unwrap();
        let t = TiltedStepLaw::new(&law).unwrap();
        (law, t)
    }

    #[test]
    fn binary_family_moment_matches_enumeration() {
        let (law, _) = f1();
        let (vals, probs) = (&law.displacement.values, &law.displacement.probs);
        let mut want = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let y = 1.0 + (-vals[i]).exp() + (-vals[j]).exp();
                want += probs[i] * probs[j] * y * y;
            }
        }
        assert!((lambda_moment_exact(&law) - want).abs() < 1e-12);
    }

    #[test]
    fn bounded_family_tail_vanishes_beyond_cutoff() {
        let (law, _) = f1();
        let r = lambda_tail_check(&law, &[10_000, 100_000], &[1.5, 3.0, 100.0], 4).unwrap();
        let cutoff = r.cutoff.unwrap();
        for &(l, f, _) in &r.tail {
            if l >= cutoff {
                assert_eq!(f, 0.0);
            }
        }
        assert!(r.max_relative_change() < 0.05);
        let (_, est, se) = *r.moments.last().unwrap();
        assert!((est - r.moment_exact).abs() < 4.0 * se);
    }

    #[test]
    fn empty_history_term() {
        // With a cap of zero steps only the ℓ = 0 term e^{-bλ} is summed.
        let (_, t) = f1();
        let e = drawdown_sum(&t, 0.05, 10.0, 100, 0, 1).unwrap();
        assert!((e.mean - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(e.truncated, 100);
    }

    #[test]
    fn b_outside_range_rejected() {
        let (_, t) = f1();
        assert!(drawdown_sum(&t, 0.0, 10.0, 10, 10, 1).is_err());
        assert!(drawdown_sum(&t, 1.5, 10.0, 10, 10, 1).is_err());
        assert!(ladder_excursion_sum(&t, 0.05, -1.0, 10, 10, 1).is_err());
    }

    #[test]
    fn ladder_count_positive_iff_max_positive() {
        let (_, t) = f1();
        let s = spine_statistics(&t, 25, 2000, 3).unwrap();
        for i in 0..s.trials() {
            assert_eq!(s.ladder_count[i] > 0, s.max[i] > 0.0);
            assert!(s.record_drop[i] >= 0.0);
        }
    }

    #[test]
    fn persistence_decays() {
        let (_, t) = f1();
        let (pts, slope, _) = persistence_curve(&t, 1.0, &[10, 100, 1000], 20_000, 5).unwrap();
        assert!(pts[0].p > pts[1].p && pts[1].p > pts[2].p);
        assert!(slope < -0.3 && slope > -0.7, "{slope}");
    }
}
