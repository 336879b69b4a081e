//! Finite-`n` diagnostics for the local-time limit, the favorite sites and
//! the barrier. Replicas are independent and run in parallel; results are
//! collected in replica order so that nothing depends on the pool size.

use std::sync::Arc;

use rayon::prelude::*;

use super::umin::{find_umin, lowest_u, UminConfig};
use super::{estimate_dinf, sigma2, surviving_tree, DinfEstimate, DEFAULT_DEPTH, DEFAULT_V_PRUNE};
use crate::env::{DisplacementLaw, MarkedTree, VertexId, ROOT};
use crate::error::{Error, Result};
use crate::rng::stream_seed;
use crate::stats::{median, paired_increase_p_value, proportion_increase_p_value, Proportion};
use crate::walk::{barrier_crossed, excursion_counts, BarrierConfig, TrajectoryRow, WalkState};

const ARENA_CAP: usize = 1 << 26;

fn sorted_grid(grid: &[u64]) -> Result<Vec<u64>> {
    let mut g = grid.to_vec();
    g.sort_unstable();
    g.dedup();
    if g.is_empty() || g[0] < 2 {
        return Err(Error::domain("time grid must be non-empty with every n >= 2"));
    }
    Ok(g)
}

fn any_visited_crossed(tree: &MarkedTree, walk: &WalkState, cfg: &BarrierConfig) -> bool {
    walk.visited().iter().any(|&x| barrier_crossed(tree, x, cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceConfig {
    pub n_grid: Vec<u64>,
    pub vertex_budget: usize,
    pub walk_replicas: usize,
    pub excursions: u64,
    pub dinf_depth: u32,
    pub dinf_window: u32,
    pub survival_depth: u32,
    pub umin: UminConfig,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            n_grid: vec![10_000, 100_000, 1_000_000],
            vertex_budget: 5,
            walk_replicas: 8,
            excursions: 100_000,
            dinf_depth: DEFAULT_DEPTH,
            dinf_window: 5,
            survival_depth: DEFAULT_DEPTH,
            umin: UminConfig::default(),
        }
    }
}

/// Time-`n` statistic for one vertex, median over walk replicas.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub vertex: VertexId,
    pub depth: u32,
    pub u: f64,
    pub n: u64,
    /// `L_n(x) log n / n`.
    pub measured: f64,
    /// `(σ² / 4 D̂_∞) e^{-U(x)}`.
    pub predicted: f64,
    pub ratio: f64,
}

/// Mean local time per excursion against `e^{-[U(x) - U(∅)]}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionCheck {
    pub vertex: VertexId,
    pub depth: u32,
    pub u: f64,
    pub excursions: u64,
    pub mean: f64,
    pub se: f64,
    pub expected: f64,
    /// `|mean - expected| / se`; zero when both agree exactly.
    pub z: f64,
}

impl ExcursionCheck {
    pub fn pass(&self, sigmas: f64) -> bool {
        (self.mean - self.expected).abs() <= sigmas * self.se.max(1e-12 * self.expected)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub tree_seed: u64,
    pub attempts: u32,
    pub sigma2: f64,
    pub dinf: DinfEstimate,
    pub n_grid: Vec<u64>,
    pub certified: bool,
    /// Sorted by `U`, then by `n`.
    pub rows: Vec<ConvergenceRow>,
    pub excursions: Vec<ExcursionCheck>,
}

pub fn local_time_convergence(law: &Arc<DisplacementLaw>, seed: u64, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let grid = sorted_grid(&cfg.n_grid)?;
    let (mut tree, attempts) = surviving_tree(law, seed, 0, "convergence", cfg.survival_depth, ARENA_CAP)?;
    // The martingale estimate expands a lot; keep it off the walk's tree.
    let mut scratch = MarkedTree::new(law.clone(), tree.seed());
    let dinf = estimate_dinf(&mut scratch, cfg.dinf_depth, cfg.dinf_window, DEFAULT_V_PRUNE)?;
    drop(scratch);
    if dinf.value <= 0.0 {
        return Err(Error::domain(format!("derivative martingale estimate {} is not positive", dinf.value)));
    }
    let s2 = sigma2(law);

    let low = lowest_u(&mut tree, cfg.vertex_budget, &cfg.umin)?;
    let targets: Vec<(VertexId, f64)> = low.vertices.iter().copied().take(cfg.vertex_budget.max(1)).collect();
    let ids: Vec<VertexId> = targets.iter().map(|t| t.0).collect();
    let u_root = tree.u(ROOT)?;

    let counts = excursion_counts(&mut tree, &ids, cfg.excursions, stream_seed(seed, 0, "convergence/excursions"))?;
    let excursions = targets
        .iter()
        .zip(&counts)
        .map(|(&(x, u), c)| {
            let expected = (-(u - u_root)).exp();
            let se = c.se();
            let diff = (c.mean() - expected).abs();
            ExcursionCheck {
                vertex: x,
                depth: tree.get(x).depth,
                u,
                excursions: c.n,
                mean: c.mean(),
                se,
                expected,
                z: if diff == 0.0 { 0.0 } else { diff / se },
            }
        })
        .collect();

    // Time-n statistic: independent walks in the same environment, run
    // sequentially because they share the tree.
    let mut measured = vec![vec![Vec::with_capacity(cfg.walk_replicas); grid.len()]; ids.len()];
    for r in 0..cfg.walk_replicas {
        let mut walk = WalkState::new(&mut tree, stream_seed(seed, r as u64, "convergence/walk"))?;
        let mut done = 0;
        for (j, &n) in grid.iter().enumerate() {
            walk.run(&mut tree, n - done)?;
            done = n;
            let scale = (n as f64).ln() / n as f64;
            for (i, &x) in ids.iter().enumerate() {
                measured[i][j].push(f64::from(walk.local_time(x)) * scale);
            }
        }
    }
    let mut rows = Vec::new();
    for (i, &(x, u)) in targets.iter().enumerate() {
        let predicted = s2 / (4.0 * dinf.value) * (-u).exp();
        for (j, &n) in grid.iter().enumerate() {
            let m = median(&measured[i][j]);
            rows.push(ConvergenceRow { vertex: x, depth: tree.get(x).depth, u, n, measured: m, predicted, ratio: m / predicted });
        }
    }
    Ok(ConvergenceReport {
        tree_seed: tree.seed(),
        attempts,
        sigma2: s2,
        dinf,
        n_grid: grid,
        certified: low.certified,
        rows,
        excursions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyConfig {
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    pub survival_depth: u32,
    pub gamma: f64,
    pub umin: UminConfig,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig {
            n_grid: vec![1_000, 10_000, 100_000, 1_000_000],
            replicas: 300,
            survival_depth: DEFAULT_DEPTH,
            gamma: 1.5,
            umin: UminConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyRow {
    pub n: u64,
    pub hits: u64,
    pub certified: u64,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyReport {
    pub rows: Vec<FrequencyRow>,
    /// Replicas whose minimizer search was not certified.
    pub excluded: u64,
    /// Favorite sets matched a fresh argmax scan at every recorded time.
    pub audit_ok: bool,
    pub trajectories: Vec<TrajectoryRow>,
    /// Certified replicas that went from miss to hit (and back) between the
    /// smallest and largest `n`.
    pub improved: u64,
    pub worsened: u64,
    /// One-sided paired test for a higher frequency at the largest `n`.
    pub p_value: f64,
}

struct ReplicaOutcome {
    certified: bool,
    audit_ok: bool,
    rows: Vec<TrajectoryRow>,
}

fn frequency_replica(law: &Arc<DisplacementLaw>, master: u64, r: u64, grid: &[u64], cfg: &FrequencyConfig) -> Result<ReplicaOutcome> {
    let (mut tree, _) = surviving_tree(law, master, r, "frequency", cfg.survival_depth, ARENA_CAP)?;
    let mut walk = WalkState::new(&mut tree, stream_seed(master, r, "frequency/walk"))?;
    let mut audit_ok = true;
    let mut snapshots = Vec::with_capacity(grid.len());
    let mut done = 0;
    for &n in grid {
        walk.run(&mut tree, n - done)?;
        done = n;
        audit_ok &= walk.audit_favorites();
        let barrier = BarrierConfig::new(cfg.gamma, n)?;
        snapshots.push((n, walk.favorites().to_vec(), walk.local_time(ROOT), walk.max_count, walk.max_depth, any_visited_crossed(&tree, &walk, &barrier)));
    }
    drop(walk);
    let umin = match find_umin(&mut tree, &cfg.umin) {
        Ok(u) => Some(u),
        Err(e) if e.is_resource() => None,
        Err(e) => return Err(e),
    };
    let certified = umin.as_ref().is_some_and(|u| u.certified);
    let rows = snapshots
        .into_iter()
        .map(|(n, fav, root, max_count, max_depth, barrier_hit)| TrajectoryRow {
            seed: tree.seed(),
            replica: r,
            n,
            root_local_time: root,
            max_count,
            n_favorites: fav.len(),
            favorites_in_umin: umin.as_ref().is_some_and(|u| fav.iter().all(|x| u.minimizers.binary_search(x).is_ok())),
            max_depth,
            barrier_hit,
        })
        .collect();
    Ok(ReplicaOutcome { certified, audit_ok, rows })
}

pub fn favorite_frequency(law: &Arc<DisplacementLaw>, master: u64, cfg: &FrequencyConfig) -> Result<FrequencyReport> {
    let grid = sorted_grid(&cfg.n_grid)?;
    let outcomes: Vec<Result<ReplicaOutcome>> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| frequency_replica(law, master, r, &grid, cfg))
        .collect();
    let mut hits = vec![0u64; grid.len()];
    let (mut certified, mut excluded, mut improved, mut worsened) = (0u64, 0u64, 0u64, 0u64);
    let mut audit_ok = true;
    let mut trajectories = Vec::new();
    for o in outcomes {
        let o = o?;
        audit_ok &= o.audit_ok;
        if o.certified {
            certified += 1;
            for (h, row) in hits.iter_mut().zip(&o.rows) {
                *h += u64::from(row.favorites_in_umin);
            }
            let first = o.rows[0].favorites_in_umin;
            let last = o.rows[grid.len() - 1].favorites_in_umin;
            improved += u64::from(!first && last);
            worsened += u64::from(first && !last);
        } else {
            excluded += 1;
        }
        trajectories.extend(o.rows);
    }
    let rows = grid
        .iter()
        .zip(&hits)
        .map(|(&n, &h)| {
            let p = Proportion::new(h, certified);
            let (ci_low, ci_high) = p.wilson(1.96);
            FrequencyRow { n, hits: h, certified, frequency: p.p(), ci_low, ci_high }
        })
        .collect();
    Ok(FrequencyReport {
        rows,
        excluded,
        audit_ok,
        trajectories,
        improved,
        worsened,
        p_value: paired_increase_p_value(improved, worsened),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FarFavoriteConfig {
    pub eps_grid: Vec<f64>,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    pub gamma: f64,
    pub survival_depth: u32,
}

impl Default for FarFavoriteConfig {
    fn default() -> Self {
        FarFavoriteConfig {
            eps_grid: vec![0.3],
            n_grid: vec![10_000, 100_000, 1_000_000],
            replicas: 200,
            gamma: 1.5,
            survival_depth: DEFAULT_DEPTH,
        }
    }
}

/// One `(ε, n)` cell, or with `eps = None` the barrier-touching event.
#[derive(Clone, Debug, PartialEq)]
pub struct FarFavoriteRow {
    pub eps: Option<f64>,
    pub n: u64,
    /// `log(8/ε²)` for the local-time event, `log(n/(log n)^γ)` for the barrier.
    pub threshold: f64,
    pub events: u64,
    pub replicas: u64,
    pub probability: f64,
    pub se: f64,
}

/// Consecutive-`n` step of a trend test.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendStep {
    pub eps: Option<f64>,
    pub n_from: u64,
    pub n_to: u64,
    /// One-sided p-value against an increase.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FarFavoriteReport {
    pub rows: Vec<FarFavoriteRow>,
    pub trend: Vec<TrendStep>,
}

impl FarFavoriteReport {
    /// No consecutive step shows a significant increase at `level`.
    pub fn nonincreasing(&self, eps: Option<f64>, level: f64) -> bool {
        self.trend.iter().filter(|t| t.eps == eps).all(|t| t.p_value >= level)
    }
}

/// One-sided two-proportion tests between consecutive entries.
pub fn trend_nonincreasing(props: &[Proportion]) -> Vec<f64> {
    props.windows(2).map(|w| proportion_increase_p_value(w[0], w[1])).collect()
}

/// For each `ε`, the event `max{L_n(x) : x visited, U(x) ≥ log(8/ε²)} > ε n / log n`
/// (an empty max is 0), plus whether the walk touched `L_n^{(γ)}`.
fn far_favorite_replica(law: &Arc<DisplacementLaw>, master: u64, r: u64, n: u64, cfg: &FarFavoriteConfig) -> Result<(Vec<bool>, bool)> {
    let label = format!("far-favorites/{n}");
    let (mut tree, _) = surviving_tree(law, master, r, &label, cfg.survival_depth, ARENA_CAP)?;
    let mut walk = WalkState::new(&mut tree, stream_seed(master, r, &format!("{label}/walk")))?;
    walk.run(&mut tree, n)?;
    let visited: Vec<(VertexId, u32)> = walk.local_times().collect();
    let mut with_u = Vec::with_capacity(visited.len());
    for &(x, l) in &visited {
        with_u.push((tree.u(x)?, l));
    }
    let scale = n as f64 / (n as f64).ln();
    let events = cfg
        .eps_grid
        .iter()
        .map(|&eps| {
            let thr = (8.0 / (eps * eps)).ln();
            let max = with_u.iter().filter(|&&(u, _)| u >= thr).map(|&(_, l)| l).max().unwrap_or(0);
            f64::from(max) > eps * scale
        })
        .collect();
    let barrier = BarrierConfig::new(cfg.gamma, n)?;
    Ok((events, any_visited_crossed(&tree, &walk, &barrier)))
}

pub fn far_favorite_diagnostic(law: &Arc<DisplacementLaw>, master: u64, cfg: &FarFavoriteConfig) -> Result<FarFavoriteReport> {
    let grid = sorted_grid(&cfg.n_grid)?;
    if let Some(&bad) = cfg.eps_grid.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::domain(format!("epsilon {bad} is outside (0, 1]")));
    }
    let reps = cfg.replicas as u64;
    let mut eps_props = vec![Vec::new(); cfg.eps_grid.len()];
    let mut barrier_props = Vec::new();
    for &n in &grid {
        let results: Vec<Result<(Vec<bool>, bool)>> =
            (0..reps).into_par_iter().map(|r| far_favorite_replica(law, master, r, n, cfg)).collect();
        let mut counts = vec![0u64; cfg.eps_grid.len()];
        let mut barrier_hits = 0u64;
        for res in results {
            let (ev, hit) = res?;
            for (c, e) in counts.iter_mut().zip(ev) {
                *c += u64::from(e);
            }
            barrier_hits += u64::from(hit);
        }
        for (p, c) in eps_props.iter_mut().zip(counts) {
            p.push(Proportion::new(c, reps));
        }
        barrier_props.push(Proportion::new(barrier_hits, reps));
    }
    let mut rows = Vec::new();
    let mut trend = Vec::new();
    let mut add = |eps: Option<f64>, props: &[Proportion], thr: &dyn Fn(u64) -> f64| {
        for (&n, p) in grid.iter().zip(props) {
            rows.push(FarFavoriteRow { eps, n, threshold: thr(n), events: p.hits, replicas: p.n, probability: p.p(), se: p.se() });
        }
        for (w, pv) in grid.windows(2).zip(trend_nonincreasing(props)) {
            trend.push(TrendStep { eps, n_from: w[0], n_to: w[1], p_value: pv });
        }
    };
    for (&eps, props) in cfg.eps_grid.iter().zip(&eps_props) {
        add(Some(eps), props, &|_| (8.0 / (eps * eps)).ln());
    }
    let gamma = cfg.gamma;
    add(None, &barrier_props, &|n| crate::walk::log_barrier_threshold(n, gamma));
    Ok(FarFavoriteReport { rows, trend })
}
