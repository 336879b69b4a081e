//! The quenched biased walk on a marked tree.
//!
//! From a vertex `x` the walk moves to its parent with probability
//! `ω(x, ←x)` and to a child `y` with probability `ω(x, y)`. From the ghost
//! parent `←∅` it moves to `∅` with probability one. Local times count visits
//! at times `1..=n` to tree vertices; ghost visits are tallied separately.

mod barrier;

pub use barrier::{barrier_crossed, barrier_ratio, log_barrier_threshold, BarrierConfig, BarrierTracker};

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::env::{MarkedTree, VertexId, NO_PARENT, ROOT};
use crate::error::{Error, Result};
use crate::rng::{from_seed, SimRng};
use crate::stats::MeanVar;

pub const DEFAULT_ALIAS_THRESHOLD: u32 = 64;

const NO_ALIAS: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Position {
    /// The ghost parent `←∅` of the root; not a vertex of the tree.
    Ghost,
    At(VertexId),
}

/// One transition drawn by cumulative-weight inversion.
#[inline]
pub fn sample_step<R: Rng + ?Sized>(tree: &mut MarkedTree, from: Position, rng: &mut R) -> Result<Position> {
    let x = match from {
        Position::Ghost => return Ok(Position::At(ROOT)),
        Position::At(x) => x,
    };
    let kids = tree.expand(x)?;
    let r = tree.get(x);
    let u: f64 = rng.random();
    let mut acc = r.w_parent;
    if u < acc || kids.is_empty() {
        return Ok(parent_position(r.parent));
    }
    for c in kids.clone() {
        acc += tree.get(c).w_in;
        if u < acc {
            return Ok(Position::At(c));
        }
    }
    // Rounding left a sliver above the last cumulative weight.
    Ok(Position::At(kids.end - 1))
}

#[inline]
fn parent_position(parent: VertexId) -> Position {
    if parent == NO_PARENT {
        Position::Ghost
    } else {
        Position::At(parent)
    }
}

#[derive(Clone, Debug)]
pub struct WalkState {
    pub position: Position,
    pub steps: u64,
    /// `L_n(x)`, dense over arena ids.
    local_time: Vec<u32>,
    /// Vertices with positive local time, in order of first visit.
    visited: Vec<VertexId>,
    pub max_count: u32,
    favorites: Vec<VertexId>,
    /// Times `i ≥ 1` with `X_i = ∅`.
    pub root_returns: Vec<u64>,
    pub ghost_visits: u64,
    pub max_depth: u32,
    rng: SimRng,
    alias_threshold: u32,
    alias_slot: Vec<u32>,
    alias_tables: Vec<WeightedAliasIndex<f64>>,
    barrier: Option<BarrierTracker>,
}

impl WalkState {
    /// A walk started at `X_0 = ∅`. Fails if the root has no children.
    pub fn new(tree: &mut MarkedTree, seed: u64) -> Result<Self> {
        tree.check_alive()?;
        Ok(WalkState {
            position: Position::At(ROOT),
            steps: 0,
            local_time: Vec::new(),
            visited: Vec::new(),
            max_count: 0,
            favorites: Vec::new(),
            root_returns: Vec::new(),
            ghost_visits: 0,
            max_depth: 0,
            rng: from_seed(seed),
            alias_threshold: DEFAULT_ALIAS_THRESHOLD,
            alias_slot: Vec::new(),
            alias_tables: Vec::new(),
            barrier: None,
        })
    }

    /// Vertices visited more than `threshold` times switch to alias sampling.
    /// `u32::MAX` disables alias tables.
    pub fn with_alias_threshold(mut self, threshold: u32) -> Self {
        self.alias_threshold = threshold;
        self
    }

    pub fn with_barrier(mut self, cfg: BarrierConfig) -> Self {
        self.barrier = Some(BarrierTracker::new(cfg));
        self
    }

    pub fn barrier(&self) -> Option<&BarrierTracker> {
        self.barrier.as_ref()
    }

    /// Returns to `X_0 = ∅` with all statistics cleared, keeping the
    /// generator state and allocations.
    pub fn restart(&mut self) {
        for &x in &self.visited {
            self.local_time[x as usize] = 0;
        }
        self.visited.clear();
        self.position = Position::At(ROOT);
        self.steps = 0;
        self.max_count = 0;
        self.favorites.clear();
        self.root_returns.clear();
        self.ghost_visits = 0;
        self.max_depth = 0;
        // Alias tables are keyed by arena id, which a tree truncation may
        // recycle.
        self.alias_slot.iter_mut().for_each(|s| *s = NO_ALIAS);
        self.alias_tables.clear();
        if let Some(b) = &mut self.barrier {
            b.clear();
        }
    }

    #[inline]
    pub fn local_time(&self, x: VertexId) -> u32 {
        self.local_time.get(x as usize).copied().unwrap_or(0)
    }

    pub fn visited(&self) -> &[VertexId] {
        &self.visited
    }

    pub fn favorites(&self) -> &[VertexId] {
        &self.favorites
    }

    /// `(x, L_n(x))` over visited vertices, in first-visit order.
    pub fn local_times(&self) -> impl Iterator<Item = (VertexId, u32)> + '_ {
        self.visited.iter().map(move |&x| (x, self.local_time[x as usize]))
    }

    pub fn step(&mut self, tree: &mut MarkedTree) -> Result<Position> {
        let next = match self.position {
            Position::Ghost => Position::At(ROOT),
            Position::At(x) => {
                let heavy = self.local_time(x) > self.alias_threshold;
                if heavy {
                    self.alias_step(tree, x)?
                } else {
                    sample_step(tree, self.position, &mut self.rng)?
                }
            }
        };
        self.steps += 1;
        self.position = next;
        match next {
            Position::Ghost => self.ghost_visits += 1,
            Position::At(y) => self.record_visit(tree, y),
        }
        Ok(next)
    }

    fn alias_step(&mut self, tree: &mut MarkedTree, x: VertexId) -> Result<Position> {
        let kids = tree.expand(x)?;
        if kids.is_empty() {
            return Ok(parent_position(tree.get(x).parent));
        }
        let idx = x as usize;
        if self.alias_slot.len() <= idx {
            self.alias_slot.resize(idx + 1, NO_ALIAS);
        }
        if self.alias_slot[idx] == NO_ALIAS {
            let r = tree.get(x);
            let mut w = Vec::with_capacity(kids.len() + 1);
            w.push(r.w_parent);
            w.extend(kids.clone().map(|c| tree.get(c).w_in));
            let table = WeightedAliasIndex::new(w).map_err(|e| Error::domain(format!("alias table at {x}: {e}")))?;
            self.alias_slot[idx] = self.alias_tables.len() as u32;
            self.alias_tables.push(table);
        }
        let k = self.alias_tables[self.alias_slot[idx] as usize].sample(&mut self.rng);
        Ok(if k == 0 { parent_position(tree.get(x).parent) } else { Position::At(kids.start + k as u32 - 1) })
    }

    #[inline]
    fn record_visit(&mut self, tree: &MarkedTree, y: VertexId) {
        let idx = y as usize;
        if self.local_time.len() <= idx {
            self.local_time.resize((idx + 1).max(self.local_time.len() * 2), 0);
        }
        let c = self.local_time[idx] + 1;
        self.local_time[idx] = c;
        if c == 1 {
            self.visited.push(y);
            if let Some(b) = &mut self.barrier {
                b.observe(tree, y, self.steps);
            }
        }
        // Counts grow by one, so a new count either ties the maximum or
        // exceeds it by exactly one.
        if c > self.max_count {
            self.max_count = c;
            self.favorites.clear();
            self.favorites.push(y);
        } else if c == self.max_count {
            self.favorites.push(y);
        }
        if y == ROOT {
            self.root_returns.push(self.steps);
        }
        let d = tree.get(y).depth;
        if d > self.max_depth {
            self.max_depth = d;
        }
    }

    /// Advances exactly `n_steps` steps. On a resource error the state keeps
    /// every statistic accumulated so far and the error reports the step count.
    pub fn run(&mut self, tree: &mut MarkedTree, n_steps: u64) -> Result<()> {
        if n_steps == 0 {
            return Err(Error::domain("n_steps must be at least 1"));
        }
        for _ in 0..n_steps {
            if let Err(e) = self.step(tree) {
                return Err(Error::Interrupted { steps: self.steps, source: Box::new(e) });
            }
        }
        Ok(())
    }

    /// Runs until the `m`-th return to the root, `T_∅^{(m)}`.
    pub fn run_until_returns(&mut self, tree: &mut MarkedTree, m: u64) -> Result<()> {
        if m == 0 {
            return Err(Error::domain("m must be at least 1"));
        }
        while (self.root_returns.len() as u64) < m {
            if let Err(e) = self.step(tree) {
                return Err(Error::Interrupted { steps: self.steps, source: Box::new(e) });
            }
        }
        Ok(())
    }

    /// Full rescan of the local-time table against the maintained favorites.
    pub fn audit_favorites(&self) -> bool {
        let max = self.local_times().map(|(_, c)| c).max().unwrap_or(0);
        if max != self.max_count {
            return false;
        }
        let mut want: Vec<VertexId> = self.local_times().filter(|&(_, c)| c == max && max > 0).map(|(x, _)| x).collect();
        let mut have = self.favorites.clone();
        want.sort_unstable();
        have.sort_unstable();
        want == have
    }
}

/// `L_{T_∅^{(m)}}(x)` for each target, over `replicas` independent runs of
/// `m` root excursions in one environment, by step-level simulation.
///
/// Between replicas the tree is cut back to its current size once it grows
/// past `soft_cap` vertices; targets must already exist in the arena.
pub fn excursion_local_times(
    tree: &mut MarkedTree,
    targets: &[VertexId],
    m: u64,
    replicas: usize,
    seed: u64,
    soft_cap: usize,
) -> Result<Vec<Vec<u32>>> {
    if let Some(&bad) = targets.iter().find(|&&x| x as usize >= tree.len()) {
        return Err(Error::domain(format!("target {bad} is not in the arena")));
    }
    let prefix = tree.len();
    let mut walk = WalkState::new(tree, seed)?;
    let mut out = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        walk.restart();
        walk.run_until_returns(tree, m)?;
        out.push(targets.iter().map(|&x| walk.local_time(x)).collect());
        if tree.len() > soft_cap {
            tree.truncate(prefix);
            walk.restart();
        }
    }
    Ok(out)
}

/// Per-excursion local times `L_{T^{(j)}}(x) - L_{T^{(j-1)}}(x)` of each
/// target over `m` consecutive excursions from the root. The root is counted
/// at the return that closes each excursion.
pub fn excursion_counts(tree: &mut MarkedTree, targets: &[VertexId], m: u64, seed: u64) -> Result<Vec<MeanVar>> {
    let mut walk = WalkState::new(tree, seed)?;
    let mut acc = vec![MeanVar::new(); targets.len()];
    let mut current = vec![0u32; targets.len()];
    let mut done = 0;
    while done < m {
        let pos = walk.step(tree).map_err(|e| Error::Interrupted { steps: walk.steps, source: Box::new(e) })?;
        if let Position::At(x) = pos {
            for (c, &t) in current.iter_mut().zip(targets) {
                if t == x {
                    *c += 1;
                }
            }
            if x == ROOT {
                for (a, c) in acc.iter_mut().zip(current.iter_mut()) {
                    a.push(f64::from(*c));
                    *c = 0;
                }
                done += 1;
            }
        }
    }
    Ok(acc)
}

/// One trajectory summary line.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub seed: u64,
    pub replica: u64,
    pub n: u64,
    pub root_local_time: u32,
    pub max_count: u32,
    pub n_favorites: usize,
    pub favorites_in_umin: bool,
    pub max_depth: u32,
    pub barrier_hit: bool,
}

impl TrajectoryRow {
    pub const SCHEMA: &'static str = "trajectory";
    pub const VERSION: u32 = 1;
    pub const COLUMNS: [&'static str; 9] = [
        "seed",
        "replica",
        "n",
        "root_local_time",
        "max_count",
        "n_favorites",
        "favorites_in_umin",
        "max_depth",
        "barrier_hit",
    ];

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.replica.to_string(),
            self.n.to_string(),
            self.root_local_time.to_string(),
            self.max_count.to_string(),
            self.n_favorites.to_string(),
            u8::from(self.favorites_in_umin).to_string(),
            self.max_depth.to_string(),
            u8::from(self.barrier_hit).to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{calibrate_law, DisplacementLaw, FamilyId};
    use std::sync::Arc;

    fn f1() -> Arc<DisplacementLaw> {
        Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap())
    }

    #[test]
    fn ghost_always_returns_to_root() {
        let mut tree = MarkedTree::new(f1(), 1);
        let mut rng = from_seed(3);
        for _ in 0..100 {
            assert_eq!(sample_step(&mut tree, Position::Ghost, &mut rng).unwrap(), Position::At(ROOT));
        }
    }

    #[test]
    fn single_step_sets_one_count() {
        let mut tree = MarkedTree::new(f1(), 2);
        let mut w = WalkState::new(&mut tree, 5).unwrap();
        w.run(&mut tree, 1).unwrap();
        let total: u32 = w.local_times().map(|(_, c)| c).sum();
        assert_eq!(total as u64 + w.ghost_visits, 1);
        assert!(w.audit_favorites());
    }

    #[test]
    fn zero_steps_is_rejected() {
        let mut tree = MarkedTree::new(f1(), 2);
        let mut w = WalkState::new(&mut tree, 5).unwrap();
        assert!(matches!(w.run(&mut tree, 0), Err(Error::Domain(_))));
        assert!(matches!(w.run_until_returns(&mut tree, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn invariants_hold_along_a_run() {
        let mut tree = MarkedTree::new(f1(), 8);
        let mut w = WalkState::new(&mut tree, 9).unwrap().with_alias_threshold(4);
        let mut prev_ghost = false;
        let mut snapshot: Vec<u32> = Vec::new();
        for i in 1..=20_000u64 {
            let pos = w.step(&mut tree).unwrap();
            if prev_ghost {
                assert_eq!(pos, Position::At(ROOT));
            }
            prev_ghost = pos == Position::Ghost;
            if i % 997 == 0 {
                assert!(w.audit_favorites());
                let total: u64 = w.local_times().map(|(_, c)| c as u64).sum();
                assert_eq!(total + w.ghost_visits, i);
                assert_eq!(w.local_time(ROOT) as usize, w.root_returns.len());
                assert!(w.root_returns.windows(2).all(|p| p[0] < p[1]));
                for (x, c) in snapshot.iter().enumerate() {
                    assert!(w.local_time(x as VertexId) >= *c);
                }
                snapshot = (0..tree.len() as VertexId).map(|x| w.local_time(x)).collect();
            }
        }
        // Every visited non-root vertex has a visited parent.
        for &x in w.visited() {
            let p = tree.get(x).parent;
            assert!(p == NO_PARENT || w.local_time(p) > 0);
        }
    }

    #[test]
    fn extinct_root_fails_fast() {
        use crate::env::law::{DiscreteDisplacement, OffspringLaw};
        let law = Arc::new(DisplacementLaw::uncalibrated(
            OffspringLaw::fixed(0),
            DiscreteDisplacement::new(vec![0.0], vec![1.0]).unwrap(),
        ));
        let mut tree = MarkedTree::new(law, 1);
        assert!(matches!(WalkState::new(&mut tree, 1), Err(Error::Extinct)));
    }

    #[test]
    fn run_until_one_return_stops_at_first_return() {
        let mut tree = MarkedTree::new(f1(), 4);
        for seed in 0..20 {
            let mut w = WalkState::new(&mut tree, seed).unwrap();
            w.run_until_returns(&mut tree, 1).unwrap();
            assert_eq!(w.local_time(ROOT), 1);
            assert_eq!(w.position, Position::At(ROOT));
            assert_eq!(*w.root_returns.last().unwrap(), w.steps);
        }
    }

    #[test]
    fn arena_exhaustion_keeps_partial_statistics() {
        let mut tree = MarkedTree::with_cap(f1(), 4, 64);
        let mut w = WalkState::new(&mut tree, 1).unwrap();
        let err = w.run(&mut tree, 10_000_000).unwrap_err();
        assert!(err.is_resource());
        match err {
            Error::Interrupted { steps, .. } => assert_eq!(steps, w.steps),
            other => panic!("unexpected {other:?}"),
        }
        assert!(w.steps > 0 && w.audit_favorites());
    }

    #[test]
    fn walk_is_deterministic() {
        let run = || {
            let mut tree = MarkedTree::new(f1(), 12);
            let mut w = WalkState::new(&mut tree, 34).unwrap();
            w.run(&mut tree, 5000).unwrap();
            (w.position, w.max_count, w.root_returns.clone(), w.max_depth)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn restart_clears_everything() {
        let mut tree = MarkedTree::new(f1(), 12);
        let mut w = WalkState::new(&mut tree, 34).unwrap();
        w.run(&mut tree, 500).unwrap();
        w.restart();
        assert_eq!(w.steps, 0);
        assert!(w.visited().is_empty() && w.favorites().is_empty());
        assert!((0..tree.len() as VertexId).all(|x| w.local_time(x) == 0));
    }
}
