//! Lazily expanded marked Galton–Watson tree.
//!
//! Vertices live in a dense arena and are created a whole sibling group at a
//! time, so the children of `x` occupy the contiguous id range
//! `first_child .. first_child + n_children`. The children of a vertex are
//! sampled from a generator seeded by that vertex's key, which is a hash of
//! the tree seed and the vertex's Ulam–Harris address. The realized
//! environment therefore does not depend on the order in which vertices get
//! expanded; only the arena ids do.

use std::ops::Range;
use std::sync::Arc;

use crate::env::law::DisplacementLaw;
use crate::error::{Error, Result};
use crate::rng::{from_seed, mix64};

pub type VertexId = u32;

pub const ROOT: VertexId = 0;
pub const NO_PARENT: VertexId = VertexId::MAX;
pub const DEFAULT_ARENA_CAP: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub struct VertexRecord {
    pub parent: VertexId,
    pub depth: u32,
    pub first_child: VertexId,
    pub n_children: u32,
    pub expanded: bool,
    pub key: u64,
    /// Potential `V(x)`.
    pub v: f64,
    /// `ω(←x, x)`; the root stores `ω(←∅, ∅) = 1`.
    pub w_in: f64,
    /// `ω(x, ←x)`. NaN until expanded.
    pub w_parent: f64,
    /// `Λ(x) = Σ_{children} e^{-(V(y) - V(x))}`. NaN until expanded.
    pub lambda: f64,
    /// Symmetrized potential `U(x) = V(x) - log(1 + Λ(x))`. NaN until expanded.
    pub u: f64,
    /// `Σ_{z ∈ ]∅, x]} e^{V(z)}`, Neumaier-compensated along the path.
    pub cum_exp_v: f64,
    cum_exp_v_err: f64,
    /// `log Σ_{z ∈ ]∅, x]} e^{V(z)}`; finite even where `cum_exp_v` overflows.
    pub log_cum_exp_v: f64,
}

impl VertexRecord {
    pub fn children(&self) -> Range<VertexId> {
        self.first_child..self.first_child + self.n_children
    }

    /// Compensated value of the path sum.
    pub fn path_exp_sum(&self) -> f64 {
        self.cum_exp_v + self.cum_exp_v_err
    }

    pub fn is_root(&self) -> bool {
        self.parent == NO_PARENT
    }
}

#[derive(Clone, Debug)]
pub struct MarkedTree {
    law: Arc<DisplacementLaw>,
    seed: u64,
    cap: usize,
    arena: Vec<VertexRecord>,
    scratch: Vec<f64>,
}

impl MarkedTree {
    pub fn new(law: Arc<DisplacementLaw>, seed: u64) -> Self {
        Self::with_cap(law, seed, DEFAULT_ARENA_CAP)
    }

    pub fn with_cap(law: Arc<DisplacementLaw>, seed: u64, cap: usize) -> Self {
        let cap = cap.clamp(1, NO_PARENT as usize);
        let mut tree = MarkedTree { law, seed, cap, arena: Vec::new(), scratch: Vec::new() };
        tree.reset(seed);
        tree
    }

    /// Discards every vertex and starts a fresh environment, keeping allocations.
    pub fn reset(&mut self, seed: u64) {
        self.seed = seed;
        self.arena.clear();
        self.arena.push(VertexRecord {
            parent: NO_PARENT,
            depth: 0,
            first_child: 0,
            n_children: 0,
            expanded: false,
            key: mix64(seed, 0),
            v: 0.0,
            w_in: 1.0,
            w_parent: f64::NAN,
            lambda: f64::NAN,
            u: f64::NAN,
            cum_exp_v: 0.0,
            cum_exp_v_err: 0.0,
            log_cum_exp_v: f64::NEG_INFINITY,
        });
    }

    pub fn law(&self) -> &Arc<DisplacementLaw> {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.arena.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arena.is_empty()
    }

    #[inline]
    pub fn get(&self, id: VertexId) -> &VertexRecord {
        &self.arena[id as usize]
    }

    pub fn vertices(&self) -> &[VertexRecord] {
        &self.arena
    }

    /// Samples the children of `id` unless that already happened.
    pub fn expand(&mut self, id: VertexId) -> Result<Range<VertexId>> {
        let idx = id as usize;
        if idx >= self.arena.len() {
            return Err(Error::domain(format!("vertex {id} does not exist")));
        }
        if self.arena[idx].expanded {
            return Ok(self.arena[idx].children());
        }

        let (key, v, depth, cum, cum_err, log_cum) = {
            let r = &self.arena[idx];
            (r.key, r.v, r.depth, r.cum_exp_v, r.cum_exp_v_err, r.log_cum_exp_v)
        };
        let mut rng = from_seed(key);
        let law = &*self.law;
        let n = law.offspring.sample(&mut rng);
        if self.arena.len() + n as usize > self.cap {
            return Err(Error::ArenaFull { cap: self.cap });
        }
        self.scratch.clear();
        for _ in 0..n {
            self.scratch.push(law.displacement.sample(&mut rng));
        }
        let lambda: f64 = self.scratch.iter().map(|a| (-a).exp()).sum();
        let w_parent = 1.0 / (1.0 + lambda);

        let first = self.arena.len() as VertexId;
        for (i, &a) in self.scratch.iter().enumerate() {
            let cv = v + a;
            let ev = cv.exp();
            let (s, e) = neumaier_add(cum, cum_err, ev);
            self.arena.push(VertexRecord {
                parent: id,
                depth: depth + 1,
                first_child: 0,
                n_children: 0,
                expanded: false,
                key: mix64(key, i as u64 + 1),
                v: cv,
                w_in: (-a).exp() * w_parent,
                w_parent: f64::NAN,
                lambda: f64::NAN,
                u: f64::NAN,
                cum_exp_v: s,
                cum_exp_v_err: e,
                log_cum_exp_v: log_add_exp(log_cum, cv),
            });
        }

        let r = &mut self.arena[idx];
        r.first_child = first;
        r.n_children = n;
        r.expanded = true;
        r.lambda = lambda;
        r.w_parent = w_parent;
        r.u = v - lambda.ln_1p();
        Ok(r.children())
    }

    /// Expands `id` if needed and returns its record.
    pub fn expanded(&mut self, id: VertexId) -> Result<&VertexRecord> {
        self.expand(id)?;
        Ok(self.get(id))
    }

    /// `U(x)`, expanding `x` on demand.
    pub fn u(&mut self, id: VertexId) -> Result<f64> {
        Ok(self.expanded(id)?.u)
    }

    /// Vertices of `[[∅, x]]`, root first.
    pub fn path(&self, id: VertexId) -> Vec<VertexId> {
        let mut out = Vec::with_capacity(self.get(id).depth as usize + 1);
        let mut cur = id;
        loop {
            out.push(cur);
            let p = self.get(cur).parent;
            if p == NO_PARENT {
                break;
            }
            cur = p;
        }
        out.reverse();
        out
    }

    /// True iff `ancestor` lies on `[[∅, x]]`.
    pub fn is_ancestor_or_self(&self, ancestor: VertexId, x: VertexId) -> bool {
        let target_depth = self.get(ancestor).depth;
        let mut cur = x;
        while self.get(cur).depth > target_depth {
            cur = self.get(cur).parent;
        }
        cur == ancestor
    }

    /// All vertices of generation `n`, expanding generations `0..n`.
    pub fn generation(&mut self, n: u32) -> Result<Vec<VertexId>> {
        let mut level = vec![ROOT];
        for _ in 0..n {
            let mut next = Vec::new();
            for &x in &level {
                next.extend(self.expand(x)?);
            }
            if next.is_empty() {
                return Ok(next);
            }
            level = next;
        }
        Ok(level)
    }

    /// Whether generation `depth` is non-empty. Depth-first, so surviving trees
    /// are answered after expanding roughly one path.
    pub fn survives_to(&mut self, depth: u32) -> Result<bool> {
        let mut stack = vec![ROOT];
        while let Some(x) = stack.pop() {
            if self.get(x).depth >= depth {
                return Ok(true);
            }
            let kids = self.expand(x)?;
            stack.extend(kids.rev());
        }
        Ok(false)
    }

    /// Drops every vertex with id `>= len` and marks their parents unexpanded.
    ///
    /// Because children are sampled from per-vertex keys, re-expanding later
    /// reproduces exactly the same environment, so this only releases memory.
    /// Ids below `len` stay valid.
    pub fn truncate(&mut self, len: usize) {
        let mut len = len.max(1);
        if len >= self.arena.len() {
            return;
        }
        // Never split a sibling group.
        for r in &self.arena[..len] {
            let start = r.first_child as usize;
            if r.expanded && start < len && start + r.n_children as usize > len {
                len = start;
                break;
            }
        }
        self.arena.truncate(len);
        for r in &mut self.arena {
            if r.expanded && (r.first_child as usize) >= len && r.n_children > 0 {
                r.expanded = false;
                r.first_child = 0;
                r.n_children = 0;
                r.lambda = f64::NAN;
                r.w_parent = f64::NAN;
                r.u = f64::NAN;
            }
        }
    }

    /// Root is expanded and has at least one child.
    pub fn check_alive(&mut self) -> Result<()> {
        if self.expand(ROOT)?.is_empty() {
            Err(Error::Extinct)
        } else {
            Ok(())
        }
    }
}

#[inline]
fn neumaier_add(sum: f64, err: f64, x: f64) -> (f64, f64) {
    let t = sum + x;
    let c = if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
    (t, err + c)
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::law::{calibrate_law, DiscreteDisplacement, FamilyId, OffspringLaw};
    use proptest::prelude::*;

    fn f1() -> Arc<DisplacementLaw> {
        Arc::new(calibrate_law(FamilyId::F1, &[0.25]).unwrap())
    }

    fn fixed_law(children: u32, values: Vec<f64>) -> Arc<DisplacementLaw> {
        let k = values.len();
        let probs = vec![1.0 / k as f64; k];
        Arc::new(DisplacementLaw::uncalibrated(
            OffspringLaw::fixed(children),
            DiscreteDisplacement::new(values, probs).unwrap(),
        ))
    }

    fn check_record_invariants(tree: &MarkedTree, id: VertexId) {
        let r = tree.get(id);
        assert!(r.expanded);
        let kids: Vec<&VertexRecord> = r.children().map(|c| tree.get(c)).collect();
        let total = r.w_parent + kids.iter().map(|k| k.w_in).sum::<f64>();
        assert!((total - 1.0).abs() < 1e-12);
        let lhs = (-r.u).exp();
        let form1 = (-r.v).exp() / r.w_parent;
        let form2 = (-r.v).exp() + kids.iter().map(|k| (-k.v).exp()).sum::<f64>();
        assert!((lhs - form1).abs() <= 1e-12 * lhs.max(1.0));
        assert!((lhs - form2).abs() <= 1e-12 * lhs.max(1.0));
        assert!((lhs - (-r.v).exp() * (1.0 + r.lambda)).abs() <= 1e-12 * lhs.max(1.0));
        for k in &kids {
            let back = -(k.w_in / r.w_parent).ln();
            assert!(((k.v - r.v) - back).abs() < 1e-12);
            let want = r.path_exp_sum() + k.v.exp();
            assert!((k.path_exp_sum() - want).abs() <= 1e-12 * want);
            assert!((k.log_cum_exp_v - want.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn leaf_has_zero_lambda() {
        let mut tree = MarkedTree::new(fixed_law(0, vec![0.0]), 1);
        let kids = tree.expand(ROOT).unwrap();
        assert!(kids.is_empty());
        let r = tree.get(ROOT);
        assert_eq!(r.lambda, 0.0);
        assert_eq!(r.u, r.v);
        assert_eq!(r.w_parent, 1.0);
        assert!(matches!(tree.check_alive(), Err(Error::Extinct)));
    }

    #[test]
    fn fixture_displacements_give_closed_form_weights() {
        // Two children, displacement law concentrated so both draws are known:
        // use a single-point law per child by building two separate trees is
        // awkward, so put both values on a two-child fixed law and recover
        // which child got which from V.
        let law = fixed_law(2, vec![-0.3, 0.9]);
        for seed in 0..50 {
            let mut tree = MarkedTree::new(law.clone(), seed);
            tree.expand(ROOT).unwrap();
            let r = tree.get(ROOT).clone();
            let a: Vec<f64> = r.children().map(|c| tree.get(c).v).collect();
            let denom = 1.0 + a.iter().map(|x| (-x).exp()).sum::<f64>();
            assert!((r.w_parent - 1.0 / denom).abs() < 1e-12);
            for c in r.children() {
                let k = tree.get(c);
                assert!((k.w_in - (-k.v).exp() / denom).abs() < 1e-12);
            }
            check_record_invariants(&tree, ROOT);
            if a.contains(&-0.3) && a.contains(&0.9) {
                let want = 1.0 / (1.0 + 0.3f64.exp() + (-0.9f64).exp());
                assert!((r.w_parent - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn root_expansion_gives_one_plus_lambda() {
        let mut tree = MarkedTree::new(f1(), 9);
        tree.expand(ROOT).unwrap();
        let r = tree.get(ROOT);
        let s: f64 = r.children().map(|c| (-tree.get(c).v).exp()).sum();
        assert!(((-r.u).exp() - (1.0 + s)).abs() < 1e-12);
        assert!(((-r.u).exp() - (1.0 + r.lambda)).abs() < 1e-12);
    }

    #[test]
    fn expansion_is_idempotent() {
        let mut tree = MarkedTree::new(f1(), 3);
        let a = tree.expand(ROOT).unwrap();
        let len = tree.len();
        let b = tree.expand(ROOT).unwrap();
        assert_eq!(a, b);
        assert_eq!(tree.len(), len);
    }

    #[test]
    fn arena_cap_is_reported() {
        let mut tree = MarkedTree::with_cap(f1(), 3, 5);
        tree.expand(ROOT).unwrap();
        tree.expand(1).unwrap();
        assert!(matches!(tree.expand(2), Err(Error::ArenaFull { cap: 5 })));
        // Nothing was half-written.
        assert!(!tree.get(2).expanded);
        assert_eq!(tree.len(), 5);
    }

    #[test]
    fn environment_is_independent_of_expansion_order() {
        let law = Arc::new(calibrate_law(FamilyId::F3, &[2.0, 0.2, 0.3, 0.5]).unwrap());
        let mut bfs = MarkedTree::new(law.clone(), 77);
        bfs.generation(4).unwrap();
        let mut dfs = MarkedTree::new(law, 77);
        dfs.survives_to(4).unwrap();
        // Every vertex reached by the depth-first search has a twin with the
        // same key, V and U in the breadth-first tree.
        for r in dfs.vertices().iter().filter(|r| r.expanded) {
            let twin = bfs.vertices().iter().find(|b| b.key == r.key).expect("twin");
            assert_eq!(twin.v.to_bits(), r.v.to_bits());
            assert_eq!(twin.u.to_bits(), r.u.to_bits());
            assert_eq!(twin.n_children, r.n_children);
        }
    }

    #[test]
    fn truncation_then_reexpansion_reproduces_environment() {
        let law = Arc::new(calibrate_law(FamilyId::F2, &[2.0, 0.3]).unwrap());
        let mut full = MarkedTree::new(law.clone(), 21);
        full.generation(6).unwrap();
        let mut t = MarkedTree::new(law, 21);
        t.generation(2).unwrap();
        let prefix = t.len();
        t.generation(6).unwrap();
        t.truncate(prefix);
        assert_eq!(t.len(), prefix);
        t.generation(6).unwrap();
        assert_eq!(t.len(), full.len());
        let mut a: Vec<(u64, u64)> = t.vertices().iter().map(|r| (r.key, r.v.to_bits())).collect();
        let mut b: Vec<(u64, u64)> = full.vertices().iter().map(|r| (r.key, r.v.to_bits())).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        // A cut through a sibling group falls back to the group start.
        t.truncate(prefix + 1);
        assert!(t.len() <= prefix + 1);
        for r in t.vertices() {
            assert!(!r.expanded || r.n_children == 0 || (r.first_child as usize) < t.len());
        }
    }

    #[test]
    fn binary_family_always_survives() {
        let mut tree = MarkedTree::new(f1(), 5);
        for d in 0..20 {
            assert!(tree.survives_to(d).unwrap());
        }
        assert_eq!(tree.generation(3).unwrap().len(), 8);
    }

    #[test]
    fn cum_exp_sum_matches_brute_force_path_sum() {
        let mut tree = MarkedTree::new(f1(), 11);
        tree.generation(8).unwrap();
        for id in 1..tree.len() as VertexId {
            let brute: f64 = tree.path(id)[1..].iter().map(|&z| tree.get(z).v.exp()).sum();
            let r = tree.get(id);
            assert!((r.path_exp_sum() - brute).abs() <= 1e-12 * brute);
        }
    }

    proptest! {
        #[test]
        fn record_invariants_hold_everywhere(seed in any::<u64>(), fam in 0usize..3) {
            let fam = FamilyId::all_presets()[fam];
            let law = Arc::new(calibrate_law(fam, &fam.default_params()).unwrap());
            let mut tree = MarkedTree::new(law, seed);
            let mut queue = vec![ROOT];
            while let Some(x) = queue.pop() {
                if tree.len() > 400 { break; }
                let kids = tree.expand(x).unwrap();
                if tree.get(x).depth < 6 { queue.extend(kids); }
            }
            for id in 0..tree.len() as VertexId {
                if tree.get(id).expanded { check_record_invariants(&tree, id); }
            }
        }

        #[test]
        fn same_seed_same_arena(seed in any::<u64>()) {
            let law = f1();
            let mut a = MarkedTree::new(law.clone(), seed);
            let mut b = MarkedTree::new(law, seed);
            a.generation(5).unwrap();
            b.generation(5).unwrap();
            // Unexpanded records hold NaN, so compare their printed form.
            prop_assert_eq!(format!("{:?}", a.vertices()), format!("{:?}", b.vertices()));
        }
    }
}
