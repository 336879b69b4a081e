//! Best-first search for the vertices of smallest symmetrized potential.
//!
//! Vertices are popped in increasing order of `V`; each popped vertex is
//! expanded so that `U = V - log(1 + Λ)` is known. The search stops once the
//! smallest `V` left on the frontier exceeds the current `k`-th best `U` by
//! more than `log(1 + lambda_cap) + v_margin`. The certificate is conditional
//! on `log(1 + Λ) ≤ log(1 + lambda_cap)` below the frontier.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::env::{MarkedTree, VertexId, ROOT};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    KeyAscending,
    KeyDescending,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UminConfig {
    pub lambda_cap: f64,
    pub v_margin: f64,
    pub tie_tol: f64,
    pub max_expansions: usize,
    pub tie_break: TieBreak,
}

impl Default for UminConfig {
    fn default() -> Self {
        UminConfig {
            lambda_cap: 3f64.exp() - 1.0,
            v_margin: 0.5,
            tie_tol: 1e-12,
            max_expansions: 2_000_000,
            tie_break: TieBreak::KeyAscending,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UminResult {
    /// Sorted arena ids within `tie_tol` of `min_value`.
    pub minimizers: Vec<VertexId>,
    pub min_value: f64,
    /// Smallest `V` on the unexpanded frontier; `+∞` if the tree was exhausted.
    pub frontier_bound: f64,
    pub lambda_cap: f64,
    pub certified: bool,
    pub expansions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowestU {
    /// `(id, U)` sorted by `U`, at least `k` entries when the tree is that large.
    pub vertices: Vec<(VertexId, f64)>,
    pub frontier_bound: f64,
    pub certified: bool,
    pub expansions: usize,
}

struct Entry {
    v: f64,
    key: u64,
    id: VertexId,
    descending: bool,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Reversed so that the max-heap pops the smallest V first.
    fn cmp(&self, other: &Self) -> Ordering {
        let keys = if self.descending { self.key.cmp(&other.key) } else { other.key.cmp(&self.key) };
        other.v.total_cmp(&self.v).then(keys)
    }
}

/// The `k` smallest values of `U` with the stopping rule above applied to
/// the `k`-th best. Ties at the `k`-th value are all kept.
pub fn lowest_u(tree: &mut MarkedTree, k: usize, cfg: &UminConfig) -> Result<LowestU> {
    let k = k.max(1);
    let slack = cfg.lambda_cap.ln_1p() + cfg.v_margin;
    let descending = cfg.tie_break == TieBreak::KeyDescending;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { v: tree.get(ROOT).v, key: tree.get(ROOT).key, id: ROOT, descending });
    let mut found: Vec<(VertexId, f64)> = Vec::new();
    let mut expansions = 0usize;
    let kth = |found: &Vec<(VertexId, f64)>| if found.len() >= k { found[k - 1].1 } else { f64::INFINITY };
    let mut certified = true;
    while let Some(top) = heap.peek() {
        if top.v > kth(&found) + slack {
            break;
        }
        if expansions >= cfg.max_expansions {
            certified = false;
            break;
        }
        let x = heap.pop().expect("peeked").id;
        let kids = match tree.expand(x) {
            Ok(k) => k,
            Err(e) if e.is_resource() => {
                certified = false;
                heap.push(Entry { v: tree.get(x).v, key: tree.get(x).key, id: x, descending });
                break;
            }
            Err(e) => return Err(e),
        };
        expansions += 1;
        let u = tree.get(x).u;
        if u <= kth(&found) + cfg.tie_tol {
            let pos = found.partition_point(|&(_, w)| w.total_cmp(&u).is_le());
            found.insert(pos, (x, u));
            let cut = kth(&found) + cfg.tie_tol;
            let keep = found.partition_point(|&(_, w)| w <= cut).max(k.min(found.len()));
            found.truncate(keep);
        }
        for c in kids {
            let r = tree.get(c);
            heap.push(Entry { v: r.v, key: r.key, id: c, descending });
        }
    }
    let frontier_bound = heap.peek().map_or(f64::INFINITY, |e| e.v);
    if found.len() >= k {
        certified &= frontier_bound - cfg.lambda_cap.ln_1p() > kth(&found);
    }
    Ok(LowestU { vertices: found, frontier_bound, certified, expansions })
}

pub fn find_umin(tree: &mut MarkedTree, cfg: &UminConfig) -> Result<UminResult> {
    let low = lowest_u(tree, 1, cfg)?;
    let min_value = low.vertices.first().map_or(f64::INFINITY, |&(_, u)| u);
    let mut minimizers: Vec<VertexId> =
        low.vertices.iter().filter(|&&(_, u)| u - min_value <= cfg.tie_tol).map(|&(x, _)| x).collect();
    minimizers.sort_unstable();
    Ok(UminResult {
        minimizers,
        min_value,
        frontier_bound: low.frontier_bound,
        lambda_cap: cfg.lambda_cap,
        certified: low.certified,
        expansions: low.expansions,
    })
}
