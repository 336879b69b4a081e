//! `(1/log n) Σ_{x < L_n^{(γ)}} e^{-U(x)}` by depth-first search.
//!
//! `x < L_n^{(γ)}` means that no vertex of `]∅, x[` has crossed the barrier,
//! so barrier vertices themselves are counted and the search stops below
//! them. The set is infinite, so the search also stops below vertices with
//! `V > v_cutoff` or at `max_depth`; the mass left there is reported.

use crate::env::{MarkedTree, VertexId, ROOT};
use crate::error::{Error, Result};
use crate::walk::{barrier_crossed, BarrierConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierLimits {
    pub max_depth: u32,
    pub max_vertices: usize,
    pub v_cutoff: f64,
}

impl Default for BarrierLimits {
    fn default() -> Self {
        BarrierLimits { max_depth: 200, max_vertices: 2_000_000, v_cutoff: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierSum {
    pub n: u64,
    pub gamma: f64,
    pub value: f64,
    pub vertices: usize,
    /// Uncrossed vertices whose subtrees were not searched.
    pub cut: usize,
    /// `Σ e^{-V(x)}` over those vertices.
    pub cut_mass: f64,
    /// True when `max_vertices` or the arena stopped the search.
    pub truncated: bool,
}

pub fn barrier_sum(tree: &mut MarkedTree, n: u64, gamma: f64, limits: &BarrierLimits) -> Result<BarrierSum> {
    let cfg = BarrierConfig::new(gamma, n)?;
    if gamma >= 2.0 {
        return Err(Error::domain("barrier sum needs gamma < 2"));
    }
    let mut out = BarrierSum { n, gamma, value: 0.0, vertices: 0, cut: 0, cut_mass: 0.0, truncated: false };
    let mut total = 0.0;
    let mut stack: Vec<VertexId> = vec![ROOT];
    while let Some(x) = stack.pop() {
        if out.vertices >= limits.max_vertices {
            out.truncated = true;
            break;
        }
        let kids = match tree.expand(x) {
            Ok(k) => k,
            Err(e) if e.is_resource() => {
                out.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let r = tree.get(x);
        out.vertices += 1;
        total += (-r.u).exp();
        if barrier_crossed(tree, x, &cfg) {
            continue;
        }
        if r.depth >= limits.max_depth || r.v > limits.v_cutoff {
            out.cut += 1;
            out.cut_mass += (-r.v).exp();
            continue;
        }
        stack.extend(kids.rev());
    }
    out.value = total / (n as f64).ln();
    Ok(out)
}

/// The same sum over generations `0..=depth` by checking the predicate on
/// every vertex.
pub fn barrier_sum_brute(tree: &mut MarkedTree, n: u64, gamma: f64, depth: u32) -> Result<f64> {
    let cfg = BarrierConfig::new(gamma, n)?;
    let mut total = 0.0;
    for d in 0..=depth {
        for x in tree.generation(d)? {
            let path = tree.path(x);
            let inner = if path.len() > 2 { &path[1..path.len() - 1] } else { &[][..] };
            let inside = inner.iter().all(|&z| !barrier_crossed(tree, z, &cfg));
            if inside {
                total += (-tree.u(x)?).exp();
            }
        }
    }
    Ok(total / (n as f64).ln())
}
