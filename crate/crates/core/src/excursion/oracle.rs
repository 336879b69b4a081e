//! Brute-force hitting probabilities by first-step analysis on a finite
//! piece of the environment.
//!
//! The chain lives on the vertices of a snapshot plus the ghost `←∅`. From a
//! vertex `z` it moves to each included neighbour with its true weight
//! `ω(z, ·)`; the remaining mass belongs to excursions into subtrees outside
//! the snapshot. The walk is recurrent, so such an excursion comes back to
//! `z`: for intermediate states this is a self-loop, and for a taboo source it
//! is a return, i.e. a failure.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::env::{TreeSnapshot, VertexId, ROOT};
use crate::error::{Error, Result};
use crate::walk::Position;

struct Chain {
    states: Vec<Position>,
    index: HashMap<Position, usize>,
    /// Outgoing `(state, weight)` pairs; the self-loop mass is `leftover`.
    edges: Vec<Vec<(usize, f64)>>,
    leftover: Vec<f64>,
}

impl Chain {
    fn build(snap: &TreeSnapshot) -> Result<Chain> {
        let mut states = Vec::with_capacity(snap.vertices.len() + 1);
        let mut index = HashMap::new();
        for v in &snap.vertices {
            if index.insert(Position::At(v.id), states.len()).is_some() {
                return Err(Error::domain(format!("vertex {} appears twice in the snapshot", v.id)));
            }
            states.push(Position::At(v.id));
        }
        let has_root = index.contains_key(&Position::At(ROOT));
        if has_root {
            index.insert(Position::Ghost, states.len());
            states.push(Position::Ghost);
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); states.len()];
        for (i, v) in snap.vertices.iter().enumerate() {
            if let Some(p) = v.parent {
                let &pi = index
                    .get(&Position::At(p))
                    .ok_or_else(|| Error::domain(format!("parent {p} of vertex {} is missing", v.id)))?;
                children[pi].push(i);
            }
        }
        let mut edges = vec![Vec::new(); states.len()];
        let mut leftover = vec![0.0; states.len()];
        for (i, v) in snap.vertices.iter().enumerate() {
            let up = match v.parent {
                Some(p) => index[&Position::At(p)],
                None => index[&Position::Ghost],
            };
            if v.w_parent.is_finite() {
                let mut total = v.w_parent;
                edges[i].push((up, v.w_parent));
                for &c in &children[i] {
                    let w = v.w_parent * (-(snap.vertices[c].v - v.v)).exp();
                    total += w;
                    edges[i].push((c, w));
                }
                leftover[i] = (1.0 - total).max(0.0);
            } else if children[i].is_empty() {
                // Unexpanded frontier vertex: only its parent is included.
                edges[i].push((up, 1.0));
            } else {
                return Err(Error::domain(format!("vertex {} has included children but no weights", v.id)));
            }
        }
        if has_root {
            let g = index[&Position::Ghost];
            edges[g].push((index[&Position::At(ROOT)], 1.0));
        }
        Ok(Chain { states, index, edges, leftover })
    }

    fn state(&self, p: Position) -> Result<usize> {
        self.index.get(&p).copied().ok_or_else(|| Error::domain(format!("{p:?} is not in the snapshot")))
    }
}

/// `P_source(T_target < T_taboo)` with hitting times counted from time 1.
pub fn oracle_hitting(snap: &TreeSnapshot, source: Position, target: Position, taboo: &[Position]) -> Result<f64> {
    let chain = Chain::build(snap)?;
    let n = chain.states.len();
    let src = chain.state(source)?;
    let tgt = chain.state(target)?;
    // 1 for target, 0 for taboo, None for transient.
    let mut value: Vec<Option<f64>> = vec![None; n];
    for &t in taboo {
        value[chain.state(t)?] = Some(0.0);
    }
    if value[tgt].is_some() {
        return Err(Error::domain("target is also taboo"));
    }
    value[tgt] = Some(1.0);

    // Transient states reachable from the source's first step.
    let mut order: Vec<usize> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let mut target_reached = false;
    let push = |s: usize, order: &mut Vec<usize>, slot: &mut Vec<usize>, queue: &mut VecDeque<usize>| {
        if value[s].is_none() && slot[s] == usize::MAX {
            slot[s] = order.len();
            order.push(s);
            queue.push_back(s);
        }
    };
    let first: Vec<usize> = if value[src].is_none() {
        vec![src]
    } else {
        let mut f: Vec<usize> = chain.edges[src].iter().filter(|e| e.1 > 0.0).map(|e| e.0).collect();
        if chain.leftover[src] > 0.0 {
            f.push(src);
        }
        f
    };
    for s in first {
        if s == tgt {
            target_reached = true;
        }
        push(s, &mut order, &mut slot, &mut queue);
    }
    while let Some(s) = queue.pop_front() {
        for &(t, w) in &chain.edges[s] {
            if w > 0.0 {
                if t == tgt {
                    target_reached = true;
                }
                push(t, &mut order, &mut slot, &mut queue);
            }
        }
    }
    if !target_reached {
        return Err(Error::Singular(format!("target {target:?} is unreachable from {source:?}")));
    }

    // Each transient state must be able to reach an absorbing one.
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (s, out) in chain.edges.iter().enumerate() {
        for &(t, w) in out {
            if w > 0.0 {
                reverse[t].push(s);
            }
        }
    }
    let mut escapes = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| value[s].is_some()).collect();
    for &s in &queue {
        escapes[s] = true;
    }
    while let Some(t) = queue.pop_front() {
        for &s in &reverse[t] {
            if !escapes[s] {
                escapes[s] = true;
                queue.push_back(s);
            }
        }
    }
    if let Some(&stuck) = order.iter().find(|&&s| !escapes[s]) {
        return Err(Error::Singular(format!("{:?} cannot reach the target or a taboo state", chain.states[stuck])));
    }

    let k = order.len();
    let h = if k == 0 {
        DVector::zeros(0)
    } else {
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for (i, &s) in order.iter().enumerate() {
            a[(i, i)] += 1.0 - chain.leftover[s];
            for &(t, w) in &chain.edges[s] {
                match value[t] {
                    Some(val) => b[i] += w * val,
                    None => a[(i, slot[t])] -= w,
                }
            }
        }
        a.lu().solve(&b).ok_or_else(|| Error::Singular("LU factorization failed".into()))?
    };
    let val = |s: usize| value[s].unwrap_or_else(|| h[slot[s]]);

    if value[src].is_none() {
        return Ok(h[slot[src]]);
    }
    let mut total = chain.leftover[src] * val(src);
    for &(t, w) in &chain.edges[src] {
        total += w * val(t);
    }
    Ok(total)
}

/// `(a, 1 - p)` for target `x` by two first-step solves.
pub fn oracle_path_stats(snap: &TreeSnapshot, x: VertexId) -> Result<(f64, f64)> {
    let root = Position::At(ROOT);
    let at_x = Position::At(x);
    let a = oracle_hitting(snap, root, at_x, &[root])?;
    let one_minus_p = oracle_hitting(snap, at_x, root, &[at_x])?;
    Ok((a, one_minus_p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::snapshot::SnapshotVertex;

    fn vertex(id: u32, parent: Option<u32>, v: f64, w_parent: f64) -> SnapshotVertex {
        SnapshotVertex { id, parent, depth: id, v, u: f64::NAN, lambda: f64::NAN, w_parent }
    }

    #[test]
    fn adjacent_pair_returns_edge_weight() {
        // Root with w_parent 0.4 and one included child at V = 0.3.
        let snap = TreeSnapshot { vertices: vec![vertex(0, None, 0.0, 0.4), vertex(1, Some(0), 0.3, 0.5)] };
        let got = oracle_hitting(&snap, Position::At(0), Position::At(1), &[Position::At(0)]).unwrap();
        assert!((got - 0.4 * (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn three_step_path_matches_gamblers_ruin() {
        // Path 0 - 1 - 2 - 3; from 1, hit 3 before 0. With the restricted
        // chain's ratio r_z = e^{V(child) - V(z)}:
        // P = 1 / (1 + r_1 + r_1 r_2) = e^{V1} / (e^{V1} + e^{V2} + e^{V3}).
        let vs = [0.0, 0.5, -0.2, 1.0];
        let snap = TreeSnapshot {
            vertices: (0..4)
                .map(|i| vertex(i, i.checked_sub(1), vs[i as usize], [0.45, 0.3, 0.6, 0.5][i as usize]))
                .collect(),
        };
        let got = oracle_hitting(&snap, Position::At(1), Position::At(3), &[Position::At(0)]).unwrap();
        let r1 = (vs[2] - vs[1]).exp();
        let r2 = (vs[3] - vs[2]).exp();
        let want = 1.0 / (1.0 + r1 + r1 * r2);
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        // Hand arithmetic: e^{0.5} / (e^{0.5} + e^{-0.2} + e^{1}) ≈ 0.31793.
        assert!((want - 0.5f64.exp() / (0.5f64.exp() + (-0.2f64).exp() + 1.0f64.exp())).abs() < 1e-15);
        assert!((want - 0.317_934).abs() < 1e-6);
    }

    #[test]
    fn unreachable_target_is_singular() {
        let snap = TreeSnapshot {
            vertices: vec![vertex(0, None, 0.0, 0.5), vertex(1, Some(0), 0.1, 0.5), vertex(2, Some(0), 0.2, 0.5)],
        };
        // From 1, with 0 taboo, vertex 2 can only be reached through 0.
        let r = oracle_hitting(&snap, Position::At(1), Position::At(2), &[Position::At(0)]);
        assert!(matches!(r, Err(Error::Singular(_))));
    }
}
