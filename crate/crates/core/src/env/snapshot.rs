//! Line-oriented tree snapshots, used to hand a realized environment to the
//! hitting-probability oracle without going through [`MarkedTree`].
//!
//! ```text
//! # favsite-tree-snapshot v1
//! # id parent depth V U Lambda w_parent
//! 0 - 0 0.0000000000000000e0 -1.2e0 2.3e0 3.0e-1
//! 1 0 1 ...
//! ```
//! Unexpanded vertices carry `nan` in the `U`, `Lambda` and `w_parent` columns.

use std::fmt::Write as _;

use crate::env::tree::{MarkedTree, VertexId, NO_PARENT};
use crate::error::{Error, Result};
use crate::fmt17;

pub const SNAPSHOT_HEADER: &str = "# favsite-tree-snapshot v1";

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotVertex {
    pub id: VertexId,
    pub parent: Option<VertexId>,
    pub depth: u32,
    pub v: f64,
    pub u: f64,
    pub lambda: f64,
    pub w_parent: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TreeSnapshot {
    pub vertices: Vec<SnapshotVertex>,
}

impl TreeSnapshot {
    /// Every vertex currently in the arena.
    pub fn from_tree(tree: &MarkedTree) -> Self {
        Self::from_ids(tree, 0..tree.len() as VertexId)
    }

    /// A subset of vertices; callers make sure it is closed under parents.
    pub fn from_ids(tree: &MarkedTree, ids: impl IntoIterator<Item = VertexId>) -> Self {
        let vertices = ids
            .into_iter()
            .map(|id| {
                let r = tree.get(id);
                SnapshotVertex {
                    id,
                    parent: (r.parent != NO_PARENT).then_some(r.parent),
                    depth: r.depth,
                    v: r.v,
                    u: r.u,
                    lambda: r.lambda,
                    w_parent: r.w_parent,
                }
            })
            .collect();
        TreeSnapshot { vertices }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(SNAPSHOT_HEADER);
        s.push('\n');
        s.push_str("# id parent depth V U Lambda w_parent\n");
        for v in &self.vertices {
            let parent = v.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {}",
                v.id,
                parent,
                v.depth,
                fmt17(v.v),
                fmt17(v.u),
                fmt17(v.lambda),
                fmt17(v.w_parent)
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == SNAPSHOT_HEADER => {}
            _ => return Err(Error::Parse { line: 1, msg: format!("expected `{SNAPSHOT_HEADER}`") }),
        }
        let mut vertices = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<u32>().map_err(|e| err(format!("`{s}`: {e}")));
            let real = |s: &str| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}")));
            vertices.push(SnapshotVertex {
                id: int(f[0])?,
                parent: if f[1] == "-" { None } else { Some(int(f[1])?) },
                depth: int(f[2])?,
                v: real(f[3])?,
                u: real(f[4])?,
                lambda: real(f[5])?,
                w_parent: real(f[6])?,
            });
        }
        Ok(TreeSnapshot { vertices })
    }
}
