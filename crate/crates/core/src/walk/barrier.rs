//! The barrier line `L_n^{(γ)}`: first vertices along each ray where
//! `Σ_{z ∈ ]∅, x]} e^{V(z) - V(x)}` exceeds `n / (log n)^γ`.

use crate::env::{MarkedTree, VertexId, ROOT};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierConfig {
    pub gamma: f64,
    pub horizon: u64,
}

impl BarrierConfig {
    pub fn new(gamma: f64, horizon: u64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::domain("barrier horizon must be at least 2"));
        }
        if !gamma.is_finite() {
            return Err(Error::domain("barrier gamma must be finite"));
        }
        Ok(BarrierConfig { gamma, horizon })
    }

    /// `n / (log n)^γ`.
    pub fn threshold(&self) -> f64 {
        log_barrier_threshold(self.horizon, self.gamma).exp()
    }
}

/// `log(n / (log n)^γ)`.
pub fn log_barrier_threshold(n: u64, gamma: f64) -> f64 {
    let ln = (n as f64).ln();
    ln - gamma * ln.ln()
}

/// `Σ_{z ∈ ]∅, x]} e^{V(z) - V(x)}`; zero at the root.
pub fn barrier_ratio(tree: &MarkedTree, x: VertexId) -> f64 {
    let r = tree.get(x);
    if x == ROOT {
        return 0.0;
    }
    (r.log_cum_exp_v - r.v).exp()
}

#[inline]
fn log_ratio(tree: &MarkedTree, x: VertexId) -> f64 {
    let r = tree.get(x);
    r.log_cum_exp_v - r.v
}

pub fn barrier_crossed(tree: &MarkedTree, x: VertexId, cfg: &BarrierConfig) -> bool {
    x != ROOT && log_ratio(tree, x) > log_barrier_threshold(cfg.horizon, cfg.gamma)
}

/// Records the first time the walk stands on a crossing vertex. A walk
/// cannot reach a crossing vertex without first passing the first crossing on
/// its ray, so this is also the first hitting time of `L_n^{(γ)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierTracker {
    pub cfg: BarrierConfig,
    log_threshold: f64,
    pub first_hit: Option<(u64, VertexId)>,
}

impl BarrierTracker {
    pub fn new(cfg: BarrierConfig) -> Self {
        BarrierTracker { cfg, log_threshold: log_barrier_threshold(cfg.horizon, cfg.gamma), first_hit: None }
    }

    pub fn clear(&mut self) {
        self.first_hit = None;
    }

    #[inline]
    pub(crate) fn observe(&mut self, tree: &MarkedTree, x: VertexId, time: u64) {
        if self.first_hit.is_none() && x != ROOT && log_ratio(tree, x) > self.log_threshold {
            self.first_hit = Some((time, x));
        }
    }

    pub fn hit_by(&self, n: u64) -> bool {
        self.first_hit.is_some_and(|(t, _)| t <= n)
    }
}
