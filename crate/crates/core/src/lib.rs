//! Simulation and numerical verification toolkit for randomly biased random
//! walks on supercritical Galton–Watson trees in the boundary case.
//!
//! * [`env`] builds calibrated environments and lazily expands them.
//! * [`walk`] runs the quenched walk with local times and favorite sets.
//! * [`excursion`] holds the exact excursion formulas and the fast sampler.
//! * [`spine`] covers the tilted one-dimensional walk and many-to-one checks.
//! * [`analysis`] assembles the headline diagnostics.

pub mod analysis;
pub mod env;
pub mod error;
pub mod excursion;
pub mod io;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};

/// Seventeen significant digits, enough for an exact `f64` round trip.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}
