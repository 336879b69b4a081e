//! Random environments: calibrated laws, the lazily grown marked tree, the
//! derivative martingale and tree snapshots.

pub mod law;
pub mod martingale;
pub mod snapshot;
pub mod tree;

pub use law::{calibrate_law, DisplacementLaw, FamilyId, LawDocument};
pub use martingale::{derivative_martingale, derivative_martingale_pruned, PrunedMartingale};
pub use snapshot::TreeSnapshot;
pub use tree::{MarkedTree, VertexId, VertexRecord, NO_PARENT, ROOT};
