//! Simulation designs and the replication engine for coverage studies.

mod dgp;
mod replicate;

pub use dgp::{dagger, draw_covariates, generate, standard_normal, stream, Configuration, DgpSpec, SIGNAL};
pub use replicate::{
    replicate_seed, run_replications, true_sharp_bounds, CoverageRow, CoverageTarget, FailureRecord, PointSummary, ReplicateRecord,
    ReplicationOptions, ReplicationReport, SharpBounds,
};
