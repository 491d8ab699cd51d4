//! Sequential estimation of the nuisance models with cross-validated penalties.

mod fit;
mod tuning;

pub use fit::*;
pub use tuning::{cross_validate, CvResult, FoldPartition, StageLoss, TuningGrid, WarmStart};
