//! Sensitivity bounds for average treatment effects under the marginal
//! sensitivity model.
//!
//! Nuisance models (propensity score, outcome quantiles, outcome means) are
//! fitted with Lasso penalties either by calibrated losses or by likelihood and
//! unweighted losses, and plugged into doubly robust estimating functions.
//! [`methods::registry`] exposes the estimation strategies by name.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod bounds;
pub mod error;
pub mod lp;
pub mod methods;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod simulation;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{
    BoundSide, CoefficientVector, Design, FittedNuisance, NuisanceMethod, ObservedData,
    OutcomeFamily, SensitivityLevel,
};
