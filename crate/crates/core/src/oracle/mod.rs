//! Independent checks for the estimators: the primal linear program behind the
//! sample bounds and Monte Carlo population bounds for the simulation designs.

mod population;
mod primal;

pub use population::{
    bound_integrand, expected_check_loss, population_bound_oracle, population_integrand, population_quantile_coef,
    sharp_bounds_streaming, sharp_integrand, McEstimate, PopulationSample, QuantileChoice, QuantileWeighting, MIN_RECOMMENDED_DRAWS,
};
pub use primal::{dual_bound_value, solve_primal_bound, PrimalBoundProblem, PrimalBoundSolution};
