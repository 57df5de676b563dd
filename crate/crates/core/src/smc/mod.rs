//! Bayesian estimation of the timing weights and innovation scales for a
//! known network, with marginal-likelihood model comparison.

pub mod likelihood;
pub mod prior;
pub mod sampler;
pub mod select;

pub use likelihood::{required_presample, LikelihoodEvaluator};
pub use prior::{
    log_prior, mm_sigma_proposal, sample_simplex_prior, simplex_from_uniforms, ThetaParam,
};
pub use sampler::{hpd_interval, mutate_particle, run_smc, ModelScore, ParticleCloud, SmcConfig, SmcResult};
pub use select::{default_grid, model_select, Criterion, GridPoint, Selection};
