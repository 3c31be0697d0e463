//! Refined variational inference: guides, the refined ELBO under four
//! entropy approximations, and the joint optimization of guide parameters
//! and sampler step size.

mod adam;
mod analysis;
mod elbo;
mod fit;
mod guide;
mod params;

pub use adam::Adam;
pub use analysis::{fast_refined_gradient, line_search_step, taylor_gradient_probe, TighterStep};
pub use elbo::{
    elbo_standard, elbo_vis_fp, elbo_vis_g, elbo_vis_mc, elbo_vis_p, refined_elbo,
    transition_log_density, validate, Draws, ElboEstimate, EntropyMode, Refinement,
};
pub use fit::{
    fit, fit_refined, objective_gradient, Evaluation, FitSettings, GuideInit, Objective, ObjectiveGradient,
    TrainReport, VariationalProblem, ETA_MAX, ETA_MIN,
};
pub use guide::{Guide, GuideDraw};
pub use params::{Bound, Param, ParamStore};
