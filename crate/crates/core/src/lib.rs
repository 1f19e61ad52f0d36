//! Pseudo minimum phi-divergence estimation of multinomial logistic
//! regression under complex survey designs.

pub mod divergence;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod samplers;
pub mod sim;

pub use divergence::{divergence, divergence_with, phi, phi_double_prime, phi_prime, CressieRead, PhiFunction};
pub use error::{Error, Result};
pub use estimation::{
    fit, fit_path, score_cressie_read, score_general, score_general_with, FitResult, SolverOptions,
};
pub use inference::{
    design_effect, information_matrix, rho2_binder, rho2_moments, sandwich_covariance, variability_matrix,
    BinderCentering, OverdispersionEstimate,
};
pub use model::{
    empirical_vector, link_probabilities, theoretical_vector, ClusterRecord, Coefficients, ProbabilityVector,
    Stratum, SurveyDataset,
};
pub use samplers::{sample, Family, OverdispersionSpec};
pub use sim::{emit_results, run_scenario, RmseRecord, ScenarioConfig};
