//! Two-stage optimal subsampling for generalized linear models when responses are
//! expensive to measure.
//!
//! A small pilot subsample gives a first estimate; the pilot fit defines sampling
//! probabilities over the full covariate set; a second subsample is drawn with
//! replacement from those probabilities and only its responses are read. The
//! coefficients are then estimated from the second subsample either without weights
//! (the default here) or with inverse-probability weights.
//!
//! ```
//! use nalgebra::DVector;
//! use optsub::simulation::{generate_design, generate_response, DesignKind, DesignSpec};
//! use optsub::{unweighted_estimate, Criterion, Dataset, GlmFamily, Intercept, SubsampleConfig};
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let spec = DesignSpec::new(DesignKind::MzNormal, 3).unwrap();
//! let x = generate_design(&spec, 5_000, &mut rng);
//! let beta0 = DVector::from_element(3, 0.5);
//! let y = generate_response(GlmFamily::Logistic, &x, &beta0, &mut rng, 1.0).unwrap();
//! let data = Dataset::new(x, Some(y), Intercept::None).unwrap();
//!
//! let config = SubsampleConfig::new(300, 500, Criterion::AOpt);
//! let est = unweighted_estimate(GlmFamily::Logistic, &data, &config, &mut rng).unwrap();
//! assert!((est.beta - beta0).norm() < 0.5);
//! ```

pub mod alias;
pub mod data;
pub mod error;
pub mod estimators;
pub mod family;
pub mod glm;
mod linalg;
pub mod sampling;
pub mod simulation;
pub mod solver;

pub use data::{Dataset, Intercept};
pub use error::{Error, Result};
pub use estimators::{
    estimate_on_draw, full_data_weighted_mle, linear_plan, linear_unweighted_estimate,
    prepare_plan, unweighted_estimate, variance_estimate, weighted_estimate, Method, PreparedPlan,
    SubsampleConfig, SubsampleEstimate, VarianceEstimate,
};
pub use family::GlmFamily;
pub use glm::{fisher_info, neg_log_likelihood, score};
pub use linalg::{min_eigenvalue, spectral_norm};
pub use sampling::{
    case_control_pilot_probabilities, draw_pilot, draw_pilot_with_redraws, optimal_weights,
    os_probabilities, pilot_estimate, sample_with_replacement, simple_random_pilot, Criterion,
    PilotEstimate, PilotMethod, SamplingPlan, SubsampleDraw,
};
pub use solver::{average_iterations, fit_mle, FitOptions, FitResult};
