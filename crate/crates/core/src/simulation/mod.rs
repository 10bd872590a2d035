//! Synthetic designs, experiment runner, metrics and asymptotic checks.

pub mod asymptotic;
pub mod designs;
pub mod experiment;
pub mod metrics;

pub use asymptotic::{
    asymptotic_matrices_from_points, loewner_leq, monte_carlo_matrices, theoretical_variances,
    weighted_variance_identity_check, AsymptoticMatrices, EfficiencyTerms,
};
pub use designs::{generate_design, generate_response, DesignKind, DesignSpec};
pub use experiment::{
    run_experiment, CellReport, DataSource, DroppedCell, ExperimentConfig, ExperimentReport,
    RepFailure, SamplingMode,
};
pub use metrics::{empirical_variance, emse, relative_efficiency, sample_covariance, trimmed_mean};
