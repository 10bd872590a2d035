//! Two-stage subsample estimators and the plug-in variance estimator.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::glm::linear_predictor;
use crate::linalg::{min_eigenvalue, spd_inverse, spectral_norm, symmetrize, weighted_gram};
use crate::sampling::{
    draw_pilot, optimal_weights, os_probabilities, sample_with_replacement, Criterion,
    PilotEstimate, PilotMethod, SamplingPlan, SubsampleDraw,
};
use crate::solver::{fit_mle, FitOptions, FitResult};

/// Estimation weights used on the second-stage sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Unit weights.
    Unweighted,
    /// Inverse-probability weights `1 / (n pi_i)`.
    Weighted,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Unweighted => "unweighted",
            Method::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unweighted" | "uw" => Ok(Method::Unweighted),
            "weighted" | "w" => Ok(Method::Weighted),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleConfig {
    pub r_p: usize,
    pub r: usize,
    pub criterion: Criterion,
    pub pilot: PilotMethod,
    /// Draw the second-stage sample from the rows outside the pilot.
    pub exclude_pilot: bool,
    /// Start the second-stage Newton iteration at the pilot estimate instead of zero.
    pub warm_start: bool,
    pub fit: FitOptions,
}

impl SubsampleConfig {
    pub fn new(r_p: usize, r: usize, criterion: Criterion) -> Self {
        SubsampleConfig {
            r_p,
            r,
            criterion,
            pilot: PilotMethod::SimpleRandom,
            exclude_pilot: false,
            warm_start: false,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleEstimate {
    pub beta: DVector<f64>,
    pub method: Method,
    pub m_hat: f64,
    /// Number of rows the plan was normalized over.
    pub population: usize,
    pub draw: SubsampleDraw,
    /// Plug-in variance `V(beta_uw)`; only computed for the unweighted estimator.
    pub variance: Option<DMatrix<f64>>,
    pub fit: FitResult,
    pub pilot_size: usize,
}

impl SubsampleEstimate {
    /// Responses that had to be measured: the pilot plus the distinct second-stage rows.
    pub fn measured_responses(&self) -> usize {
        self.pilot_size + self.draw.distinct()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub v_hat: DMatrix<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub trace_v: f64,
}

/// Steps 1 and 2 of the two-stage procedure: the pilot fit and the plan built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPlan {
    pub pilot: PilotEstimate,
    pub plan: SamplingPlan,
}

/// Draws the pilot and computes the sampling plan. Only pilot responses are read.
pub fn prepare_plan<R: Rng + ?Sized>(
    family: GlmFamily,
    data: &Dataset,
    config: &SubsampleConfig,
    rng: &mut R,
) -> Result<PreparedPlan> {
    let pilot = draw_pilot(family, data, config.r_p, config.pilot, &config.fit, rng)?;
    let mut plan = os_probabilities(family, data.x(), &pilot, config.criterion.clone())?;
    if config.exclude_pilot {
        plan = plan.excluding(&pilot.pilot_indices)?;
    }
    Ok(PreparedPlan { pilot, plan })
}

/// Fits `method` on an existing draw.
///
/// Weighted and unweighted estimates built from the same draw differ only in their
/// estimation weights.
pub fn estimate_on_draw(
    family: GlmFamily,
    data: &Dataset,
    plan: &SamplingPlan,
    draw: &SubsampleDraw,
    method: Method,
    options: &FitOptions,
    pilot_size: usize,
) -> Result<SubsampleEstimate> {
    let sub = data.subset(&draw.indices);
    data.responses_at(&draw.indices)?;
    let weights: Option<Vec<f64>> = match method {
        Method::Unweighted => None,
        Method::Weighted => {
            let n = plan.population as f64;
            Some(
                draw.probabilities_at_draw
                    .iter()
                    .map(|&p| 1.0 / (n * p))
                    .collect(),
            )
        }
    };
    let fit = fit_mle(family, &sub, weights.as_deref(), options)?.require_converged()?;
    let mut est = SubsampleEstimate {
        beta: fit.beta.clone(),
        method,
        m_hat: plan.m_hat,
        population: plan.population,
        draw: draw.clone(),
        variance: None,
        fit,
        pilot_size,
    };
    if method == Method::Unweighted {
        est.variance = Some(variance_estimate(family, data, &est)?.v_hat);
    }
    Ok(est)
}

fn run_two_stage<R: Rng + ?Sized>(
    family: GlmFamily,
    data: &Dataset,
    config: &SubsampleConfig,
    method: Method,
    rng: &mut R,
) -> Result<SubsampleEstimate> {
    let prepared = prepare_plan(family, data, config, rng)?;
    let draw = sample_with_replacement(&prepared.plan, config.r, rng)?;
    let mut options = config.fit.clone();
    if config.warm_start {
        options.init = Some(prepared.pilot.beta_p.clone());
    }
    estimate_on_draw(
        family,
        data,
        &prepared.plan,
        &draw,
        method,
        &options,
        prepared.pilot.r_p,
    )
}

/// Pilot, optimal plan, with-replacement draw, then an unweighted MLE on the draw.
pub fn unweighted_estimate<R: Rng + ?Sized>(
    family: GlmFamily,
    data: &Dataset,
    config: &SubsampleConfig,
    rng: &mut R,
) -> Result<SubsampleEstimate> {
    run_two_stage(family, data, config, Method::Unweighted, rng)
}

/// Same pipeline as [`unweighted_estimate`] with inverse-probability estimation weights.
pub fn weighted_estimate<R: Rng + ?Sized>(
    family: GlmFamily,
    data: &Dataset,
    config: &SubsampleConfig,
    rng: &mut R,
) -> Result<SubsampleEstimate> {
    run_two_stage(family, data, config, Method::Weighted, rng)
}

fn is_numerically_singular(a: &DMatrix<f64>) -> bool {
    let top = spectral_norm(a);
    top == 0.0 || min_eigenvalue(a) <= top * 1e-12
}

/// Pilot-free plan for the linear model, built from the full Gram matrix:
/// `pi_i ∝ ||(sum_j x_j x_j')^{-1} x_i||` (A-OS) or `pi_i ∝ ||x_i||` (L-OS).
///
/// The weights are scaled as `||L Phi^{-1} x_i||` with `Phi = (1/n) X'X`, so `m_hat`
/// lives on the same scale as the GLM plans.
pub fn linear_plan(x: &DMatrix<f64>, criterion: Criterion) -> Result<SamplingPlan> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("covariates"));
    }
    let phi = symmetrize(x.tr_mul(x)) / n as f64;
    if !matches!(criterion, Criterion::LOpt) && is_numerically_singular(&phi) {
        return Err(Error::SingularGram);
    }
    let beta = DVector::zeros(x.ncols());
    let w = optimal_weights(GlmFamily::Linear, x, &beta, &phi, &criterion)?;
    SamplingPlan::from_weights(&w, criterion)
}

/// The linear-model shortcut: no pilot, the plan comes from [`linear_plan`] and the
/// subsample is solved by exact least squares.
pub fn linear_unweighted_estimate<R: Rng + ?Sized>(
    data: &Dataset,
    r: usize,
    criterion: Criterion,
    rng: &mut R,
) -> Result<SubsampleEstimate> {
    let plan = linear_plan(data.x(), criterion)?;
    let draw = sample_with_replacement(&plan, r, rng)?;
    estimate_on_draw(
        GlmFamily::Linear,
        data,
        &plan,
        &draw,
        Method::Unweighted,
        &FitOptions::default(),
        0,
    )
}

/// Plug-in estimate of the variance of the unweighted estimator from the drawn rows:
///
/// ```text
/// Gamma = (m/r) sum b''(x*'b) x* x*'
/// Omega = (n m^2 / r) sum pi* b''(x*'b) x* x*'
/// V     = (m/r) Gamma^{-1} + (1/n) Gamma^{-1} Omega Gamma^{-1}
/// ```
///
/// For the linear family this is the variance under unit error variance.
pub fn variance_estimate(
    family: GlmFamily,
    data: &Dataset,
    estimate: &SubsampleEstimate,
) -> Result<VarianceEstimate> {
    let draw = &estimate.draw;
    let r = draw.len();
    if r == 0 {
        return Err(Error::EmptyInput("subsample draw"));
    }
    let p = data.p();
    let n = estimate.population as f64;
    let m = estimate.m_hat;
    let xs = data.rows(&draw.indices);
    let eta = linear_predictor(family, &xs, &estimate.beta)?;
    let v: Vec<f64> = eta.iter().map(|&t| family.variance_unchecked(t)).collect();
    let gamma_hat = weighted_gram(&xs, &v) * (m / r as f64);

    let vp: Vec<f64> = v
        .iter()
        .zip(&draw.probabilities_at_draw)
        .map(|(b2, pi)| b2 * pi)
        .collect();
    let omega_hat = weighted_gram(&xs, &vp) * (n * m * m / r as f64);

    if is_numerically_singular(&gamma_hat) {
        return Err(Error::SingularGammaHat { p });
    }
    let gi = spd_inverse(&gamma_hat, crate::linalg::DEFAULT_JITTER)
        .ok_or(Error::SingularGammaHat { p })?;
    let v_hat = symmetrize(&gi * (m / r as f64) + &gi * &omega_hat * &gi / n);
    let trace_v = v_hat.trace();
    Ok(VarianceEstimate {
        v_hat,
        gamma_hat,
        omega_hat,
        trace_v,
    })
}

/// Full-data MLE with estimation weights `n m_hat pi_i` (the plan's unnormalized
/// weights). Needs every response; a diagnostic target for the unweighted estimator.
pub fn full_data_weighted_mle(
    family: GlmFamily,
    data: &Dataset,
    plan: &SamplingPlan,
    options: &FitOptions,
) -> Result<DVector<f64>> {
    if plan.n() != data.n() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} rows, data has {}",
            plan.n(),
            data.n()
        )));
    }
    let w = plan.unnormalized_weights();
    Ok(fit_mle(family, data, Some(w.as_slice()), options)?
        .require_converged()?
        .beta)
}
