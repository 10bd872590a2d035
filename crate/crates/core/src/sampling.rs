//! Pilot estimation and optimal subsampling probabilities.
//!
//! Every probability in the class computed here has the form
//!
//! ```text
//! pi_i = w_i / sum_j w_j,   w_i = sqrt(b''(x_i' beta)) * || L Phi^{-1} x_i ||
//! ```
//!
//! with `L = I` (A-optimality), `L = Phi` (L-optimality, no inverse needed) or a
//! user-supplied `L`. The unnormalized weights depend on covariates only, so a plan can
//! be computed before any response outside the pilot is measured.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::alias::AliasTable;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::glm::{fisher_raw, linear_predictor};
use crate::linalg::{cholesky_with_jitter, row_norms, spd_inverse, symmetrize};
use crate::solver::{fit_mle, FitOptions};

#[derive(Debug, Clone, PartialEq)]
pub enum Criterion {
    /// `L = I`: minimizes the trace of the asymptotic variance.
    AOpt,
    /// `L = Phi`: avoids the matrix inverse, O(np) per plan.
    LOpt,
    GeneralL(DMatrix<f64>),
}

impl Criterion {
    pub fn label(&self) -> &'static str {
        match self {
            Criterion::AOpt => "A-OS",
            Criterion::LOpt => "L-OS",
            Criterion::GeneralL(_) => "general-L",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a-os" | "aopt" | "a" | "a-opt" => Ok(Criterion::AOpt),
            "l-os" | "lopt" | "l" | "l-opt" => Ok(Criterion::LOpt),
            other => Err(Error::InvalidArgument(format!(
                "unknown criterion `{other}`"
            ))),
        }
    }
}

/// How the pilot rows are selected.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PilotMethod {
    /// Simple random sampling without replacement.
    #[default]
    SimpleRandom,
    /// Response-balanced sampling with replacement (binary responses only). `p_m` is the
    /// prior `Pr(y = 1)`; the empirical fraction of ones is used when absent.
    CaseControl { p_m: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimate {
    pub beta_p: DVector<f64>,
    /// Pilot information matrix, already jittered to positive-definite if that was needed.
    pub phi_p: DMatrix<f64>,
    pub pilot_indices: Vec<usize>,
    pub r_p: usize,
    /// Newton iterations spent on the pilot fit.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub probabilities: DVector<f64>,
    pub criterion: Criterion,
    /// Mean of the unnormalized weights over the eligible rows.
    pub m_hat: f64,
    /// Number of eligible rows (rows not excluded from the plan).
    pub population: usize,
}

impl SamplingPlan {
    /// Normalizes unnormalized weights into a plan.
    pub fn from_weights(weights: &DVector<f64>, criterion: Criterion) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("sampling weights"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "sampling weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        let n = weights.len();
        Ok(SamplingPlan {
            probabilities: weights / total,
            criterion,
            m_hat: total / n as f64,
            population: n,
        })
    }

    /// Uniform probabilities `1/n`; `m_hat = 1`.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&DVector::from_element(n, 1.0), Criterion::LOpt)
    }

    pub fn n(&self) -> usize {
        self.probabilities.len()
    }

    /// Unnormalized weights recovered as `population * m_hat * pi_i`.
    pub fn unnormalized_weights(&self) -> DVector<f64> {
        &self.probabilities * (self.population as f64 * self.m_hat)
    }

    /// Removes `rows` from the plan and renormalizes over the rest.
    ///
    /// Used to draw the second-stage sample from the rows not in the pilot.
    pub fn excluding(&self, rows: &[usize]) -> Result<Self> {
        let mut w = self.unnormalized_weights();
        let mut excluded = vec![false; w.len()];
        for &i in rows {
            if i >= w.len() {
                return Err(Error::InvalidArgument(format!("row {i} out of range")));
            }
            excluded[i] = true;
            w[i] = 0.0;
        }
        let population = excluded.iter().filter(|e| !**e).count();
        let total = w.sum();
        if population == 0 || total <= 0.0 {
            return Err(Error::ZeroWeights);
        }
        Ok(SamplingPlan {
            probabilities: &w / total,
            criterion: self.criterion.clone(),
            m_hat: total / population as f64,
            population,
        })
    }
}

/// A with-replacement subsample: drawn rows and their sampling probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleDraw {
    pub indices: Vec<usize>,
    pub probabilities_at_draw: Vec<f64>,
}

impl SubsampleDraw {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn distinct(&self) -> usize {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v.dedup();
        v.len()
    }
}

/// `r_p` distinct row indices drawn uniformly without replacement.
pub fn simple_random_pilot<R: Rng + ?Sized>(
    n: usize,
    r_p: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if r_p > n {
        return Err(Error::PilotTooLarge { r_p, n });
    }
    if r_p == 0 {
        return Err(Error::InvalidArgument(
            "pilot size must be at least 1".into(),
        ));
    }
    Ok(rand::seq::index::sample(rng, n, r_p).into_vec())
}

/// Case-control pilot probabilities `{c0 (1 - y_i) + c1 y_i} / n` with
/// `c0 = 1 / {2 (1 - p_m)}` and `c1 = 1 / (2 p_m)`, renormalized to sum to one.
pub fn case_control_pilot_probabilities(y: &[f64], p_m: f64) -> Result<DVector<f64>> {
    if !(p_m > 0.0 && p_m < 1.0) {
        return Err(Error::DegenerateMarginal(p_m));
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("responses"));
    }
    let n = y.len() as f64;
    let c0 = 1.0 / (2.0 * (1.0 - p_m));
    let c1 = 1.0 / (2.0 * p_m);
    let mut raw = DVector::zeros(y.len());
    for (i, &yi) in y.iter().enumerate() {
        if !GlmFamily::Logistic.validate_response(yi) {
            return Err(Error::InvalidResponse {
                family: "logistic",
                row: i,
                value: yi,
            });
        }
        raw[i] = (c0 * (1.0 - yi) + c1 * yi) / n;
    }
    let total = raw.sum();
    Ok(raw / total)
}

/// Unweighted MLE on the pilot rows and the pilot information matrix
/// `(1/r_p) sum b''(x_i' beta_p) x_i x_i'`.
pub fn pilot_estimate(
    family: GlmFamily,
    data: &Dataset,
    pilot_indices: &[usize],
    options: &FitOptions,
) -> Result<PilotEstimate> {
    pilot_estimate_weighted(family, data, pilot_indices, None, options)
}

/// Like [`pilot_estimate`] but with estimation weights on the pilot rows (used to undo
/// the response-dependent selection of a case-control pilot).
pub fn pilot_estimate_weighted(
    family: GlmFamily,
    data: &Dataset,
    pilot_indices: &[usize],
    weights: Option<&[f64]>,
    options: &FitOptions,
) -> Result<PilotEstimate> {
    if pilot_indices.is_empty() {
        return Err(Error::EmptyInput("pilot indices"));
    }
    let pilot = data.subset(pilot_indices);
    // surfaces MissingResponses before the solver does
    data.responses_at(pilot_indices)?;
    let fit = fit_mle(family, &pilot, weights, options)?.require_converged()?;
    let normalized: Option<Vec<f64>> = weights.map(|w| {
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        w.iter().map(|v| v / mean).collect()
    });
    let phi = fisher_raw(family, pilot.x(), &fit.beta, normalized.as_deref())?;
    let phi_p = match nalgebra::Cholesky::new(phi.clone()) {
        Some(_) => phi,
        None => {
            let c = cholesky_with_jitter(&phi, options.ridge_jitter).ok_or(Error::PilotSingular)?;
            symmetrize(c.l() * c.l().transpose())
        }
    };
    Ok(PilotEstimate {
        beta_p: fit.beta,
        phi_p,
        pilot_indices: pilot_indices.to_vec(),
        r_p: pilot_indices.len(),
        iterations: fit.iterations,
    })
}

/// Draws pilot rows with `method` and fits the pilot estimate.
pub fn draw_pilot<R: Rng + ?Sized>(
    family: GlmFamily,
    data: &Dataset,
    r_p: usize,
    method: PilotMethod,
    options: &FitOptions,
    rng: &mut R,
) -> Result<PilotEstimate> {
    match method {
        PilotMethod::SimpleRandom => {
            let idx = simple_random_pilot(data.n(), r_p, rng)?;
            pilot_estimate(family, data, &idx, options)
        }
        PilotMethod::CaseControl { p_m } => {
            if family != GlmFamily::Logistic {
                return Err(Error::InvalidArgument(
                    "case-control pilots need binary responses (logistic family)".into(),
                ));
            }
            if r_p == 0 {
                return Err(Error::InvalidArgument(
                    "pilot size must be at least 1".into(),
                ));
            }
            let y = data.responses()?;
            let p_m = p_m.unwrap_or_else(|| y.mean());
            let pi0 = case_control_pilot_probabilities(y.as_slice(), p_m)?;
            let table = AliasTable::new(pi0.as_slice())?;
            let n = data.n() as f64;
            let idx: Vec<usize> = (0..r_p).map(|_| table.sample(rng)).collect();
            let w: Vec<f64> = idx.iter().map(|&i| 1.0 / (n * pi0[i])).collect();
            pilot_estimate_weighted(family, data, &idx, Some(&w), options)
        }
    }
}

/// [`draw_pilot`], drawing a fresh pilot (up to `max_redraws` more times) when the
/// pilot fit has no usable solution: a separated or rank-deficient pilot sample.
/// Returns the estimate and the number of redraws spent.
pub fn draw_pilot_with_redraws<R: Rng + ?Sized>(
    family: GlmFamily,
    data: &Dataset,
    r_p: usize,
    method: PilotMethod,
    options: &FitOptions,
    max_redraws: usize,
    rng: &mut R,
) -> Result<(PilotEstimate, usize)> {
    let mut redraws = 0;
    loop {
        match draw_pilot(family, data, r_p, method, options, rng) {
            Ok(p) => return Ok((p, redraws)),
            Err(
                e @ (Error::SeparationSuspected { .. }
                | Error::PilotSingular
                | Error::SingularHessian
                | Error::NotConverged { .. }),
            ) => {
                if redraws == max_redraws {
                    return Err(e);
                }
                redraws += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// The unnormalized weights `sqrt(b''(x_i' beta)) ||L Phi^{-1} x_i||` for every row of `x`.
pub fn optimal_weights(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    phi: &DMatrix<f64>,
    criterion: &Criterion,
) -> Result<DVector<f64>> {
    let p = x.ncols();
    if beta.len() != p || phi.nrows() != p || phi.ncols() != p {
        return Err(Error::ShapeMismatch(format!(
            "design has {p} columns, beta {} entries, Phi {}x{}",
            beta.len(),
            phi.nrows(),
            phi.ncols()
        )));
    }
    let norms = match criterion {
        Criterion::LOpt => row_norms(x),
        Criterion::AOpt => {
            let inv = spd_inverse(phi, crate::linalg::DEFAULT_JITTER).ok_or(Error::SingularPhi)?;
            row_norms(&(x * inv))
        }
        Criterion::GeneralL(l) => {
            if l.ncols() != p {
                return Err(Error::ShapeMismatch(format!(
                    "L has {} columns, expected {p}",
                    l.ncols()
                )));
            }
            let inv = spd_inverse(phi, crate::linalg::DEFAULT_JITTER).ok_or(Error::SingularPhi)?;
            // rows of X (L Phi^{-1})' = X Phi^{-1} L'
            row_norms(&(x * inv * l.transpose()))
        }
    };
    let eta = linear_predictor(family, x, beta)?;
    Ok(DVector::from_iterator(
        x.nrows(),
        eta.iter()
            .zip(norms.iter())
            .map(|(&t, &nrm)| family.variance_unchecked(t).sqrt() * nrm),
    ))
}

/// Optimal subsampling probabilities evaluated at the pilot estimates.
///
/// Only covariates are passed in: the plan cannot depend on unmeasured responses.
pub fn os_probabilities(
    family: GlmFamily,
    covariates: &DMatrix<f64>,
    pilot: &PilotEstimate,
    criterion: Criterion,
) -> Result<SamplingPlan> {
    let w = optimal_weights(family, covariates, &pilot.beta_p, &pilot.phi_p, &criterion)?;
    SamplingPlan::from_weights(&w, criterion)
}

/// `r` i.i.d. categorical draws from the plan (alias method).
pub fn sample_with_replacement<R: Rng + ?Sized>(
    plan: &SamplingPlan,
    r: usize,
    rng: &mut R,
) -> Result<SubsampleDraw> {
    if r == 0 {
        return Err(Error::InvalidArgument(
            "subsample size must be at least 1".into(),
        ));
    }
    let table = AliasTable::new(plan.probabilities.as_slice())?;
    let indices: Vec<usize> = (0..r).map(|_| table.sample(rng)).collect();
    let probabilities_at_draw = indices.iter().map(|&i| plan.probabilities[i]).collect();
    Ok(SubsampleDraw {
        indices,
        probabilities_at_draw,
    })
}
