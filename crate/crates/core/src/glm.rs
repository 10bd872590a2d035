//! Log-likelihood, score and Fisher information of a canonical GLM, with optional
//! per-row estimation weights. All quantities are averaged over the rows (`1/n`).

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::linalg::weighted_gram;

pub(crate) fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} rows",
                w.len(),
                n
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "estimation weights must be finite and non-negative".into(),
            ));
        }
    }
    Ok(())
}

fn check_beta(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "beta has length {} but the design has {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Linear predictors `X beta`, each checked against the family's admissible range.
pub(crate) fn linear_predictor(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let eta = x * beta;
    for &t in eta.iter() {
        // b'' carries the same range check as b and b'
        family.b_double_prime(t)?;
    }
    Ok(eta)
}

/// `(1/n) sum_i w_i {b(x_i'beta) - y_i x_i'beta}`.
pub(crate) fn nll_raw(
    family: GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<f64> {
    let eta = linear_predictor(family, x, beta)?;
    let mut total = 0.0;
    for (i, (&t, &yi)) in eta.iter().zip(y.iter()).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w != 0.0 {
            total += w * (family.b_value(t)? - yi * t);
        }
    }
    Ok(total / x.nrows() as f64)
}

pub(crate) fn score_raw(
    family: GlmFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<DVector<f64>> {
    let eta = linear_predictor(family, x, beta)?;
    let n = x.nrows();
    let resid = DVector::from_iterator(
        n,
        eta.iter()
            .zip(y.iter())
            .enumerate()
            .map(|(i, (&t, &yi))| weights.map_or(1.0, |w| w[i]) * (family.mean_unchecked(t) - yi)),
    );
    Ok(x.tr_mul(&resid) / n as f64)
}

pub(crate) fn fisher_raw(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    let eta = linear_predictor(family, x, beta)?;
    let w: Vec<f64> = eta
        .iter()
        .enumerate()
        .map(|(i, &t)| weights.map_or(1.0, |w| w[i]) * family.variance_unchecked(t))
        .collect();
    Ok(weighted_gram(x, &w) / x.nrows() as f64)
}

/// Score of the (estimation-weighted) log-likelihood:
/// `(1/n) sum_i w_i {b'(x_i'beta) - y_i} x_i`.
///
/// This is the gradient of [`neg_log_likelihood`]; it vanishes at the MLE.
pub fn score(
    family: GlmFamily,
    data: &Dataset,
    beta: &DVector<f64>,
    estimation_weights: Option<&[f64]>,
) -> Result<DVector<f64>> {
    check_beta(data.x(), beta)?;
    check_weights(estimation_weights, data.n())?;
    let y = data.responses()?;
    score_raw(family, data.x(), y, beta, estimation_weights)
}

/// `(1/n) sum_i w_i b''(x_i'beta) x_i x_i'`. Does not need responses.
pub fn fisher_info(
    family: GlmFamily,
    data: &Dataset,
    beta: &DVector<f64>,
    estimation_weights: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    check_beta(data.x(), beta)?;
    check_weights(estimation_weights, data.n())?;
    fisher_raw(family, data.x(), beta, estimation_weights)
}

pub fn neg_log_likelihood(
    family: GlmFamily,
    data: &Dataset,
    beta: &DVector<f64>,
    estimation_weights: Option<&[f64]>,
) -> Result<f64> {
    check_beta(data.x(), beta)?;
    check_weights(estimation_weights, data.n())?;
    let y = data.responses()?;
    nll_raw(family, data.x(), y, beta, estimation_weights)
}
