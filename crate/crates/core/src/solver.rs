//! Newton's method for the (optionally estimation-weighted) GLM log-likelihood.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::glm::{check_weights, fisher_raw, nll_raw, score_raw};
use crate::linalg::cholesky_with_jitter;

const MAX_HALVINGS: usize = 30;
const SEPARATION_NORM: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Stop once the score norm drops below this.
    pub tol_grad: f64,
    /// Stop once `|step| / max(|beta|, 1)` drops below this.
    pub tol_step: f64,
    pub max_iter: usize,
    /// Relative ridge (times `trace/p`) added once when the Hessian factorization fails.
    pub ridge_jitter: f64,
    /// Starting point; zero when absent.
    pub init: Option<DVector<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol_grad: 1e-8,
            tol_step: 1e-10,
            max_iter: 100,
            ridge_jitter: 1e-8,
            init: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_grad > 0.0) || !(self.tol_step >= 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(
                "fit options need tol_grad > 0, tol_step >= 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// Number of Newton solves performed.
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub wall_time: Duration,
}

impl FitResult {
    /// Turns a non-converged fit into [`Error::NotConverged`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
            })
        }
    }
}

/// Maximizes `(1/n) sum_i w_i {y_i x_i'beta - b(x_i'beta)}` over `beta`.
///
/// Weights are rescaled to mean one before fitting, which leaves the maximizer
/// unchanged and makes the stopping rule independent of their overall scale. The linear
/// family is solved in one step by weighted least squares (QR). Other families use
/// Newton steps with step halving. A fit that exhausts `max_iter` is returned with
/// `converged = false` rather than as an error.
pub fn fit_mle(
    family: GlmFamily,
    data: &Dataset,
    estimation_weights: Option<&[f64]>,
    options: &FitOptions,
) -> Result<FitResult> {
    let start = Instant::now();
    options.validate()?;
    let (n, p) = (data.n(), data.p());
    if n < p || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least as many rows as coefficients (n = {n}, p = {p})"
        )));
    }
    check_weights(estimation_weights, n)?;
    let y = data.responses()?;
    let weights = match estimation_weights {
        None => None,
        Some(w) => {
            let mean = w.iter().sum::<f64>() / n as f64;
            if mean <= 0.0 {
                return Err(Error::InvalidArgument(
                    "estimation weights are all zero".into(),
                ));
            }
            Some(w.iter().map(|v| v / mean).collect::<Vec<f64>>())
        }
    };
    let w = weights.as_deref();
    let x = data.x();

    if family == GlmFamily::Linear {
        let beta = weighted_least_squares(x, y, w)?;
        let g = score_raw(family, x, y, &beta, w)?;
        return Ok(FitResult {
            beta,
            iterations: 1,
            converged: true,
            final_grad_norm: g.norm(),
            wall_time: start.elapsed(),
        });
    }

    if family == GlmFamily::Logistic {
        let mut classes = y
            .iter()
            .enumerate()
            .filter(|(i, _)| w.is_none_or(|w| w[*i] > 0.0))
            .map(|(_, &v)| v);
        if let Some(first) = classes.next() {
            if classes.all(|v| v == first) {
                return Err(Error::SeparationSuspected {
                    beta_norm: f64::INFINITY,
                });
            }
        }
    }

    let mut beta = match &options.init {
        Some(b) if b.len() == p => b.clone(),
        Some(b) => {
            return Err(Error::ShapeMismatch(format!(
                "initial beta has length {} but p = {p}",
                b.len()
            )))
        }
        None => DVector::zeros(p),
    };
    let mut f = nll_raw(family, x, y, &beta, w)?;
    let mut g = score_raw(family, x, y, &beta, w)?;
    let mut iterations = 0;
    let mut converged = g.norm() < options.tol_grad;

    while !converged && iterations < options.max_iter {
        let h = fisher_raw(family, x, &beta, w)?;
        let chol = cholesky_with_jitter(&h, options.ridge_jitter).ok_or(Error::SingularHessian)?;
        let step = chol.solve(&g);
        // Once the predicted decrease is below what the objective can resolve,
        // comparing objective values is noise: take the full step.
        let predicted = 0.5 * g.dot(&step);
        let resolvable = 1e-10 * f.abs().max(1.0);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta - &step * scale;
            match nll_raw(family, x, y, &cand, w) {
                Ok(fc) if fc <= f || predicted < resolvable => {
                    accepted = Some((cand, fc));
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        let Some((cand, fc)) = accepted else {
            // no decrease possible along the Newton direction
            break;
        };
        iterations += 1;
        let rel_step = (&cand - &beta).norm() / cand.norm().max(1.0);
        beta = cand;
        f = fc;
        g = score_raw(family, x, y, &beta, w)?;

        if family == GlmFamily::Logistic && beta.norm() > SEPARATION_NORM {
            return Err(Error::SeparationSuspected {
                beta_norm: beta.norm(),
            });
        }
        converged = g.norm() < options.tol_grad || rel_step < options.tol_step;
    }

    if family == GlmFamily::Logistic && separates(x, y, &beta, w) {
        return Err(Error::SeparationSuspected {
            beta_norm: beta.norm(),
        });
    }

    Ok(FitResult {
        final_grad_norm: g.norm(),
        beta,
        iterations,
        converged,
        wall_time: start.elapsed(),
    })
}

/// True when `beta` puts every observation strictly on its own side, i.e. `beta` is
/// a separating hyperplane. The likelihood then has no finite maximizer, whatever
/// the gradient norm says.
fn separates(
    x: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    w: Option<&[f64]>,
) -> bool {
    let eta = x * beta;
    (0..y.len())
        .filter(|&i| w.is_none_or(|w| w[i] > 0.0))
        .all(|i| {
            if y[i] > 0.5 {
                eta[i] > 0.0
            } else {
                eta[i] < 0.0
            }
        })
}

fn weighted_least_squares(
    x: &nalgebra::DMatrix<f64>,
    y: &DVector<f64>,
    w: Option<&[f64]>,
) -> Result<DVector<f64>> {
    let mut xs = x.clone();
    let mut ys = y.clone();
    if let Some(w) = w {
        for (i, &wi) in w.iter().enumerate() {
            let s = wi.sqrt();
            xs.row_mut(i).scale_mut(s);
            ys[i] *= s;
        }
    }
    let qr = xs.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= scale * 1e-13) {
        return Err(Error::SingularHessian);
    }
    let qty = qr.q().tr_mul(&ys);
    r.solve_upper_triangular(&qty).ok_or(Error::SingularHessian)
}

/// Mean number of Newton iterations over a batch of fits.
pub fn average_iterations(results: &[FitResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput("fit results"));
    }
    Ok(results.iter().map(|r| r.iterations as f64).sum::<f64>() / results.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(x: DMatrix<f64>, y: Vec<f64>) -> Dataset {
        Dataset::from_design(x, Some(DVector::from_vec(y))).unwrap()
    }

    #[test]
    fn linear_matches_normal_equations() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = vec![1.0, 2.5, 2.9, 4.4];
        let d = dataset(x.clone(), y.clone());
        let fit = fit_mle(GlmFamily::Linear, &d, None, &FitOptions::default()).unwrap();
        // closed form: slope = Sxy/Sxx, intercept = ybar - slope*xbar
        let xbar = 1.5;
        let ybar = (1.0 + 2.5 + 2.9 + 4.4) / 4.0;
        let sxy: f64 = (0..4).map(|i| (i as f64 - xbar) * (y[i] - ybar)).sum();
        let sxx: f64 = (0..4).map(|i| (i as f64 - xbar).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((fit.beta[1] - slope).abs() < 1e-12);
        assert!((fit.beta[0] - (ybar - slope * xbar)).abs() < 1e-12);
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn symmetric_logistic_data_gives_zero() {
        // each x value carries one 0 and one 1, so the score vanishes at zero
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 2.0, 2.0]);
        let d = dataset(x, vec![1.0, 0.0, 0.0, 1.0]);
        let fit = fit_mle(GlmFamily::Logistic, &d, None, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() < 1e-12);
    }

    #[test]
    fn weight_scaling_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: DMatrix<f64> = DMatrix::from_fn(60, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        });
        let y: Vec<f64> = (0..60)
            .map(|i| {
                if rng.random::<f64>() < 0.3 + 0.2 * x[(i, 1)].tanh() {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let w: Vec<f64> = (0..60).map(|_| rng.random_range(0.2..3.0)).collect();
        let w5: Vec<f64> = w.iter().map(|v| v * 5.0).collect();
        let d = dataset(x, y);
        let a = fit_mle(GlmFamily::Logistic, &d, Some(&w), &FitOptions::default()).unwrap();
        let b = fit_mle(GlmFamily::Logistic, &d, Some(&w5), &FitOptions::default()).unwrap();
        assert!((&a.beta - &b.beta).amax() < 1e-10);
    }

    #[test]
    fn single_class_is_separation() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let d = dataset(x, vec![0.0; 5]);
        assert!(matches!(
            fit_mle(GlmFamily::Logistic, &d, None, &FitOptions::default()),
            Err(Error::SeparationSuspected { .. })
        ));
    }

    #[test]
    fn separated_sample_is_rejected_even_with_small_gradient() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let d = dataset(x, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            fit_mle(GlmFamily::Logistic, &d, None, &FitOptions::default()),
            Err(Error::SeparationSuspected { .. })
        ));
    }

    #[test]
    fn one_overlapping_point_restores_the_mle() {
        let x = DMatrix::from_row_slice(5, 1, &[-2.0, -1.0, 1.0, 2.0, 0.5]);
        let d = dataset(x, vec![0.0, 0.0, 1.0, 1.0, 0.0]);
        let fit = fit_mle(GlmFamily::Logistic, &d, None, &FitOptions::default()).unwrap();
        assert!(fit.converged && fit.beta[0].is_finite() && fit.beta[0] > 0.0);
    }

    #[test]
    fn max_iter_is_reported_not_raised() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: DMatrix<f64> = DMatrix::from_fn(80, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..80)
            .map(|i| ((x[(i, 0)] + x[(i, 1)]).exp() * 1.5).round())
            .collect();
        let d = dataset(x, y);
        let opts = FitOptions {
            max_iter: 1,
            ..FitOptions::default()
        };
        let fit = fit_mle(GlmFamily::Poisson, &d, None, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
        assert!(fit.clone().require_converged().is_err());
        let full = fit_mle(GlmFamily::Poisson, &d, None, &FitOptions::default()).unwrap();
        assert!(full.converged && full.final_grad_norm < 1e-8);
    }

    #[test]
    fn rejects_underdetermined_and_zero_weights() {
        let d = dataset(DMatrix::from_element(1, 2, 1.0), vec![1.0]);
        assert!(fit_mle(GlmFamily::Linear, &d, None, &FitOptions::default()).is_err());
        let d = dataset(DMatrix::from_element(2, 1, 1.0), vec![1.0, 0.0]);
        assert!(fit_mle(
            GlmFamily::Logistic,
            &d,
            Some(&[0.0, 0.0]),
            &FitOptions::default()
        )
        .is_err());
        let bad = FitOptions {
            tol_grad: 0.0,
            ..FitOptions::default()
        };
        assert!(fit_mle(GlmFamily::Logistic, &d, None, &bad).is_err());
    }

    #[test]
    fn collinear_linear_design_is_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let d = dataset(x, vec![1.0, 2.0, 3.0]);
        assert_eq!(
            fit_mle(GlmFamily::Linear, &d, None, &FitOptions::default()).unwrap_err(),
            Error::SingularHessian
        );
    }

    #[test]
    fn averages() {
        let mk = |k| FitResult {
            beta: DVector::zeros(1),
            iterations: k,
            converged: true,
            final_grad_norm: 0.0,
            wall_time: Duration::ZERO,
        };
        assert_eq!(average_iterations(&[mk(10), mk(12)]).unwrap(), 11.0);
        assert_eq!(average_iterations(&[mk(7)]).unwrap(), 7.0);
        assert_eq!(
            average_iterations(&[]).unwrap_err(),
            Error::EmptyInput("fit results")
        );
    }
}
