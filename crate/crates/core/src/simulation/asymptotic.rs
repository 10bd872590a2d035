//! Population matrices behind the asymptotic variances, their Monte Carlo estimates,
//! and numerical checks of the efficiency comparison between the two estimators.
//!
//! With `v = sqrt(b''(x'beta0)) x` and `h = sqrt(b''(x'beta0)) ||L Phi^{-1} x||`:
//!
//! ```text
//! Phi    = E[v v']          m = E[h]
//! Gamma  = E[h v v']        Omega = E[h^2 v v']        Lambda = E[v v' / h]
//! ```

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::glm::linear_predictor;
use crate::linalg::{
    max_abs_diff, min_eigenvalue, row_norms, spd_inverse, symmetrize, weighted_gram, DEFAULT_JITTER,
};
use crate::sampling::{Criterion, SamplingPlan};
use crate::simulation::designs::{generate_design, DesignSpec};

const CHUNK_ROWS: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticMatrices {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub m: f64,
    pub sample_count: usize,
}

/// The four matrices compared by the efficiency ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyTerms {
    /// `Gamma^{-1}`: subsampling part of the unweighted variance (per unit `m`).
    pub gamma_inv: DMatrix<f64>,
    /// `Phi^{-1} Lambda Phi^{-1}`: subsampling part of the weighted variance.
    pub phi_lambda_phi: DMatrix<f64>,
    /// `Gamma^{-1} Omega Gamma^{-1}`: full-data part of the unweighted variance.
    pub gamma_omega_gamma: DMatrix<f64>,
    /// `Phi^{-1}`: full-data part of the weighted variance.
    pub phi_inv: DMatrix<f64>,
}

fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_inverse(a, DEFAULT_JITTER).ok_or(Error::SingularMatrix)
}

impl AsymptoticMatrices {
    pub fn efficiency_terms(&self) -> Result<EfficiencyTerms> {
        let phi_inv = inverse(&self.phi)?;
        let gamma_inv = inverse(&self.gamma)?;
        Ok(EfficiencyTerms {
            phi_lambda_phi: symmetrize(&phi_inv * &self.lambda * &phi_inv),
            gamma_omega_gamma: symmetrize(&gamma_inv * &self.omega * &gamma_inv),
            gamma_inv,
            phi_inv,
        })
    }
}

/// `L Phi^{-1}` for the criterion (identity for L-optimality).
fn transform(phi: &DMatrix<f64>, criterion: &Criterion) -> Result<Option<DMatrix<f64>>> {
    match criterion {
        Criterion::LOpt => Ok(None),
        Criterion::AOpt => Ok(Some(
            spd_inverse(phi, DEFAULT_JITTER).ok_or(Error::SingularPhi)?,
        )),
        Criterion::GeneralL(l) => {
            let inv = spd_inverse(phi, DEFAULT_JITTER).ok_or(Error::SingularPhi)?;
            Ok(Some(l * inv))
        }
    }
}

#[derive(Default)]
struct Accumulator {
    gamma: Option<DMatrix<f64>>,
    omega: Option<DMatrix<f64>>,
    lambda: Option<DMatrix<f64>>,
    m: f64,
}

fn add(slot: &mut Option<DMatrix<f64>>, term: DMatrix<f64>) {
    *slot = Some(match slot.take() {
        Some(acc) => acc + term,
        None => term,
    });
}

/// `sum_i q_i b''_i x_i x_i'` over a chunk.
fn phi_chunk(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta0: &DVector<f64>,
    mass: &[f64],
) -> Result<DMatrix<f64>> {
    let eta = linear_predictor(family, x, beta0)?;
    let w: Vec<f64> = eta
        .iter()
        .zip(mass)
        .map(|(&t, q)| q * family.variance_unchecked(t))
        .collect();
    Ok(weighted_gram(x, &w))
}

fn second_pass_chunk(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta0: &DVector<f64>,
    mass: &[f64],
    map: Option<&DMatrix<f64>>,
    acc: &mut Accumulator,
) -> Result<()> {
    let eta = linear_predictor(family, x, beta0)?;
    let norms = match map {
        None => row_norms(x),
        // rows of X M'
        Some(m) => row_norms(&(x * m.transpose())),
    };
    let n = x.nrows();
    let (mut wg, mut wo, mut wl) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let b2 = family.variance_unchecked(eta[i]);
        let h = b2.sqrt() * norms[i];
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "covariate point with zero optimal weight (row {i}); Lambda is undefined"
            )));
        }
        acc.m += mass[i] * h;
        wg[i] = mass[i] * b2 * h;
        wo[i] = mass[i] * b2 * h * h;
        wl[i] = mass[i] * b2 / h;
    }
    add(&mut acc.gamma, weighted_gram(x, &wg));
    add(&mut acc.omega, weighted_gram(x, &wo));
    add(&mut acc.lambda, weighted_gram(x, &wl));
    Ok(())
}

/// Exact matrices for a discrete covariate distribution with support points `x` (rows)
/// and probability masses `masses` (uniform `1/N` when absent, i.e. the empirical
/// distribution of a sample). `Phi` is computed first and then plugged into `h`.
pub fn asymptotic_matrices_from_points(
    family: GlmFamily,
    x: &DMatrix<f64>,
    masses: Option<&[f64]>,
    beta0: &DVector<f64>,
    criterion: &Criterion,
) -> Result<AsymptoticMatrices> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("support points"));
    }
    let uniform;
    let mass = match masses {
        Some(q) => {
            if q.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} masses for {n} points",
                    q.len()
                )));
            }
            let total: f64 = q.iter().sum();
            if q.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(
                    "masses must be non-negative and sum to one".into(),
                ));
            }
            q
        }
        None => {
            uniform = vec![1.0 / n as f64; n];
            &uniform[..]
        }
    };
    let phi = symmetrize(phi_chunk(family, x, beta0, mass)?);
    let map = transform(&phi, criterion)?;
    let mut acc = Accumulator::default();
    second_pass_chunk(family, x, beta0, mass, map.as_ref(), &mut acc)?;
    Ok(AsymptoticMatrices {
        phi,
        gamma: symmetrize(acc.gamma.expect("non-empty")),
        omega: symmetrize(acc.omega.expect("non-empty")),
        lambda: symmetrize(acc.lambda.expect("non-empty")),
        m: acc.m,
        sample_count: n,
    })
}

/// Monte Carlo estimates from `sample_count` fresh draws of the design at the true
/// `beta0`. Two passes over the same draws (the generator is replayed): the first
/// estimates `Phi`, the second everything that depends on it.
pub fn monte_carlo_matrices<R: Rng + Clone>(
    family: GlmFamily,
    spec: &DesignSpec,
    intercept: bool,
    beta0: &DVector<f64>,
    criterion: &Criterion,
    sample_count: usize,
    rng: &mut R,
) -> Result<AsymptoticMatrices> {
    if sample_count == 0 {
        return Err(Error::EmptyInput("Monte Carlo sample"));
    }
    let p = spec.dim + usize::from(intercept);
    if beta0.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "beta0 has {} entries, expected {p}",
            beta0.len()
        )));
    }
    let chunk = |rng: &mut R, rows: usize| {
        let raw = generate_design(spec, rows, rng);
        if intercept {
            raw.insert_column(0, 1.0)
        } else {
            raw
        }
    };
    let sizes: Vec<usize> = (0..sample_count.div_ceil(CHUNK_ROWS))
        .map(|k| CHUNK_ROWS.min(sample_count - k * CHUNK_ROWS))
        .collect();
    let q = 1.0 / sample_count as f64;
    let replay = rng.clone();

    let mut phi = DMatrix::zeros(p, p);
    for &rows in &sizes {
        let x = chunk(rng, rows);
        phi += phi_chunk(family, &x, beta0, &vec![q; rows])?;
    }
    let phi = symmetrize(phi);
    let map = transform(&phi, criterion)?;

    let mut again = replay;
    let mut acc = Accumulator::default();
    for &rows in &sizes {
        let x = chunk(&mut again, rows);
        second_pass_chunk(family, &x, beta0, &vec![q; rows], map.as_ref(), &mut acc)?;
    }
    Ok(AsymptoticMatrices {
        phi,
        gamma: symmetrize(acc.gamma.expect("non-empty")),
        omega: symmetrize(acc.omega.expect("non-empty")),
        lambda: symmetrize(acc.lambda.expect("non-empty")),
        m: acc.m,
        sample_count,
    })
}

/// `(Sigma_uw, Sigma_w)` for `r / n -> rho`:
/// `Sigma_uw = m Gamma^{-1} + rho Gamma^{-1} Omega Gamma^{-1}` and
/// `Sigma_w = m Phi^{-1} Lambda Phi^{-1} + rho Phi^{-1}`.
pub fn theoretical_variances(
    mats: &AsymptoticMatrices,
    rho: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    let t = mats.efficiency_terms()?;
    let uw = &t.gamma_inv * mats.m + &t.gamma_omega_gamma * rho;
    let w = &t.phi_lambda_phi * mats.m + &t.phi_inv * rho;
    Ok((uw, w))
}

/// `a <= b` in the Loewner order, up to `tol` on the smallest eigenvalue of `b - a`.
pub fn loewner_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?} (square matrices of equal size required)",
            a.shape(),
            b.shape()
        )));
    }
    Ok(min_eigenvalue(&symmetrize(b - a)) >= -tol)
}

/// Evaluates the conditional variance of the weighted score under an optimal plan in two
/// ways and returns the largest entrywise difference:
///
/// ```text
/// (1/n^2) sum_i b''_i x_i x_i' {1/(r pi_i) - 1/r + 1}
///   = (m/r) Lambda_n + (1 - 1/r) (1/n) Phi_n
/// ```
///
/// where `Phi_n`, `Lambda_n` are full-data averages at `beta0` and `Lambda_n` divides by
/// the plan's unnormalized weights `n m pi_i`.
pub fn weighted_variance_identity_check(
    family: GlmFamily,
    data: &Dataset,
    plan: &SamplingPlan,
    beta0: &DVector<f64>,
    r: usize,
) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    if plan.n() != data.n() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} rows, data has {}",
            plan.n(),
            data.n()
        )));
    }
    if let Some(row) = plan.probabilities.iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroProbability { row });
    }
    let n = data.n() as f64;
    let rf = r as f64;
    let x = data.x();
    let eta = linear_predictor(family, x, beta0)?;
    let b2: Vec<f64> = eta.iter().map(|&t| family.variance_unchecked(t)).collect();
    let w_hat = plan.unnormalized_weights();

    let direct_w: Vec<f64> = b2
        .iter()
        .zip(plan.probabilities.iter())
        .map(|(v, &pi)| v * (1.0 / (rf * pi) - 1.0 / rf + 1.0) / (n * n))
        .collect();
    let direct = weighted_gram(x, &direct_w);

    let phi_n = weighted_gram(x, &b2) / n;
    let lw: Vec<f64> = b2.iter().zip(w_hat.iter()).map(|(v, w)| v / w).collect();
    let lambda_n = weighted_gram(x, &lw) / n;
    let regrouped = lambda_n * (plan.m_hat / rf) + phi_n * ((1.0 - 1.0 / rf) / n);

    Ok(max_abs_diff(&direct, &regrouped))
}
