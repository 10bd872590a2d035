//! Synthetic covariate designs and response generators.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, Normal, Poisson, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::family::GlmFamily;
use crate::glm::linear_predictor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignKind {
    /// `N(0, S)` with `S_ij = 0.5^{I(i != j)}`.
    MzNormal,
    /// `N(0.5, S)`.
    NzNormal,
    /// `N(0, U S U)` with `U = diag(1, 1/2, ..., 1/d)`.
    UnNormal,
    /// `0.5 N(0.5, S) + 0.5 N(-0.5, S)`.
    MixNormal,
    /// Independent `U[-0.5, 0.5]` components.
    PoissonCase1,
    /// First `d/2` components `U[-0.5, 0.5]`, the rest `U[-1, 1]`.
    PoissonCase2,
    /// `N(1, S2)` with `S2 = U2 S U2`, `U2 = diag(5, 5/2, ..., 5/d)`.
    GA,
    /// Multivariate t with 3 degrees of freedom and scale `S2`.
    T3,
    /// Multivariate t with 1 degree of freedom (Cauchy-like) and scale `S2`.
    T1,
    /// Independent exponentials with rate 2.
    Exp,
}

impl DesignKind {
    pub const ALL: [DesignKind; 10] = [
        DesignKind::MzNormal,
        DesignKind::NzNormal,
        DesignKind::UnNormal,
        DesignKind::MixNormal,
        DesignKind::PoissonCase1,
        DesignKind::PoissonCase2,
        DesignKind::GA,
        DesignKind::T3,
        DesignKind::T1,
        DesignKind::Exp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::MzNormal => "mzNormal",
            DesignKind::NzNormal => "nzNormal",
            DesignKind::UnNormal => "unNormal",
            DesignKind::MixNormal => "mixNormal",
            DesignKind::PoissonCase1 => "case1",
            DesignKind::PoissonCase2 => "case2",
            DesignKind::GA => "GA",
            DesignKind::T3 => "T3",
            DesignKind::T1 => "T1",
            DesignKind::Exp => "EXP",
        }
    }

    /// T1 and T3 violate the moment conditions behind the asymptotic theory.
    pub fn heavy_tailed(self) -> bool {
        matches!(self, DesignKind::T1 | DesignKind::T3)
    }

    /// The family each design was built for.
    pub fn natural_family(self) -> GlmFamily {
        match self {
            DesignKind::MzNormal
            | DesignKind::NzNormal
            | DesignKind::UnNormal
            | DesignKind::MixNormal => GlmFamily::Logistic,
            DesignKind::PoissonCase1 | DesignKind::PoissonCase2 => GlmFamily::Poisson,
            DesignKind::GA | DesignKind::T3 | DesignKind::T1 | DesignKind::Exp => GlmFamily::Linear,
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        DesignKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .or(match key.as_str() {
                "poissoncase1" | "case 1" => Some(DesignKind::PoissonCase1),
                "poissoncase2" | "case 2" => Some(DesignKind::PoissonCase2),
                "ga" | "normal" => Some(DesignKind::GA),
                "exponential" => Some(DesignKind::Exp),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown design `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub dim: usize,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "design dimension must be at least 1".into(),
            ));
        }
        Ok(DesignSpec { kind, dim })
    }
}

/// `S_ij = 0.5^{I(i != j)}`, optionally sandwiched as `U S U` for a diagonal `U`.
pub(crate) fn equicorrelated(dim: usize, scale: impl Fn(usize) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| {
        let s = if i == j { 1.0 } else { 0.5 };
        s * scale(i) * scale(j)
    })
}

fn gaussian_rows<R: Rng + ?Sized>(n: usize, cov: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let l = Cholesky::new(cov.clone())
        .expect("design covariance is positive-definite")
        .unpack();
    let z = DMatrix::from_fn(n, cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    z * l.transpose()
}

/// Draws an `n x dim` matrix of raw covariates (no intercept column).
pub fn generate_design<R: Rng + ?Sized>(spec: &DesignSpec, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = spec.dim;
    let unit = |_: usize| 1.0;
    match spec.kind {
        DesignKind::MzNormal => gaussian_rows(n, &equicorrelated(d, unit), rng),
        DesignKind::NzNormal => gaussian_rows(n, &equicorrelated(d, unit), rng).add_scalar(0.5),
        DesignKind::UnNormal => gaussian_rows(n, &equicorrelated(d, |i| 1.0 / (i + 1) as f64), rng),
        DesignKind::MixNormal => {
            let mut x = gaussian_rows(n, &equicorrelated(d, unit), rng);
            for i in 0..n {
                let shift = if rng.random::<bool>() { 0.5 } else { -0.5 };
                x.row_mut(i).add_scalar_mut(shift);
            }
            x
        }
        DesignKind::PoissonCase1 => {
            let u = Uniform::new_inclusive(-0.5, 0.5).expect("valid range");
            DMatrix::from_fn(n, d, |_, _| u.sample(rng))
        }
        DesignKind::PoissonCase2 => {
            let narrow = Uniform::new_inclusive(-0.5, 0.5).expect("valid range");
            let wide = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
            let half = d / 2;
            let mut x = DMatrix::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    x[(i, j)] = if j < half {
                        narrow.sample(rng)
                    } else {
                        wide.sample(rng)
                    };
                }
            }
            x
        }
        DesignKind::GA => gaussian_rows(n, &ga_scale(d), rng).add_scalar(1.0),
        DesignKind::T3 => multivariate_t(n, &ga_scale(d), 3.0, rng),
        DesignKind::T1 => multivariate_t(n, &ga_scale(d), 1.0, rng),
        DesignKind::Exp => {
            let e = Exp::new(2.0).expect("positive rate");
            DMatrix::from_fn(n, d, |_, _| e.sample(rng))
        }
    }
}

fn ga_scale(d: usize) -> DMatrix<f64> {
    equicorrelated(d, |i| 5.0 / (i + 1) as f64)
}

/// `Z / sqrt(W / nu)` with `Z ~ N(0, scale)` and `W ~ chi^2_nu`, one `W` per row.
fn multivariate_t<R: Rng + ?Sized>(
    n: usize,
    scale: &DMatrix<f64>,
    nu: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut x = gaussian_rows(n, scale, rng);
    let chi = ChiSquared::new(nu).expect("positive degrees of freedom");
    for i in 0..n {
        let w: f64 = chi.sample(rng);
        x.row_mut(i).scale_mut(1.0 / (w / nu).sqrt());
    }
    x
}

/// Draws responses from the family's conditional law at `x beta0`. `noise_sd` is the
/// error standard deviation of the linear model and is ignored otherwise.
pub fn generate_response<R: Rng + ?Sized>(
    family: GlmFamily,
    x: &DMatrix<f64>,
    beta0: &DVector<f64>,
    rng: &mut R,
    noise_sd: f64,
) -> Result<DVector<f64>> {
    if beta0.len() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "beta0 has {} entries, design has {} columns",
            beta0.len(),
            x.ncols()
        )));
    }
    let eta = linear_predictor(family, x, beta0)?;
    Ok(match family {
        GlmFamily::Linear => {
            let noise = Normal::new(0.0, noise_sd)
                .map_err(|_| Error::InvalidArgument(format!("invalid noise sd {noise_sd}")))?;
            eta.map(|t| t + noise.sample(rng))
        }
        GlmFamily::Logistic => eta.map(|t| {
            let p = family.mean_unchecked(t);
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }),
        GlmFamily::Poisson => {
            let mut y = DVector::zeros(eta.len());
            for (yi, &t) in y.iter_mut().zip(eta.iter()) {
                let pois = Poisson::new(t.exp()).map_err(|_| Error::NonFiniteLinearPredictor {
                    family: "poisson",
                    value: t,
                })?;
                *yi = pois.sample(rng);
            }
            y
        }
    })
}
