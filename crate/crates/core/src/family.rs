//! Canonical exponential-family members.
//!
//! Each family is described by its cumulant function `b`, with conditional density
//! proportional to `exp{y t - b(t)}` where `t = x'beta` is the linear predictor.
//! The dispersion is fixed at one.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest linear predictor magnitude accepted by the Poisson family.
pub const POISSON_MAX_PREDICTOR: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlmFamily {
    Linear,
    Logistic,
    Poisson,
}

impl GlmFamily {
    pub fn name(self) -> &'static str {
        match self {
            GlmFamily::Linear => "linear",
            GlmFamily::Logistic => "logistic",
            GlmFamily::Poisson => "poisson",
        }
    }

    fn check(self, t: f64) -> Result<()> {
        let ok = match self {
            GlmFamily::Poisson => t.abs() <= POISSON_MAX_PREDICTOR,
            _ => t.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::NonFiniteLinearPredictor {
                family: self.name(),
                value: t,
            })
        }
    }

    /// The cumulant `b(t)`.
    pub fn b_value(self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(match self {
            GlmFamily::Linear => 0.5 * t * t,
            GlmFamily::Logistic => t.max(0.0) + (-t.abs()).exp().ln_1p(),
            GlmFamily::Poisson => t.exp(),
        })
    }

    /// The mean function `b'(t)`.
    pub fn b_prime(self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.mean_unchecked(t))
    }

    /// The variance function `b''(t)`; strictly positive for finite `t`.
    pub fn b_double_prime(self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.variance_unchecked(t))
    }

    pub(crate) fn mean_unchecked(self, t: f64) -> f64 {
        match self {
            GlmFamily::Linear => t,
            GlmFamily::Logistic => sigmoid(t),
            GlmFamily::Poisson => t.exp(),
        }
    }

    pub(crate) fn variance_unchecked(self, t: f64) -> f64 {
        match self {
            GlmFamily::Linear => 1.0,
            GlmFamily::Logistic => {
                // p(1-p) written so that neither factor underflows to 0 for moderate |t|
                let e = (-t.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            GlmFamily::Poisson => t.exp(),
        }
    }

    /// Checks that a response lies in the family's support.
    pub fn validate_response(self, y: f64) -> bool {
        match self {
            GlmFamily::Linear => y.is_finite(),
            GlmFamily::Logistic => y == 0.0 || y == 1.0,
            GlmFamily::Poisson => y >= 0.0 && y.is_finite() && y.fract() == 0.0,
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for GlmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GlmFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "gaussian" => Ok(GlmFamily::Linear),
            "logistic" | "binomial" => Ok(GlmFamily::Logistic),
            "poisson" => Ok(GlmFamily::Poisson),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const ALL: [GlmFamily; 3] = [GlmFamily::Linear, GlmFamily::Logistic, GlmFamily::Poisson];

    #[test]
    fn cumulant_examples() {
        assert_relative_eq!(
            GlmFamily::Logistic.b_value(0.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_eq!(GlmFamily::Linear.b_value(3.0).unwrap(), 4.5);
        assert_eq!(GlmFamily::Poisson.b_value(0.0).unwrap(), 1.0);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(GlmFamily::Logistic.b_prime(0.0).unwrap(), 0.5);
        assert_eq!(GlmFamily::Linear.b_prime(-2.5).unwrap(), -2.5);
        // 1/(1+e^-2) = 0.8807970779778824...
        assert_relative_eq!(
            GlmFamily::Logistic.b_prime(2.0).unwrap(),
            0.880_797_077_977_882_4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn variance_examples() {
        assert_eq!(GlmFamily::Logistic.b_double_prime(0.0).unwrap(), 0.25);
        assert_eq!(GlmFamily::Linear.b_double_prime(17.0).unwrap(), 1.0);
        assert_eq!(GlmFamily::Poisson.b_double_prime(0.0).unwrap(), 1.0);
    }

    #[test]
    fn logistic_is_stable_for_extreme_predictors() {
        let f = GlmFamily::Logistic;
        assert_relative_eq!(f.b_value(800.0).unwrap(), 800.0, epsilon = 1e-12);
        assert!(f.b_value(-800.0).unwrap() >= 0.0);
        assert!(f.b_value(-800.0).unwrap() < 1e-300);
        assert_eq!(f.b_prime(800.0).unwrap(), 1.0);
        assert!(f.b_double_prime(30.0).unwrap() > 0.0);
    }

    #[test]
    fn poisson_guard() {
        let err = GlmFamily::Poisson.b_value(501.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLinearPredictor { .. }));
        assert!(GlmFamily::Poisson.b_prime(-600.0).is_err());
        assert!(GlmFamily::Logistic.b_value(f64::NAN).is_err());
    }

    #[test]
    fn variance_identities() {
        for i in -40..=40 {
            let t = i as f64 * 0.5;
            let p = GlmFamily::Logistic.b_prime(t).unwrap();
            assert_relative_eq!(
                GlmFamily::Logistic.b_double_prime(t).unwrap(),
                p * (1.0 - p),
                max_relative = 1e-9
            );
            assert_eq!(
                GlmFamily::Poisson.b_double_prime(t).unwrap(),
                GlmFamily::Poisson.b_prime(t).unwrap()
            );
            for f in ALL {
                assert!(f.b_double_prime(t).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        for f in ALL {
            for i in -40..=40 {
                let t = i as f64 * 0.5;
                let fd1 = (f.b_value(t + h).unwrap() - f.b_value(t - h).unwrap()) / (2.0 * h);
                let d1 = f.b_prime(t).unwrap();
                assert!(
                    (fd1 - d1).abs() <= 1e-6 * d1.abs().max(1.0),
                    "{f} b' at {t}: {fd1} vs {d1}"
                );
                let fd2 = (f.b_prime(t + h).unwrap() - f.b_prime(t - h).unwrap()) / (2.0 * h);
                let d2 = f.b_double_prime(t).unwrap();
                assert!(
                    (fd2 - d2).abs() <= 1e-6 * d2.abs().max(1.0),
                    "{f} b'' at {t}: {fd2} vs {d2}"
                );
            }
        }
    }

    #[test]
    fn response_support() {
        assert!(GlmFamily::Logistic.validate_response(1.0));
        assert!(!GlmFamily::Logistic.validate_response(0.5));
        assert!(GlmFamily::Poisson.validate_response(3.0));
        assert!(!GlmFamily::Poisson.validate_response(-1.0));
        assert!(!GlmFamily::Poisson.validate_response(1.5));
        assert!(GlmFamily::Linear.validate_response(-1.5));
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "Logistic".parse::<GlmFamily>().unwrap(),
            GlmFamily::Logistic
        );
        assert!("gamma".parse::<GlmFamily>().is_err());
    }
}
