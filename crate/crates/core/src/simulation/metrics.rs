use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Empirical MSE: the mean (or two-sided `trim_alpha` trimmed mean) of the unsquared
/// Euclidean errors `||beta_s - beta_ref||`.
pub fn emse(estimates: &[DVector<f64>], beta_ref: &DVector<f64>, trim_alpha: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    if !(0.0..0.5).contains(&trim_alpha) {
        return Err(Error::InvalidArgument(format!(
            "trim_alpha must be in [0, 0.5), got {trim_alpha}"
        )));
    }
    let mut errors = Vec::with_capacity(estimates.len());
    for b in estimates {
        if b.len() != beta_ref.len() {
            return Err(Error::ShapeMismatch(format!(
                "estimate of length {} against reference of length {}",
                b.len(),
                beta_ref.len()
            )));
        }
        errors.push((b - beta_ref).norm());
    }
    Ok(trimmed_mean(errors, trim_alpha))
}

/// Drops `floor(alpha * len)` values from each end before averaging.
pub fn trimmed_mean(mut values: Vec<f64>, alpha: f64) -> f64 {
    let k = (alpha * values.len() as f64).floor() as usize;
    if k == 0 {
        return values.iter().sum::<f64>() / values.len() as f64;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let kept = &values[k..values.len() - k];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// `emse_weighted / emse_unweighted`; above one means the unweighted estimator wins.
pub fn relative_efficiency(emse_w: f64, emse_uw: f64) -> Result<f64> {
    if emse_uw == 0.0 {
        return Err(Error::DivisionByZero("unweighted eMSE is zero"));
    }
    Ok(emse_w / emse_uw)
}

/// Sample covariance (divisor `S - 1`) of the estimates; needs at least two.
pub fn sample_covariance(estimates: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if estimates.len() < 2 {
        return Err(Error::EmptyInput("need at least two estimates"));
    }
    let s = estimates.len() as f64;
    let p = estimates[0].len();
    let mean = estimates.iter().fold(DVector::zeros(p), |acc, b| acc + b) / s;
    let mut cov = DMatrix::zeros(p, p);
    for b in estimates {
        let d = b - &mean;
        cov += &d * d.transpose();
    }
    Ok(cov / (s - 1.0))
}

/// Trace of [`sample_covariance`]: the summed per-coordinate variance.
pub fn empirical_variance(estimates: &[DVector<f64>]) -> Result<f64> {
    Ok(sample_covariance(estimates)?.trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn emse_examples() {
        let r = v(&[1.0, 2.0]);
        assert_eq!(emse(&[r.clone(), r.clone()], &r, 0.0).unwrap(), 0.0);
        let e = emse(&[v(&[2.0, 2.0]), v(&[1.0, 5.0])], &r, 0.0).unwrap();
        assert_eq!(e, 2.0);
        assert_eq!(
            emse(&[], &r, 0.0).unwrap_err(),
            Error::EmptyInput("estimates")
        );
        assert!(emse(std::slice::from_ref(&r), &r, 0.5).is_err());
    }

    #[test]
    fn trimmed_emse_drops_outlier() {
        let zero = v(&[0.0]);
        let mut est = vec![v(&[100.0])];
        est.extend((0..99).map(|_| v(&[1.0])));
        let got = emse(&est, &zero, 0.05).unwrap();
        // oracle: sort, drop 5 from each end, average
        let mut d: Vec<f64> = est.iter().map(|b| b[0].abs()).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = d[5..95].iter().sum::<f64>() / 90.0;
        assert!((got - oracle).abs() < 1e-12);
        assert_eq!(got, 1.0);
    }

    #[test]
    fn untrimmed_is_plain_mean() {
        let r = v(&[0.0, 0.0]);
        let est = vec![v(&[3.0, 4.0]), v(&[0.0, 1.0]), v(&[1.0, 0.0])];
        assert_eq!(emse(&est, &r, 0.0).unwrap(), (5.0 + 1.0 + 1.0) / 3.0);
    }

    #[test]
    fn relative_efficiency_examples() {
        assert_eq!(relative_efficiency(2.0, 1.0).unwrap(), 2.0);
        assert!(relative_efficiency(1.0, 0.0).is_err());
    }

    #[test]
    fn empirical_variance_is_trace_of_covariance() {
        let est = vec![v(&[1.0, 0.0]), v(&[3.0, 2.0]), v(&[2.0, 1.0])];
        // per-coordinate variances 1 and 1
        assert!((empirical_variance(&est).unwrap() - 2.0).abs() < 1e-15);
        assert!(empirical_variance(&est[..1]).is_err());
    }
}
