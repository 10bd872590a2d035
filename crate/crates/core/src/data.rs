use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::family::GlmFamily;

/// Whether a constant column is prepended to the raw covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Intercept {
    #[default]
    Add,
    None,
}

/// Covariates (row `i` is `X_i`) plus an optional response vector.
///
/// Unmeasured responses are stored as `NaN`. Anything that needs responses asks for
/// them through [`Dataset::responses_at`], which fails on unmeasured rows, so code that
/// only touches covariates can run on a dataset where almost nothing has been measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Option<DVector<f64>>,
    intercept: bool,
}

impl Dataset {
    /// Builds a dataset from raw covariates, prepending a column of ones unless
    /// `intercept` is [`Intercept::None`].
    pub fn new(
        covariates: DMatrix<f64>,
        y: Option<DVector<f64>>,
        intercept: Intercept,
    ) -> Result<Self> {
        if let Some(y) = &y {
            if y.len() != covariates.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} responses for {} covariate rows",
                    y.len(),
                    covariates.nrows()
                )));
            }
        }
        if covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates must be finite".into()));
        }
        let (x, intercept) = match intercept {
            Intercept::Add => (covariates.insert_column(0, 1.0), true),
            Intercept::None => (covariates, false),
        };
        Ok(Dataset { x, y, intercept })
    }

    /// Uses `x` as the design matrix verbatim.
    pub fn from_design(x: DMatrix<f64>, y: Option<DVector<f64>>) -> Result<Self> {
        Self::new(x, y, Intercept::None)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&DVector<f64>> {
        self.y.as_ref()
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    /// Drops the responses, keeping only what is free to observe.
    pub fn covariates_only(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: None,
            intercept: self.intercept,
        }
    }

    pub fn with_responses(mut self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::ShapeMismatch(format!(
                "{} responses for {} rows",
                y.len(),
                self.n()
            )));
        }
        self.y = Some(y);
        Ok(self)
    }

    pub fn is_measured(&self, i: usize) -> bool {
        self.y.as_ref().is_some_and(|y| !y[i].is_nan())
    }

    /// Responses at `indices` (repeats allowed), failing if any is unmeasured.
    pub fn responses_at(&self, indices: &[usize]) -> Result<DVector<f64>> {
        let missing: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| !self.is_measured(i))
            .collect();
        if let Some(&first) = missing.first() {
            return Err(Error::MissingResponses {
                count: missing.len(),
                first,
            });
        }
        let y = self.y.as_ref().expect("checked above");
        Ok(DVector::from_iterator(
            indices.len(),
            indices.iter().map(|&i| y[i]),
        ))
    }

    /// All responses, failing if any row is unmeasured.
    pub fn responses(&self) -> Result<&DVector<f64>> {
        match &self.y {
            None => Err(Error::MissingResponses {
                count: self.n(),
                first: 0,
            }),
            Some(y) => match y.iter().position(|v| v.is_nan()) {
                Some(first) => Err(Error::MissingResponses {
                    count: y.iter().filter(|v| v.is_nan()).count(),
                    first,
                }),
                None => Ok(y),
            },
        }
    }

    /// Rows of the design matrix at `indices` (repeats allowed).
    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        select_rows(&self.x, indices)
    }

    /// The sub-dataset at `indices`. Unmeasured responses stay unmeasured.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.rows(indices),
            y: self
                .y
                .as_ref()
                .map(|y| DVector::from_iterator(indices.len(), indices.iter().map(|&i| y[i]))),
            intercept: self.intercept,
        }
    }

    /// Checks every measured response against the family's support.
    pub fn validate_responses(&self, family: GlmFamily) -> Result<()> {
        if let Some(y) = &self.y {
            for (row, &v) in y.iter().enumerate() {
                if !v.is_nan() && !family.validate_response(v) {
                    return Err(Error::InvalidResponse {
                        family: family.name(),
                        row,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn select_rows(x: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    let p = x.ncols();
    DMatrix::from_fn(indices.len(), p, |i, j| x[(indices[i], j)])
}
