//! Categorical sampling over a weight vector: an alias table for the draws, plus a
//! prefix-sum sampler used as a cross-check. Both wrap `rand_distr`; this module only
//! adds the crate's input validation and error types.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};

fn check(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptyInput("sampling weights"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "sampling weights must be finite and non-negative".into(),
        ));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(())
}

/// O(n) construction, O(1) draws.
#[derive(Debug, Clone)]
pub struct AliasTable {
    inner: WeightedAliasIndex<f64>,
    len: usize,
}

impl AliasTable {
    /// Builds a table from non-negative weights (not necessarily normalized).
    pub fn new(weights: &[f64]) -> Result<Self> {
        check(weights)?;
        let inner = WeightedAliasIndex::new(weights.to_vec())
            .map_err(|e| Error::InvalidArgument(format!("alias table: {e}")))?;
        Ok(AliasTable {
            inner,
            len: weights.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.inner.sample(rng)
    }
}

/// Inverse-CDF sampler by binary search over prefix sums.
#[derive(Debug, Clone)]
pub struct CumulativeTable {
    inner: WeightedIndex<f64>,
}

impl CumulativeTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        check(weights)?;
        let inner = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidArgument(format!("cumulative table: {e}")))?;
        Ok(CumulativeTable { inner })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.inner.sample(rng)
    }
}
