//! Probability mass functions over contiguous integer supports.

use crate::error::{Error, Result};
use crate::mechanism::QuantizationGrid;

/// A probability vector over the support `{0, .., K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    /// Wraps a probability vector, checking nonnegativity and
    /// normalization. No renormalization is performed; a sum off by more
    /// than the tolerance is an internal consistency error.
    pub fn with_tolerance(probs: Vec<f64>, tolerance: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty probability vector".into()));
        }
        if let Some(&p) = probs.iter().find(|&&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InternalConsistency(format!(
                "negative or non-finite probability entry {p}"
            )));
        }
        let sum = kahan_sum(&probs);
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::InternalConsistency(format!(
                "probabilities sum to {sum}, off by {}",
                sum - 1.0
            )));
        }
        Ok(Self { probs })
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, 1e-10)
    }

    pub fn point_mass(at: usize, support: usize) -> Result<Self> {
        if at >= support {
            return Err(Error::IndexOutOfRange { index: at, support });
        }
        let mut probs = vec![0.0; support];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn min_entry(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Total variation distance to another PMF on the same support.
    pub fn tv_distance(&self, other: &Pmf) -> Result<f64> {
        if self.support_size() != other.support_size() {
            return Err(Error::SupportMismatch {
                left: self.support_size(),
                right: other.support_size(),
            });
        }
        Ok(0.5
            * self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    /// Mean of the grid level values under this PMF.
    pub fn mean_on_grid(&self, grid: &QuantizationGrid) -> Result<f64> {
        if self.support_size() != grid.len() {
            return Err(Error::SupportMismatch {
                left: self.support_size(),
                right: grid.len(),
            });
        }
        Ok(kahan_sum_iter(
            self.probs.iter().zip(grid.levels()).map(|(p, b)| p * b),
        ))
    }

    /// Mean of the integer support.
    pub fn mean_index(&self) -> f64 {
        kahan_sum_iter(self.probs.iter().enumerate().map(|(i, p)| i as f64 * p))
    }

    /// Empirical PMF from a histogram of counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidParameter("empty histogram".into()));
        }
        Pmf::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

pub(crate) fn kahan_sum(xs: &[f64]) -> f64 {
    kahan_sum_iter(xs.iter().copied())
}

pub(crate) fn kahan_sum_iter(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
