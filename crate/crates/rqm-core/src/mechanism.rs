//! Randomized quantization of a clipped scalar.
//!
//! The mechanism extends the input range `[-c, c]` by a margin `delta`,
//! lays out `m` evenly spaced levels over `[-(c+delta), c+delta]`, keeps
//! each interior level with probability `q` (endpoints always survive),
//! and randomly rounds the input between the two surviving levels that
//! bracket it. The emitted value is the level index.
//!
//! RNG consumption is part of the contract: one sample consumes exactly
//! `m - 2` Bernoulli variates (interior levels in ascending index order)
//! followed by one uniform variate for the rounding step.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

/// Parameters of the randomized quantization mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RqmParams {
    c: f64,
    delta: f64,
    m: usize,
    q: f64,
}

impl RqmParams {
    /// Validates and constructs. Rejects `delta = 0` (the privacy bound
    /// diverges and endpoint inputs would be emitted deterministically)
    /// and `q` outside the open interval `(0, 1)`.
    pub fn new(c: f64, delta: f64, m: usize, q: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "clipping bound c must be positive and finite, got {c}"
            )));
        }
        if !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "range extension delta must be positive and finite, got {delta}"
            )));
        }
        if m < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 quantization levels, got m = {m}"
            )));
        }
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "inclusion probability q must lie in (0, 1), got {q}"
            )));
        }
        Ok(Self { c, delta, m, q })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Upper end of the output range, `c + delta`.
    pub fn x_max(&self) -> f64 {
        self.c + self.delta
    }

    pub fn grid(&self) -> QuantizationGrid {
        QuantizationGrid::new(self)
    }

    fn check_input(&self, x: f64) -> Result<()> {
        if !x.is_finite() || x.abs() > self.c {
            return Err(Error::DomainError {
                x,
                lo: -self.c,
                hi: self.c,
            });
        }
        Ok(())
    }
}

/// The `m` evenly spaced quantization levels over `[-x_max, x_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationGrid {
    levels: Vec<f64>,
    x_max: f64,
}

impl QuantizationGrid {
    pub fn new(params: &RqmParams) -> Self {
        let x_max = params.x_max();
        let m = params.m();
        let levels = (0..m)
            .map(|i| -x_max + 2.0 * i as f64 * x_max / (m - 1) as f64)
            .collect();
        Self { levels, x_max }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Index `j` of the half-open bin `[B(j), B(j+1))` containing `x`.
    ///
    /// Computed from the closed-form inverse and clamped to `[0, m-2]` so
    /// inputs within one ulp of a grid point resolve deterministically.
    pub fn locate_bin(&self, x: f64) -> Result<usize> {
        if !x.is_finite() || x < -self.x_max || x >= self.x_max {
            return Err(Error::DomainError {
                x,
                lo: -self.x_max,
                hi: self.x_max,
            });
        }
        let m = self.levels.len();
        let raw = ((x + self.x_max) * (m - 1) as f64 / (2.0 * self.x_max)).floor();
        let j = (raw.max(0.0) as usize).min(m - 2);
        Ok(j)
    }
}

/// Indices of the quantization levels that survived subsampling.
/// Always contains `0` and `m - 1`; sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSubset {
    indices: Vec<usize>,
}

impl LevelSubset {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// The consecutive pair `(lo, hi)` of surviving indices bracketing `x`:
    /// `lo` is the largest surviving index whose level is <= `x`, `hi` the
    /// smallest whose level is > `x`. When `x` sits exactly on a surviving
    /// level, that level is the lower bracket.
    pub fn bracket(&self, x: f64, grid: &QuantizationGrid) -> (usize, usize) {
        debug_assert!(x >= grid.level(0) && x < grid.x_max());
        let pos = self.indices.partition_point(|&i| grid.level(i) <= x);
        // pos >= 1 because level(0) = -x_max <= x, and pos < len because
        // level(m-1) = x_max > x.
        (self.indices[pos - 1], self.indices[pos])
    }
}

/// Draws the surviving level set: endpoints always, each interior level
/// independently with probability `q`. Consumes exactly `m - 2` Bernoulli
/// variates in ascending index order.
pub fn subsample_levels(params: &RqmParams, rng: &mut RngStream) -> LevelSubset {
    let m = params.m();
    let mut indices = Vec::with_capacity(m);
    indices.push(0);
    for i in 1..m - 1 {
        if rng.bernoulli(params.q()) {
            indices.push(i);
        }
    }
    indices.push(m - 1);
    LevelSubset { indices }
}

/// Rounds `x` to `hi` with probability `(x - B(lo)) / (B(hi) - B(lo))`,
/// otherwise `lo`. Consumes exactly one uniform variate.
pub fn randomized_round(
    x: f64,
    lo: usize,
    hi: usize,
    grid: &QuantizationGrid,
    rng: &mut RngStream,
) -> Result<usize> {
    if lo >= hi || hi >= grid.len() {
        return Err(Error::InvalidParameter(format!(
            "rounding bracket ({lo}, {hi}) invalid for grid of size {}",
            grid.len()
        )));
    }
    let (b_lo, b_hi) = (grid.level(lo), grid.level(hi));
    if x < b_lo || x > b_hi {
        return Err(Error::DomainError {
            x,
            lo: b_lo,
            hi: b_hi,
        });
    }
    let p_up = (x - b_lo) / (b_hi - b_lo);
    Ok(if rng.uniform() < p_up { hi } else { lo })
}

/// One end-to-end draw of the mechanism: subsample levels, bracket `x`,
/// randomized-round. Returns the chosen level index in `{0..m-1}`.
pub fn rqm_sample(x: f64, params: &RqmParams, rng: &mut RngStream) -> Result<usize> {
    params.check_input(x)?;
    let grid = params.grid();
    let subset = subsample_levels(params, rng);
    let (lo, hi) = subset.bracket(x, &grid);
    randomized_round(x, lo, hi, &grid, rng)
}

/// Level value for index `z`, i.e. `B(z)`.
pub fn decode_level(z: usize, params: &RqmParams) -> Result<f64> {
    if z >= params.m() {
        return Err(Error::IndexOutOfRange {
            index: z,
            support: params.m(),
        });
    }
    let x_max = params.x_max();
    Ok(-x_max + 2.0 * z as f64 * x_max / (params.m() - 1) as f64)
}

/// Server-side decode of a secure-aggregated sum of `n` level indices;
/// equals the arithmetic mean of the per-device decoded levels.
pub fn decode_aggregate(z_sum: u64, n: usize, params: &RqmParams) -> Result<f64> {
    let max = (n as u64) * (params.m() as u64 - 1);
    if n == 0 || z_sum > max {
        return Err(Error::IndexOutOfRange {
            index: z_sum as usize,
            support: max as usize + 1,
        });
    }
    let x_max = params.x_max();
    Ok(-x_max + 2.0 * z_sum as f64 * x_max / (n as f64 * (params.m() - 1) as f64))
}

/// Clamp every coordinate to `[-c, c]`.
pub fn clip_coordinatewise(v: &[f64], c: f64) -> Vec<f64> {
    v.iter().map(|&x| x.clamp(-c, c)).collect()
}
