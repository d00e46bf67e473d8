//! Randomized quantization for differentially private federated learning.
//!
//! The crate provides, in dependency order:
//!
//! - [`mechanism`]: the randomized quantization mechanism itself — grid
//!   construction, level subsampling, randomized rounding, encode/decode.
//! - [`distribution`]: the exact output PMF via closed form and via
//!   brute-force enumeration (the oracle).
//! - [`pbm`]: the Poisson Binomial Mechanism comparison baseline.
//! - [`accountant`]: Renyi divergences for single devices and
//!   secure-aggregated sums, the analytic bound, and parameter sweeps.
//! - [`sim`]: a deterministic desk-scale federated DP-SGD simulation on
//!   synthetic data.
//! - [`selftest`]: reduced-scale invariant suites with a fault-injection
//!   negative control.

pub mod accountant;
pub mod distribution;
pub mod error;
pub mod mechanism;
pub mod pbm;
pub mod pmf;
pub mod rng;
pub mod selftest;
pub mod sim;

pub use accountant::{
    aggregate_divergence, convolve_sum, divergence, divergence_sweep, max_divergence,
    renyi_divergence, theorem1_bound, worst_case_neighbors, Alpha, DivergenceQuery, Mechanism,
    SweepAxis, SweepRow, SweepSpec,
};
pub use distribution::{rqm_pmf, rqm_pmf_bruteforce};
pub use error::{Error, Result};
pub use mechanism::{
    clip_coordinatewise, decode_aggregate, decode_level, randomized_round, rqm_sample,
    subsample_levels, LevelSubset, QuantizationGrid, RqmParams,
};
pub use pbm::{pbm_pmf, pbm_sample, PbmParams};
pub use pmf::Pmf;
pub use rng::{RngStream, StreamKey};
