//! Exact output distribution of the randomized quantization mechanism.
//!
//! Two independent routes are provided: a closed-form evaluation over the
//! four index cases (below/above the input's bin, with the always-included
//! endpoints treated specially), and a brute-force enumeration of every
//! interior-level subset. The brute force is the oracle for the closed
//! form and is kept deliberately simple.

use crate::error::{Error, Result};
use crate::mechanism::RqmParams;
use crate::pmf::Pmf;

/// Exact PMF of the mechanism's output index for input `x`.
///
/// Entries are checked to sum to 1 within 1e-10; a larger deviation is an
/// internal consistency error, never silently renormalized.
pub fn rqm_pmf(x: f64, params: &RqmParams) -> Result<Pmf> {
    let probs = closed_form(x, params, false)?;
    Pmf::with_tolerance(probs, 1e-10)
}

/// Closed-form evaluation with a deliberately wrong sign in the `i = 0`
/// case. Exists only as the negative control for the selftest; never used
/// in production paths.
#[doc(hidden)]
pub fn rqm_pmf_with_injected_fault(x: f64, params: &RqmParams) -> Result<Vec<f64>> {
    closed_form(x, params, true)
}

fn closed_form(x: f64, params: &RqmParams, fault: bool) -> Result<Vec<f64>> {
    if !x.is_finite() || x.abs() > params.c() {
        return Err(Error::DomainError {
            x,
            lo: -params.c(),
            hi: params.c(),
        });
    }
    let m = params.m();
    let q = params.q();
    let grid = params.grid();
    let b = grid.levels();
    let j = grid.locate_bin(x)?;

    let mut probs = vec![0.0; m];

    // Geometric prefactors accumulated iteratively rather than via powf.
    // (1-q)^{m-j-2}: survival of interior levels j+1..m-2.
    let mut endpoint_up = 1.0;
    for _ in (j + 1)..(m - 1) {
        endpoint_up *= 1.0 - q;
    }
    // (1-q)^j: survival of interior levels 1..j.
    let mut endpoint_down = 1.0;
    for _ in 1..=j {
        endpoint_down *= 1.0 - q;
    }

    // Indices at or below the bin: partner k runs over the surviving level
    // just above x.
    for i in 0..=j {
        let sign = if fault && i == 0 { 1.0 } else { -1.0 };
        let mut inner = endpoint_up * (b[m - 1] + sign * x) / (b[m - 1] - b[i]);
        let mut w = q;
        for k in (j + 1)..(m - 1) {
            inner += w * (b[k] - x) / (b[k] - b[i]);
            w *= 1.0 - q;
        }
        let prefactor = if i == 0 {
            endpoint_down
        } else {
            // q(1-q)^{j-i}
            let mut p = q;
            for _ in i..j {
                p *= 1.0 - q;
            }
            p
        };
        probs[i] = prefactor * inner;
    }

    // Indices strictly above the bin: partner k runs over the surviving
    // level at or below x.
    for i in (j + 1)..m {
        let mut inner = endpoint_down * (x - b[0]) / (b[i] - b[0]);
        let mut w = q;
        for k in (1..=j).rev() {
            inner += w * (x - b[k]) / (b[i] - b[k]);
            w *= 1.0 - q;
        }
        let prefactor = if i == m - 1 {
            endpoint_up
        } else {
            // q(1-q)^{i-j-1}
            let mut p = q;
            for _ in (j + 1)..i {
                p *= 1.0 - q;
            }
            p
        };
        probs[i] = prefactor * inner;
    }

    Ok(probs)
}

/// Maximum `m` accepted by the brute-force oracle (2^{m-2} subsets).
pub const BRUTEFORCE_MAX_LEVELS: usize = 20;

/// Oracle PMF by enumerating every subset of interior levels.
pub fn rqm_pmf_bruteforce(x: f64, params: &RqmParams) -> Result<Pmf> {
    if !x.is_finite() || x.abs() > params.c() {
        return Err(Error::DomainError {
            x,
            lo: -params.c(),
            hi: params.c(),
        });
    }
    let m = params.m();
    if m > BRUTEFORCE_MAX_LEVELS {
        return Err(Error::CapacityExceeded {
            m,
            max: BRUTEFORCE_MAX_LEVELS,
        });
    }
    let q = params.q();
    let grid = params.grid();
    let b = grid.levels();
    let interior = m - 2;

    let mut probs = vec![0.0; m];
    for mask in 0u32..(1u32 << interior) {
        let picked = mask.count_ones() as i32;
        let weight = q.powi(picked) * (1.0 - q).powi(interior as i32 - picked);

        // Bracket x within {0} ∪ S ∪ {m-1}; a level exactly equal to x is
        // the lower bracket.
        let mut lo = 0usize;
        let mut hi = m - 1;
        #[allow(clippy::needless_range_loop)] // idx doubles as the bit position in mask
        for idx in 1..=interior {
            if mask & (1 << (idx - 1)) != 0 {
                if b[idx] <= x {
                    lo = idx;
                } else {
                    hi = idx;
                    break;
                }
            }
        }
        let p_up = (x - b[lo]) / (b[hi] - b[lo]);
        probs[hi] += weight * p_up;
        probs[lo] += weight * (1.0 - p_up);
    }
    Pmf::with_tolerance(probs, 1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_params() -> Vec<(RqmParams, f64)> {
        let c = 1.5;
        let mut out = Vec::new();
        for m in 2..=12 {
            for &q in &[0.1, 0.42, 0.5, 0.9] {
                for &ratio in &[0.25, 0.66, 1.0, 2.0] {
                    out.push((RqmParams::new(c, ratio * c, m, q).unwrap(), c));
                }
            }
        }
        out
    }

    #[test]
    fn two_levels_closed_form() {
        let p = RqmParams::new(1.0, 1.0, 2, 0.3).unwrap();
        for &x in &[-1.0, -0.4, 0.0, 0.7, 1.0] {
            let pmf = rqm_pmf(x, &p).unwrap();
            let x_max = 2.0;
            assert!((pmf.probs()[0] - (x_max - x) / (2.0 * x_max)).abs() < 1e-14);
            assert!((pmf.probs()[1] - (x + x_max) / (2.0 * x_max)).abs() < 1e-14);
            let bf = rqm_pmf_bruteforce(x, &p).unwrap();
            assert!(pmf.tv_distance(&bf).unwrap() < 1e-14);
        }
    }

    #[test]
    fn fig1b_config_matches_bruteforce() {
        let p = RqmParams::new(1.5, 1.5, 16, 0.42).unwrap();
        let cf = rqm_pmf(1.5, &p).unwrap();
        let bf = rqm_pmf_bruteforce(1.5, &p).unwrap();
        for (a, b) in cf.probs().iter().zip(bf.probs()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn three_level_hand_enumeration() {
        // m=3, q=0.5, x=0, delta=c: subsets are {} (weight 0.5, rounding
        // between the endpoints, 0.25 each) and {1} (weight 0.5, x sits on
        // the surviving middle level, so it is returned with certainty).
        let p = RqmParams::new(1.0, 1.0, 3, 0.5).unwrap();
        let bf = rqm_pmf_bruteforce(0.0, &p).unwrap();
        assert!((bf.probs()[0] - 0.25).abs() < 1e-14);
        assert!((bf.probs()[1] - 0.5).abs() < 1e-14);
        assert!((bf.probs()[2] - 0.25).abs() < 1e-14);
        let cf = rqm_pmf(0.0, &p).unwrap();
        assert!(cf.tv_distance(&bf).unwrap() < 1e-14);
    }

    #[test]
    fn unbiasedness_over_sweep() {
        for (params, c) in sweep_params() {
            let grid = params.grid();
            for step in 0..21 {
                let x = -c + 2.0 * c * step as f64 / 20.0;
                let pmf = rqm_pmf(x, &params).unwrap();
                let mean = pmf.mean_on_grid(&grid).unwrap();
                assert!(
                    (mean - x).abs() < 1e-10,
                    "bias {} at x={x}, m={}, q={}",
                    mean - x,
                    params.m(),
                    params.q()
                );
            }
        }
    }

    #[test]
    fn full_support_over_sweep() {
        for (params, c) in sweep_params() {
            for step in 0..21 {
                let x = -c + 2.0 * c * step as f64 / 20.0;
                let pmf = rqm_pmf(x, &params).unwrap();
                assert!(
                    pmf.min_entry() > 0.0,
                    "zero entry at x={x}, m={}, q={}, delta={}",
                    params.m(),
                    params.q(),
                    params.delta()
                );
            }
        }
    }

    #[test]
    fn mirror_symmetry() {
        for (params, c) in sweep_params() {
            let m = params.m();
            for step in 0..11 {
                let x = -c + 2.0 * c * step as f64 / 10.0;
                let p_pos = rqm_pmf(x, &params).unwrap();
                let p_neg = rqm_pmf(-x, &params).unwrap();
                for i in 0..m {
                    assert!(
                        (p_neg.probs()[i] - p_pos.probs()[m - 1 - i]).abs() < 1e-12,
                        "asymmetry at x={x}, i={i}, m={m}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_on_grid_level() {
        // x exactly on an interior grid level; the empty upper sum at
        // j=m-2 and the degenerate rounding factors must still agree with
        // the oracle.
        let p = RqmParams::new(2.0, 1.0, 7, 0.42).unwrap();
        let grid = p.grid();
        for i in 1..6 {
            let x = grid.level(i);
            if x.abs() > p.c() {
                continue;
            }
            let cf = rqm_pmf(x, &p).unwrap();
            let bf = rqm_pmf_bruteforce(x, &p).unwrap();
            for (a, b) in cf.probs().iter().zip(bf.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn x_at_clipping_bound_small_delta() {
        // x = c with small delta puts j at m-2 and empties the upper sum.
        let p = RqmParams::new(1.5, 0.375, 16, 0.42).unwrap();
        for &x in &[1.5, -1.5] {
            let cf = rqm_pmf(x, &p).unwrap();
            let bf = rqm_pmf_bruteforce(x, &p).unwrap();
            for (a, b) in cf.probs().iter().zip(bf.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bruteforce_capacity() {
        let p = RqmParams::new(1.0, 1.0, 21, 0.5).unwrap();
        assert!(matches!(
            rqm_pmf_bruteforce(0.0, &p),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn injected_fault_disagrees_with_oracle() {
        let p = RqmParams::new(1.5, 1.5, 8, 0.42).unwrap();
        let faulted = rqm_pmf_with_injected_fault(0.7, &p).unwrap();
        let bf = rqm_pmf_bruteforce(0.7, &p).unwrap();
        let max_diff = faulted
            .iter()
            .zip(bf.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6);
    }
}
