//! Poisson Binomial Mechanism baseline.
//!
//! Encodes a clipped scalar into the success probability
//! `p(x) = 1/2 + theta * x / c` of a binomial with `trials` draws and
//! releases the count. Parameterization note: the comparison baseline is
//! defined here as this symmetric binomial form; `theta <= 1/2` keeps
//! `p(x)` strictly inside `(0, 1)` for `|x| <= c`.
//!
//! For equal-communication comparisons against an `m`-level quantizer,
//! `trials = m - 1` matches output support cardinality (`{0..m-1}`); a
//! caller may instead choose `trials = m` for support `{0..m}`.

use crate::error::{Error, Result};
use crate::pmf::Pmf;
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbmParams {
    c: f64,
    theta: f64,
    trials: usize,
}

impl PbmParams {
    pub fn new(c: f64, theta: f64, trials: usize) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "clipping bound c must be positive and finite, got {c}"
            )));
        }
        if !(theta > 0.0 && theta <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "theta must lie in (0, 1/2], got {theta}"
            )));
        }
        if trials == 0 {
            return Err(Error::InvalidParameter(
                "need at least one binomial trial".into(),
            ));
        }
        Ok(Self { c, theta, trials })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    /// Output support size, `trials + 1`.
    pub fn support_size(&self) -> usize {
        self.trials + 1
    }

    /// Success probability for input `x`.
    pub fn success_prob(&self, x: f64) -> Result<f64> {
        if !x.is_finite() || x.abs() > self.c {
            return Err(Error::DomainError {
                x,
                lo: -self.c,
                hi: self.c,
            });
        }
        Ok(0.5 + self.theta * x / self.c)
    }
}

/// Exact binomial PMF over `{0..trials}` via the ascending ratio
/// recurrence `p_{k+1} = p_k * (n-k)/(k+1) * p/(1-p)`.
pub fn pbm_pmf(x: f64, params: &PbmParams) -> Result<Pmf> {
    let p = params.success_prob(x)?;
    let n = params.trials();
    let ratio = p / (1.0 - p);
    let mut probs = Vec::with_capacity(n + 1);
    let mut cur = (1.0 - p).powi(n as i32);
    probs.push(cur);
    for k in 0..n {
        cur *= (n - k) as f64 / (k + 1) as f64 * ratio;
        probs.push(cur);
    }
    Pmf::with_tolerance(probs, 1e-10)
}

/// Draws `trials` Bernoulli variates and returns the success count.
pub fn pbm_sample(x: f64, params: &PbmParams, rng: &mut RngStream) -> Result<usize> {
    let p = params.success_prob(x)?;
    Ok((0..params.trials()).filter(|_| rng.bernoulli(p)).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn validation() {
        assert!(PbmParams::new(1.0, 0.0, 16).is_err());
        assert!(PbmParams::new(1.0, 0.6, 16).is_err());
        assert!(PbmParams::new(1.0, 0.25, 0).is_err());
        assert!(PbmParams::new(-1.0, 0.25, 16).is_err());
        assert!(PbmParams::new(1.0, 0.5, 1).is_ok());
    }

    #[test]
    fn tiny_theta_is_input_independent() {
        let p = PbmParams::new(1.0, 1e-12, 8).unwrap();
        let a = pbm_pmf(-1.0, &p).unwrap();
        let b = pbm_pmf(1.0, &p).unwrap();
        assert!(a.tv_distance(&b).unwrap() < 1e-10);
        // And equals Binomial(8, 1/2).
        let fair = pbm_pmf(0.0, &p).unwrap();
        for k in 0..=8usize {
            let coeff = (0..k).fold(1.0, |acc, i| acc * (8 - i) as f64 / (i + 1) as f64);
            assert!((fair.probs()[k] - coeff * 0.5f64.powi(8)).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_input_symmetric() {
        let p = PbmParams::new(1.5, 0.25, 16).unwrap();
        let pmf = pbm_pmf(0.0, &p).unwrap();
        for i in 0..=16 {
            assert!((pmf.probs()[i] - pmf.probs()[16 - i]).abs() < 1e-14);
        }
    }

    #[test]
    fn extreme_input_matches_loggamma() {
        // Binomial(16, 0.75) at x = c, verified against an independent
        // log-gamma evaluation; mode at i = 12.
        let p = PbmParams::new(1.5, 0.25, 16).unwrap();
        let pmf = pbm_pmf(1.5, &p).unwrap();
        let mode = pmf
            .probs()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(mode, 12);
        use statrs::function::gamma::ln_gamma;
        for k in 0..=16usize {
            let lg = ln_gamma(17.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((16 - k) as f64 + 1.0)
                + k as f64 * 0.75f64.ln()
                + (16 - k) as f64 * 0.25f64.ln();
            assert!((pmf.probs()[k] - lg.exp()).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn mean_linearity() {
        let p = PbmParams::new(1.5, 0.25, 16).unwrap();
        for &x in &[-1.5, -0.3, 0.0, 0.9, 1.5] {
            let pmf = pbm_pmf(x, &p).unwrap();
            let expected = 16.0 * (0.5 + 0.25 * x / 1.5);
            assert!((pmf.mean_index() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn sampler_mean_and_single_trial() {
        let p = PbmParams::new(1.5, 0.25, 16).unwrap();
        let mut rng = RngStream::from_key(StreamKey::root(11, 0));
        let n = 100_000;
        let x = 0.9;
        let sum: usize = (0..n).map(|_| pbm_sample(x, &p, &mut rng).unwrap()).sum();
        let mean = sum as f64 / n as f64;
        let expected = 16.0 * (0.5 + 0.25 * x / 1.5);
        assert!((mean - expected).abs() < 0.03, "mean = {mean}");

        let p1 = PbmParams::new(1.0, 0.5, 1).unwrap();
        for _ in 0..100 {
            let z = pbm_sample(0.2, &p1, &mut rng).unwrap();
            assert!(z <= 1);
        }
    }
}
