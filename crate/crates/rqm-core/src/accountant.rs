//! Renyi divergence accounting for single devices and secure-aggregated
//! sums, the analytic privacy bound, and the parameter sweeps.

use crate::distribution::rqm_pmf;
use crate::error::{Error, Result};
use crate::mechanism::RqmParams;
use crate::pbm::{pbm_pmf, PbmParams};
use crate::pmf::{kahan_sum_iter, Pmf};
use crate::rng::{RngStream, StreamKey};
use serde::{Deserialize, Serialize};

/// Renyi order: finite `alpha > 1`, or the max-divergence limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Alpha {
    Finite(f64),
    Infinity,
}

impl Alpha {
    pub fn validate(&self) -> Result<()> {
        match self {
            Alpha::Finite(a) if !a.is_finite() || *a <= 1.0 => Err(Error::InvalidParameter(
                format!("Renyi order must be > 1 and finite, got {a}"),
            )),
            _ => Ok(()),
        }
    }
}

// Entries below this are treated as zero for absolute-continuity purposes;
// a positive p against such a q is reported as an explicit infinity rather
// than left to overflow.
const PROB_FLOOR: f64 = 1e-300;

/// Renyi divergence of order `alpha > 1`:
/// `(1/(alpha-1)) * log sum_i p_i^alpha q_i^(1-alpha)`.
///
/// Evaluated in log space with a max shift so orders up to 1e4 neither
/// overflow nor underflow. Returns `f64::INFINITY` when `p` puts mass where
/// `q` has (numerically) none.
pub fn renyi_divergence(p: &Pmf, q: &Pmf, alpha: f64) -> Result<f64> {
    Alpha::Finite(alpha).validate()?;
    if p.support_size() != q.support_size() {
        return Err(Error::SupportMismatch {
            left: p.support_size(),
            right: q.support_size(),
        });
    }
    let mut exponents = Vec::with_capacity(p.support_size());
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi <= PROB_FLOOR {
            continue;
        }
        if qi <= PROB_FLOOR {
            return Ok(f64::INFINITY);
        }
        exponents.push(alpha * pi.ln() - (alpha - 1.0) * qi.ln());
    }
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + kahan_sum_iter(exponents.iter().map(|e| (e - max).exp())).ln();
    Ok(lse / (alpha - 1.0))
}

/// Max divergence `D_inf`: the largest log probability ratio over the
/// support of `p`.
pub fn max_divergence(p: &Pmf, q: &Pmf) -> Result<f64> {
    if p.support_size() != q.support_size() {
        return Err(Error::SupportMismatch {
            left: p.support_size(),
            right: q.support_size(),
        });
    }
    let mut sup = f64::NEG_INFINITY;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi <= PROB_FLOOR {
            continue;
        }
        if qi <= PROB_FLOOR {
            return Ok(f64::INFINITY);
        }
        sup = sup.max((pi / qi).ln());
    }
    Ok(sup)
}

pub fn divergence(p: &Pmf, q: &Pmf, alpha: Alpha) -> Result<f64> {
    match alpha {
        Alpha::Finite(a) => renyi_divergence(p, q, a),
        Alpha::Infinity => max_divergence(p, q),
    }
}

/// Exact distribution of the sum of independent draws, one per PMF, via
/// iterated discrete convolution with compensated summation.
pub fn convolve_sum(pmfs: &[Pmf]) -> Result<Pmf> {
    let first = pmfs
        .first()
        .ok_or_else(|| Error::InvalidParameter("convolve_sum of empty list".into()))?;
    let mut acc: Vec<f64> = first.probs().to_vec();
    for pmf in &pmfs[1..] {
        let b = pmf.probs();
        let mut next = vec![0.0; acc.len() + b.len() - 1];
        let mut comp = vec![0.0; next.len()];
        for (i, &ai) in acc.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                let x = ai * bj - comp[i + j];
                let t = next[i + j] + x;
                comp[i + j] = (t - next[i + j]) - x;
                next[i + j] = t;
            }
        }
        acc = next;
    }
    Pmf::with_tolerance(acc, 1e-10 * pmfs.len() as f64)
}

/// Mechanism choice for a divergence query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mechanism {
    Rqm(RqmParams),
    Pbm(PbmParams),
}

impl Mechanism {
    pub fn clipping_bound(&self) -> f64 {
        match self {
            Mechanism::Rqm(p) => p.c(),
            Mechanism::Pbm(p) => p.c(),
        }
    }

    pub fn scalar_pmf(&self, x: f64) -> Result<Pmf> {
        match self {
            Mechanism::Rqm(p) => rqm_pmf(x, p),
            Mechanism::Pbm(p) => pbm_pmf(x, p),
        }
    }
}

/// A divergence query between the aggregated outputs on two neighboring
/// input vectors.
#[derive(Debug, Clone)]
pub struct DivergenceQuery {
    pub alpha: Alpha,
    pub mechanism: Mechanism,
    pub inputs: Vec<f64>,
    pub inputs_prime: Vec<f64>,
}

impl DivergenceQuery {
    fn validate(&self) -> Result<()> {
        self.alpha.validate()?;
        if self.inputs.is_empty() || self.inputs.len() != self.inputs_prime.len() {
            return Err(Error::InvalidParameter(format!(
                "input vectors must be nonempty and equal length, got {} and {}",
                self.inputs.len(),
                self.inputs_prime.len()
            )));
        }
        let c = self.mechanism.clipping_bound();
        for &x in self.inputs.iter().chain(&self.inputs_prime) {
            if !x.is_finite() || x.abs() > c {
                return Err(Error::DomainError { x, lo: -c, hi: c });
            }
        }
        let differing = self
            .inputs
            .iter()
            .zip(&self.inputs_prime)
            .filter(|(a, b)| a != b)
            .count();
        if differing != 1 && self.inputs.len() > 1 {
            return Err(Error::InvalidParameter(format!(
                "neighboring inputs must differ in exactly one entry, found {differing}"
            )));
        }
        Ok(())
    }
}

/// Renyi divergence between the distributions of the secure-aggregated
/// sums on the query's neighboring inputs.
pub fn aggregate_divergence(query: &DivergenceQuery) -> Result<f64> {
    query.validate()?;
    let pmfs: Vec<Pmf> = query
        .inputs
        .iter()
        .map(|&x| query.mechanism.scalar_pmf(x))
        .collect::<Result<_>>()?;
    let pmfs_prime: Vec<Pmf> = query
        .inputs_prime
        .iter()
        .map(|&x| query.mechanism.scalar_pmf(x))
        .collect::<Result<_>>()?;
    let p = convolve_sum(&pmfs)?;
    let q = convolve_sum(&pmfs_prime)?;
    divergence(&p, &q, query.alpha)
}

/// Worst-case neighboring inputs: device 1 flips between `c` and `-c`;
/// among the remaining `n - 1` devices exactly `split_k` sit at `c` and
/// the rest at `-c`, identically in both vectors. The sum law depends only
/// on these counts, so `split_k` fully determines the query.
pub fn worst_case_neighbors(n: usize, c: f64, split_k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one device".into()));
    }
    if split_k > n - 1 {
        return Err(Error::InvalidParameter(format!(
            "split_k = {split_k} exceeds n - 1 = {}",
            n - 1
        )));
    }
    let mut x = vec![c];
    let mut x_prime = vec![-c];
    for i in 0..n - 1 {
        let v = if i < split_k { c } else { -c };
        x.push(v);
        x_prime.push(v);
    }
    Ok((x, x_prime))
}

/// Balanced default split for [`worst_case_neighbors`].
pub fn balanced_split(n: usize) -> usize {
    (n.saturating_sub(1)) / 2
}

/// Seeded random +-c assignment for devices 2..n, mirroring the sampling
/// protocol behind the published sweeps.
pub fn worst_case_neighbors_random(n: usize, c: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one device".into()));
    }
    let mut rng = RngStream::from_key(StreamKey::root(seed, 0xACC0));
    let mut x = vec![c];
    let mut x_prime = vec![-c];
    for _ in 0..n - 1 {
        let v = if rng.bernoulli(0.5) { c } else { -c };
        x.push(v);
        x_prime.push(v);
    }
    Ok((x, x_prime))
}

/// Analytic privacy bound for the randomized quantization mechanism:
/// `log(2 (1-q)^2 (1 + c/delta)) + m * log(1/(1-q))`.
pub fn theorem1_bound(params: &RqmParams) -> f64 {
    let q = params.q();
    (2.0 * (1.0 - q) * (1.0 - q) * (1.0 + params.c() / params.delta())).ln()
        + params.m() as f64 * (1.0 / (1.0 - q)).ln()
}

/// Sweep axis: which quantity varies along the rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Vary the device count at a fixed order.
    DeviceCount { n_values: Vec<usize>, alpha: Alpha },
    /// Vary the order at a fixed device count.
    Order { alphas: Vec<f64>, n: usize },
    /// Vary the differing device's input at n = 1, against a fixed `-c`.
    Input { xs: Vec<f64>, alpha: Alpha },
}

/// Specification of a two-mechanism divergence sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub rqm: RqmParams,
    pub pbm: PbmParams,
    pub axis: SweepAxis,
    /// None => balanced deterministic split; Some(seed) => random +-c
    /// assignment reproducing the sampling protocol.
    pub neighbor_seed: Option<u64>,
}

/// One row of a sweep table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub eps_rqm: f64,
    pub eps_pbm: f64,
}

fn neighbors_for(spec: &SweepSpec, n: usize, c: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    match spec.neighbor_seed {
        Some(seed) => worst_case_neighbors_random(n, c, seed),
        None => worst_case_neighbors(n, c, balanced_split(n)),
    }
}

fn row(spec: &SweepSpec, n: usize, alpha: Alpha, axis_value: f64) -> Result<SweepRow> {
    let (x_r, xp_r) = neighbors_for(spec, n, spec.rqm.c())?;
    let (x_p, xp_p) = neighbors_for(spec, n, spec.pbm.c())?;
    let eps_rqm = aggregate_divergence(&DivergenceQuery {
        alpha,
        mechanism: Mechanism::Rqm(spec.rqm),
        inputs: x_r,
        inputs_prime: xp_r,
    })?;
    let eps_pbm = aggregate_divergence(&DivergenceQuery {
        alpha,
        mechanism: Mechanism::Pbm(spec.pbm),
        inputs: x_p,
        inputs_prime: xp_p,
    })?;
    Ok(SweepRow {
        axis_value,
        eps_rqm,
        eps_pbm,
    })
}

/// Evaluates the sweep. Rows are independent and deterministic given the
/// spec; any execution order yields the same table.
pub fn divergence_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    match &spec.axis {
        SweepAxis::DeviceCount { n_values, alpha } => {
            alpha.validate()?;
            if n_values.is_empty() || n_values.contains(&0) {
                return Err(Error::InvalidParameter(
                    "device-count axis must be nonempty with n >= 1".into(),
                ));
            }
            n_values
                .iter()
                .map(|&n| row(spec, n, *alpha, n as f64))
                .collect()
        }
        SweepAxis::Order { alphas, n } => {
            if alphas.is_empty() || *n == 0 {
                return Err(Error::InvalidParameter(
                    "order axis must be nonempty with n >= 1".into(),
                ));
            }
            alphas
                .iter()
                .map(|&a| row(spec, *n, Alpha::Finite(a), a))
                .collect()
        }
        SweepAxis::Input { xs, alpha } => {
            alpha.validate()?;
            if xs.is_empty() {
                return Err(Error::InvalidParameter(
                    "input axis must be nonempty".into(),
                ));
            }
            xs.iter()
                .map(|&x| {
                    let eps_rqm = divergence(
                        &rqm_pmf(x, &spec.rqm)?,
                        &rqm_pmf(-spec.rqm.c(), &spec.rqm)?,
                        *alpha,
                    )?;
                    let eps_pbm = divergence(
                        &pbm_pmf(x, &spec.pbm)?,
                        &pbm_pmf(-spec.pbm.c(), &spec.pbm)?,
                        *alpha,
                    )?;
                    Ok(SweepRow {
                        axis_value: x,
                        eps_rqm,
                        eps_pbm,
                    })
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rqm16() -> RqmParams {
        RqmParams::new(1.5, 1.5, 16, 0.42).unwrap()
    }

    #[test]
    fn divergence_of_identical_is_zero() {
        let p = rqm_pmf(0.7, &rqm16()).unwrap();
        for &a in &[1.5, 2.0, 10.0, 1000.0] {
            let d = renyi_divergence(&p, &p, a).unwrap();
            assert!(d.abs() < 1e-12, "alpha={a}, d={d}");
        }
        assert!(max_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_point_hand_value() {
        let p = Pmf::new(vec![0.75, 0.25]).unwrap();
        let q = Pmf::new(vec![0.25, 0.75]).unwrap();
        let d = renyi_divergence(&p, &q, 2.0).unwrap();
        assert!((d - (7.0f64 / 3.0).ln()).abs() < 1e-12);
        let p2 = Pmf::new(vec![0.9, 0.1]).unwrap();
        let q2 = Pmf::new(vec![0.5, 0.5]).unwrap();
        assert!((max_divergence(&p2, &q2).unwrap() - 1.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn absolute_continuity_violation_is_infinite() {
        let p = Pmf::new(vec![0.5, 0.5]).unwrap();
        let q = Pmf::new(vec![1.0, 0.0]).unwrap();
        assert!(renyi_divergence(&p, &q, 2.0).unwrap().is_infinite());
        assert!(max_divergence(&p, &q).unwrap().is_infinite());
    }

    #[test]
    fn large_alpha_approaches_max_divergence() {
        let params = rqm16();
        let p = rqm_pmf(1.5, &params).unwrap();
        let q = rqm_pmf(-1.5, &params).unwrap();
        let d_inf = max_divergence(&p, &q).unwrap();
        let d_big = renyi_divergence(&p, &q, 1e4).unwrap();
        assert!((d_big - d_inf).abs() < 1e-3, "{d_big} vs {d_inf}");
        assert!(d_big <= d_inf + 1e-10);
    }

    #[test]
    fn monotone_in_alpha() {
        let params = rqm16();
        let p = rqm_pmf(1.2, &params).unwrap();
        let q = rqm_pmf(-0.8, &params).unwrap();
        let mut prev = 0.0;
        for &a in &[1.5, 2.0, 10.0, 100.0, 1000.0] {
            let d = renyi_divergence(&p, &q, a).unwrap();
            assert!(d >= prev - 1e-10);
            prev = d;
        }
        assert!(max_divergence(&p, &q).unwrap() >= prev - 1e-10);
    }

    #[test]
    fn convolution_basics() {
        let params = rqm16();
        let p = rqm_pmf(0.3, &params).unwrap();
        let one = convolve_sum(std::slice::from_ref(&p)).unwrap();
        assert!(one.tv_distance(&p).unwrap() < 1e-15);

        let a = Pmf::point_mass(3, 6).unwrap();
        let b = Pmf::point_mass(4, 6).unwrap();
        let s = convolve_sum(&[a, b]).unwrap();
        assert_eq!(s.probs()[7], 1.0);

        let u = Pmf::new(vec![0.5, 0.5]).unwrap();
        let s3 = convolve_sum(&[u.clone(), u.clone(), u]).unwrap();
        let expect = [0.125, 0.375, 0.375, 0.125];
        for (got, want) in s3.probs().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }

        assert!(convolve_sum(&[]).is_err());
    }

    #[test]
    fn theorem1_bound_values_and_monotonicity() {
        let p = rqm16();
        let expected = (2.0 * 0.58f64 * 0.58 * 2.0).ln() + 16.0 * (1.0 / 0.58f64).ln();
        assert!((theorem1_bound(&p) - expected).abs() < 1e-12);
        assert!((theorem1_bound(&p) - 9.0125).abs() < 1e-3);

        let wider = RqmParams::new(1.5, 3.0, 16, 0.42).unwrap();
        assert!(theorem1_bound(&wider) < theorem1_bound(&p));
        let more_levels = RqmParams::new(1.5, 1.5, 32, 0.42).unwrap();
        assert!(theorem1_bound(&more_levels) > theorem1_bound(&p));
    }

    #[test]
    fn bound_dominates_numeric_max_divergence() {
        let params = rqm16();
        let p = rqm_pmf(1.5, &params).unwrap();
        let q = rqm_pmf(-1.5, &params).unwrap();
        let d = max_divergence(&p, &q).unwrap();
        assert!(d <= theorem1_bound(&params) + 1e-9);
        // And the finite-order divergence sits strictly below the bound.
        let d2 = renyi_divergence(&p, &q, 2.0).unwrap();
        assert!(d2 < theorem1_bound(&params));
    }

    #[test]
    fn worst_case_neighbor_shapes() {
        let (x, xp) = worst_case_neighbors(1, 1.5, 0).unwrap();
        assert_eq!(x, vec![1.5]);
        assert_eq!(xp, vec![-1.5]);
        let (x, xp) = worst_case_neighbors(3, 1.5, 1).unwrap();
        assert_eq!(x, vec![1.5, 1.5, -1.5]);
        assert_eq!(xp, vec![-1.5, 1.5, -1.5]);
        assert!(worst_case_neighbors(3, 1.5, 3).is_err());
        assert!(worst_case_neighbors(0, 1.5, 0).is_err());
    }

    #[test]
    fn neighbor_permutation_invariance() {
        // Divergence depends only on the multiset of the shared inputs.
        let params = rqm16();
        let q = |inputs: Vec<f64>, prime: Vec<f64>| {
            aggregate_divergence(&DivergenceQuery {
                alpha: Alpha::Finite(2.0),
                mechanism: Mechanism::Rqm(params),
                inputs,
                inputs_prime: prime,
            })
            .unwrap()
        };
        let a = q(vec![1.5, 1.5, -1.5], vec![-1.5, 1.5, -1.5]);
        let b = q(vec![1.5, -1.5, 1.5], vec![-1.5, -1.5, 1.5]);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn single_device_reduction() {
        let params = rqm16();
        let d = aggregate_divergence(&DivergenceQuery {
            alpha: Alpha::Infinity,
            mechanism: Mechanism::Rqm(params),
            inputs: vec![1.0],
            inputs_prime: vec![-0.5],
        })
        .unwrap();
        let direct = max_divergence(
            &rqm_pmf(1.0, &params).unwrap(),
            &rqm_pmf(-0.5, &params).unwrap(),
        )
        .unwrap();
        assert!((d - direct).abs() < 1e-12);
    }

    #[test]
    fn query_validation() {
        let params = rqm16();
        let bad = DivergenceQuery {
            alpha: Alpha::Finite(2.0),
            mechanism: Mechanism::Rqm(params),
            inputs: vec![1.0, 0.5],
            inputs_prime: vec![-1.0, -0.5],
        };
        assert!(aggregate_divergence(&bad).is_err());
        let out_of_range = DivergenceQuery {
            alpha: Alpha::Finite(2.0),
            mechanism: Mechanism::Rqm(params),
            inputs: vec![2.0],
            inputs_prime: vec![-1.0],
        };
        assert!(aggregate_divergence(&out_of_range).is_err());
    }

    #[test]
    fn sweep_determinism_and_ordering() {
        let spec = SweepSpec {
            rqm: rqm16(),
            pbm: PbmParams::new(1.5, 0.25, 15).unwrap(),
            axis: SweepAxis::DeviceCount {
                n_values: (1..=5).collect(),
                alpha: Alpha::Finite(2.0),
            },
            neighbor_seed: None,
        };
        let t1 = divergence_sweep(&spec).unwrap();
        let t2 = divergence_sweep(&spec).unwrap();
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.eps_rqm.to_bits(), b.eps_rqm.to_bits());
            assert_eq!(a.eps_pbm.to_bits(), b.eps_pbm.to_bits());
        }
        for r in &t1 {
            assert!(r.eps_rqm < r.eps_pbm, "row {r:?}");
        }
    }
}
