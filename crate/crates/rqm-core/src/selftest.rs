//! Reduced-scale invariant suites runnable from the CLI.
//!
//! Each suite returns a pass/fail line and, on failure, the first
//! counterexample encountered. The fault-injection knob reroutes the
//! closed-form evaluation through a deliberately broken variant and is the
//! negative control: a healthy build must fail under it.

use crate::accountant::{max_divergence, renyi_divergence, theorem1_bound};
use crate::distribution::{rqm_pmf, rqm_pmf_bruteforce, rqm_pmf_with_injected_fault};
use crate::mechanism::RqmParams;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

fn sweep() -> Vec<RqmParams> {
    let c = 1.5;
    let mut out = Vec::new();
    for &m in &[2usize, 3, 5, 8, 12] {
        for &q in &[0.1, 0.42, 0.9] {
            for &ratio in &[0.25, 1.0, 2.0] {
                out.push(RqmParams::new(c, ratio * c, m, q).unwrap());
            }
        }
    }
    out
}

fn inputs(c: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| -c + 2.0 * c * i as f64 / (count - 1) as f64)
        .collect()
}

fn oracle_equivalence(inject_fault: bool) -> SuiteResult {
    for params in sweep() {
        for &x in &inputs(params.c(), 11) {
            let closed: Vec<f64> = if inject_fault {
                match rqm_pmf_with_injected_fault(x, &params) {
                    Ok(v) => v,
                    Err(e) => {
                        return SuiteResult {
                            name: "oracle-equivalence",
                            passed: false,
                            detail: format!(
                                "closed form failed at x={x}, m={}, q={}: {e}",
                                params.m(),
                                params.q()
                            ),
                        }
                    }
                }
            } else {
                match rqm_pmf(x, &params) {
                    Ok(p) => p.probs().to_vec(),
                    Err(e) => {
                        return SuiteResult {
                            name: "oracle-equivalence",
                            passed: false,
                            detail: format!(
                                "closed form failed at x={x}, m={}, q={}: {e}",
                                params.m(),
                                params.q()
                            ),
                        }
                    }
                }
            };
            let oracle = rqm_pmf_bruteforce(x, &params).unwrap();
            for (i, (a, b)) in closed.iter().zip(oracle.probs()).enumerate() {
                if (a - b).abs() > 1e-12 {
                    return SuiteResult {
                        name: "oracle-equivalence",
                        passed: false,
                        detail: format!(
                            "counterexample: x={x}, m={}, q={}, delta={}, index {i}: closed {a} vs oracle {b}",
                            params.m(),
                            params.q(),
                            params.delta()
                        ),
                    };
                }
            }
        }
    }
    SuiteResult {
        name: "oracle-equivalence",
        passed: true,
        detail: "closed form matches brute force to 1e-12".into(),
    }
}

fn unbiasedness() -> SuiteResult {
    for params in sweep() {
        let grid = params.grid();
        for &x in &inputs(params.c(), 11) {
            let mean = rqm_pmf(x, &params).unwrap().mean_on_grid(&grid).unwrap();
            if (mean - x).abs() > 1e-10 {
                return SuiteResult {
                    name: "unbiasedness",
                    passed: false,
                    detail: format!(
                        "counterexample: x={x}, m={}, q={}: mean {mean}",
                        params.m(),
                        params.q()
                    ),
                };
            }
        }
    }
    SuiteResult {
        name: "unbiasedness",
        passed: true,
        detail: "pmf mean equals input to 1e-10".into(),
    }
}

fn monotonicity() -> SuiteResult {
    let orders = [1.5, 2.0, 10.0, 100.0, 1000.0];
    for params in sweep() {
        let p = rqm_pmf(params.c(), &params).unwrap();
        let q = rqm_pmf(-params.c(), &params).unwrap();
        let mut prev = -1e-10;
        for &a in &orders {
            let d = renyi_divergence(&p, &q, a).unwrap();
            if d < prev - 1e-10 {
                return SuiteResult {
                    name: "monotonicity",
                    passed: false,
                    detail: format!(
                        "counterexample: m={}, q={}: D_{a} = {d} < previous {prev}",
                        params.m(),
                        params.q()
                    ),
                };
            }
            prev = d;
        }
        let d_inf = max_divergence(&p, &q).unwrap();
        if d_inf < prev - 1e-10 {
            return SuiteResult {
                name: "monotonicity",
                passed: false,
                detail: format!(
                    "counterexample: m={}, q={}: D_inf = {d_inf} < D_1000 = {prev}",
                    params.m(),
                    params.q()
                ),
            };
        }
    }
    SuiteResult {
        name: "monotonicity",
        passed: true,
        detail: "divergence nondecreasing in the order".into(),
    }
}

fn bound_domination() -> SuiteResult {
    for params in sweep() {
        let bound = theorem1_bound(&params);
        let xs = inputs(params.c(), 7);
        for &x in &xs {
            let p = rqm_pmf(x, &params).unwrap();
            for &xp in &xs {
                let q = rqm_pmf(xp, &params).unwrap();
                let d = max_divergence(&p, &q).unwrap();
                if d > bound + 1e-9 {
                    return SuiteResult {
                        name: "bound-domination",
                        passed: false,
                        detail: format!(
                            "counterexample: x={x}, x'={xp}, m={}, q={}, delta={}: D_inf {d} > bound {bound}",
                            params.m(),
                            params.q(),
                            params.delta()
                        ),
                    };
                }
            }
        }
    }
    SuiteResult {
        name: "bound-domination",
        passed: true,
        detail: "max divergence dominated by the analytic bound".into(),
    }
}

/// Runs all suites. With `inject_fault` the oracle-equivalence suite uses
/// the deliberately broken closed form and is expected to fail.
pub fn run_selftest(inject_fault: bool) -> SelftestReport {
    SelftestReport {
        suites: vec![
            oracle_equivalence(inject_fault),
            unbiasedness(),
            monotonicity(),
            bound_domination(),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_build_passes() {
        let report = run_selftest(false);
        for s in &report.suites {
            assert!(s.passed, "{}: {}", s.name, s.detail);
        }
    }

    #[test]
    fn negative_control_fails() {
        let report = run_selftest(true);
        assert!(!report.all_passed());
        let oracle = report
            .suites
            .iter()
            .find(|s| s.name == "oracle-equivalence")
            .unwrap();
        assert!(!oracle.passed);
        assert!(oracle.detail.contains("counterexample") || oracle.detail.contains("failed"));
    }
}
