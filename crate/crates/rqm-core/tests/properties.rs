//! Property tests over randomized parameters.

use proptest::prelude::*;
use rqm_core::accountant::{convolve_sum, max_divergence, renyi_divergence};
use rqm_core::distribution::{rqm_pmf, rqm_pmf_bruteforce};
use rqm_core::mechanism::{clip_coordinatewise, RqmParams};
use rqm_core::pbm::{pbm_pmf, PbmParams};
use rqm_core::pmf::Pmf;

fn rqm_params() -> impl Strategy<Value = RqmParams> {
    (0.1f64..5.0, 0.05f64..3.0, 2usize..=12, 0.05f64..0.95)
        .prop_map(|(c, delta, m, q)| RqmParams::new(c, delta, m, q).unwrap())
}

proptest! {
    #[test]
    fn grid_is_symmetric_and_increasing(params in rqm_params()) {
        let g = params.grid();
        let m = params.m();
        for i in 0..m {
            prop_assert!((g.level(i) + g.level(m - 1 - i)).abs() < 1e-10 * params.x_max());
        }
        for i in 1..m {
            prop_assert!(g.level(i) > g.level(i - 1));
        }
    }

    #[test]
    fn closed_form_matches_bruteforce(params in rqm_params(), t in -1.0f64..1.0) {
        let x = t * params.c();
        let cf = rqm_pmf(x, &params).unwrap();
        let bf = rqm_pmf_bruteforce(x, &params).unwrap();
        for (a, b) in cf.probs().iter().zip(bf.probs()) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pmf_is_unbiased_and_fully_supported(params in rqm_params(), t in -1.0f64..1.0) {
        let x = t * params.c();
        let pmf = rqm_pmf(x, &params).unwrap();
        prop_assert!(pmf.min_entry() > 0.0);
        let mean = pmf.mean_on_grid(&params.grid()).unwrap();
        prop_assert!((mean - x).abs() < 1e-10);
    }

    #[test]
    fn pmf_mirror_symmetry(params in rqm_params(), t in -1.0f64..1.0) {
        let x = t * params.c();
        let m = params.m();
        let pos = rqm_pmf(x, &params).unwrap();
        let neg = rqm_pmf(-x, &params).unwrap();
        for i in 0..m {
            prop_assert!((neg.probs()[i] - pos.probs()[m - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_is_idempotent_and_bounded(
        v in prop::collection::vec(-100.0f64..100.0, 0..32),
        c in 0.01f64..10.0,
    ) {
        let once = clip_coordinatewise(&v, c);
        prop_assert!(once.iter().all(|x| x.abs() <= c));
        prop_assert_eq!(clip_coordinatewise(&once, c), once);
    }

    #[test]
    fn divergence_nonnegative_and_monotone(
        params in rqm_params(),
        t1 in -1.0f64..1.0,
        t2 in -1.0f64..1.0,
    ) {
        let p = rqm_pmf(t1 * params.c(), &params).unwrap();
        let q = rqm_pmf(t2 * params.c(), &params).unwrap();
        let mut prev = -1e-12;
        for alpha in [1.5, 2.0, 10.0, 100.0] {
            let d = renyi_divergence(&p, &q, alpha).unwrap();
            prop_assert!(d >= -1e-12);
            prop_assert!(d >= prev - 1e-10);
            prev = d;
        }
        prop_assert!(max_divergence(&p, &q).unwrap() >= prev - 1e-10);
    }

    #[test]
    fn convolution_mass_and_mean_are_additive(
        params in rqm_params(),
        ts in prop::collection::vec(-1.0f64..1.0, 1..5),
    ) {
        let pmfs: Vec<Pmf> = ts
            .iter()
            .map(|t| rqm_pmf(t * params.c(), &params).unwrap())
            .collect();
        let sum = convolve_sum(&pmfs).unwrap();
        prop_assert_eq!(sum.support_size(), ts.len() * (params.m() - 1) + 1);
        let expected_mean: f64 = pmfs.iter().map(|p| p.mean_index()).sum();
        prop_assert!((sum.mean_index() - expected_mean).abs() < 1e-9);
    }

    #[test]
    fn pbm_pmf_normalized_with_linear_mean(
        theta in 0.01f64..0.5,
        trials in 1usize..40,
        t in -1.0f64..1.0,
    ) {
        let c = 1.5;
        let params = PbmParams::new(c, theta, trials).unwrap();
        let x = t * c;
        let pmf = pbm_pmf(x, &params).unwrap();
        let expected = trials as f64 * (0.5 + theta * x / c);
        prop_assert!((pmf.mean_index() - expected).abs() < 1e-10);
    }
}
