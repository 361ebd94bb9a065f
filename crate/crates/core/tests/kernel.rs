use std::f64::consts::PI;

use nalgebra::DMatrix;
use ntk_spectrum::eigenbasis::eigen_sum;
use ntk_spectrum::kernel::{
    ntk_mc_oracle, ntk_series, remainder_kernel, remainder_trace_bound, remainder_trace_exact,
    trace_estimate, truncated_kernel, REMAINDER_AT_ONE,
};
use ntk_spectrum::{KernelSpec, MonteCarlo, SeriesParams};
use proptest::prelude::*;

/// Degree-1 arc-cosine kernel, `E[relu(x·z) relu(y·z)]` in closed form.
fn arc_cosine(x: &[f64], y: &[f64]) -> f64 {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let c = (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / (nx * ny)).clamp(-1.0, 1.0);
    let t = c.acos();
    nx * ny * (t.sin() + (PI - t) * c) / (2.0 * PI)
}

fn params() -> SeriesParams {
    SeriesParams::default()
}

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (vec_strategy(d), vec_strategy(d))
}

fn min_eigenvalue(g: DMatrix<f64>) -> f64 {
    g.symmetric_eigenvalues().min()
}

proptest! {
    #[test]
    fn series_matches_closed_form((x, y) in (2usize..12).prop_flat_map(pair)) {
        let k = ntk_series(&x, &y, &params()).unwrap();
        let oracle = arc_cosine(&x, &y);
        prop_assert!((k.value - oracle).abs() <= k.tail_bound + 1e-12,
            "series {} oracle {} bound {}", k.value, oracle, k.tail_bound);
    }

    #[test]
    fn symmetric((x, y) in (1usize..10).prop_flat_map(pair)) {
        let a = ntk_series(&x, &y, &params()).unwrap().value;
        let b = ntk_series(&y, &x, &params()).unwrap().value;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn positively_homogeneous(
        (x, y) in (1usize..10).prop_flat_map(pair),
        a in 0.01f64..50.0,
        b in 0.01f64..50.0,
    ) {
        let base = ntk_series(&x, &y, &params()).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * a).collect();
        let ys: Vec<f64> = y.iter().map(|v| v * b).collect();
        let scaled = ntk_series(&xs, &ys, &params()).unwrap();
        let expected = a * b * base.value;
        let slack = scaled.tail_bound + a * b * base.tail_bound + 1e-12 * (1.0 + expected.abs());
        prop_assert!((scaled.value - expected).abs() <= slack);
    }

    #[test]
    fn cauchy_schwarz((x, y) in (1usize..10).prop_flat_map(pair)) {
        let p = params();
        let kxy = ntk_series(&x, &y, &p).unwrap().value;
        let kxx = ntk_series(&x, &x, &p).unwrap().value;
        let kyy = ntk_series(&y, &y, &p).unwrap().value;
        prop_assert!(kxy * kxy <= kxx * kyy * (1.0 + 1e-9) + 1e-12);
        prop_assert!(kxy >= 0.0);
    }

    #[test]
    fn closed_terms_are_the_eigen_sum((x, y) in (2usize..9).prop_flat_map(pair)) {
        let p = params();
        let k = ntk_series(&x, &y, &p).unwrap();
        let r = remainder_kernel(&x, &y, &p).unwrap();
        let e = eigen_sum(&x, &y).unwrap();
        prop_assert!((k.value - r.value - e).abs() <= 1e-10 * (1.0 + e.abs()));
    }

    #[test]
    fn truncations_increase_toward_the_kernel(x in vec_strategy(4)) {
        let mut prev = 0.0;
        for order in [1usize, 2, 5, 20] {
            let t = truncated_kernel(&x, &x, order).unwrap().value;
            prop_assert!(t >= prev - 1e-12);
            prev = t;
        }
        let full = ntk_series(&x, &x, &params()).unwrap().value;
        prop_assert!(prev <= full + 1e-12);
    }

    #[test]
    fn gram_matrices_are_psd(points in (2usize..6).prop_flat_map(|d| prop::collection::vec(vec_strategy(d), 2..10))) {
        let p = params();
        let n = points.len();
        let gram = |f: &dyn Fn(&[f64], &[f64]) -> f64| {
            DMatrix::from_fn(n, n, |i, j| f(&points[i], &points[j]))
        };
        let k = gram(&|a, b| ntk_series(a, b, &p).unwrap().value);
        let r = gram(&|a, b| remainder_kernel(a, b, &p).unwrap().value);
        let scale = 1.0 + k.amax();
        prop_assert!(min_eigenvalue(k) >= -1e-9 * scale);
        prop_assert!(min_eigenvalue(r) >= -1e-9 * scale);
    }
}

#[test]
fn remainder_at_unit_diagonal() {
    let x = [0.6, 0.0, -0.8];
    let r = remainder_kernel(&x, &x, &params()).unwrap();
    assert!((r.value - REMAINDER_AT_ONE).abs() <= r.tail_bound + 1e-12);
    assert!((REMAINDER_AT_ONE - 0.011_267_6).abs() < 1e-6);
}

#[test]
fn monte_carlo_oracle_agrees_with_series() {
    let mc = MonteCarlo::new(400_000, 3).unwrap();
    let x = [1.0, -0.5, 0.25, 2.0];
    let y = [0.3, 0.9, -1.2, 0.4];
    let est = ntk_mc_oracle(&x, &y, &mc).unwrap();
    let k = ntk_series(&x, &y, &params()).unwrap().value;
    assert!(est.within(k, 4.0), "{est:?} vs {k}");
}

#[test]
fn remainder_trace_against_exact_and_bound() {
    for d in [2usize, 5, 10, 30] {
        let mc = MonteCarlo::new(50_000, d as u64).unwrap();
        let est = trace_estimate(&KernelSpec::Remainder(params()), d, &mc).unwrap();
        let exact = remainder_trace_exact(d);
        assert!(est.within(exact, 4.0), "d={d}: {est:?} vs {exact}");
        assert!(remainder_trace_bound(d) >= exact);
    }
    // As a share of the full trace d/2 the remainder is d-independent.
    let frac = remainder_trace_exact(30) / 15.0;
    assert!((frac - 2.0 * REMAINDER_AT_ONE).abs() < 1e-15);
    assert!(frac < 0.026);
}

#[test]
fn full_trace_is_half_dimension() {
    for d in [1usize, 3, 8] {
        let mc = MonteCarlo::new(50_000, 11).unwrap();
        let est = trace_estimate(&KernelSpec::Ntk(params()), d, &mc).unwrap();
        assert!(est.within(d as f64 / 2.0, 4.0), "d={d}: {est:?}");
    }
}
