use ganmc::fidelity::*;
use ganmc::rng::rng_from_seed;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng as _;

fn brute_force(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let c = cost_matrix(a.view(), b.view(), GroundMetric::Euclidean).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    fn heap(k: usize, p: &mut Vec<usize>, c: &Array2<f64>, best: &mut f64) {
        if k == 1 {
            let s: f64 = p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
            *best = best.min(s);
            return;
        }
        for i in 0..k {
            heap(k - 1, p, c, best);
            if k % 2 == 0 {
                p.swap(i, k - 1);
            } else {
                p.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut perm, &c, &mut best);
    best / n as f64
}

/// 1-D W₁ as the integral of |F⁻¹ − G⁻¹| on the merged quantile grid.
fn quantile_w1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let mut cuts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).chain((0..=m).map(|j| j as f64 / m as f64)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let mut s = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let ia = ((mid * n as f64).floor() as usize).min(n - 1);
        let ib = ((mid * m as f64).floor() as usize).min(m - 1);
        s += (w[1] - w[0]) * (a[ia] - b[ib]).abs();
    }
    s
}

fn points(rng: &mut ganmc::rng::Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0))
}

#[test]
fn assignment_matches_factorial_brute_force() {
    let mut rng = rng_from_seed(11);
    for case in 0..200 {
        let n = 1 + case % 6;
        let d = 1 + case % 3;
        let a = points(&mut rng, n, d);
        let b = points(&mut rng, n, d);
        let exact = exact_wasserstein(a.view(), b.view(), GroundMetric::Euclidean).unwrap().cost;
        assert!((exact - brute_force(&a, &b)).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn transportation_matches_quantile_formula() {
    let mut rng = rng_from_seed(5);
    for case in 0..100 {
        let n = 1 + case % 9;
        let m = 1 + (case * 7) % 11;
        let a = points(&mut rng, n, 1);
        let b = points(&mut rng, m, 1);
        let plan = exact_wasserstein(a.view(), b.view(), GroundMetric::Euclidean).unwrap();
        let q = quantile_w1(a.column(0).as_slice().unwrap(), b.column(0).as_slice().unwrap());
        assert!((plan.cost - q).abs() < 1e-9, "case {case}: {} vs {q}", plan.cost);
        for r in plan.coupling.rows() {
            assert!((r.sum() - 1.0 / n as f64).abs() < 1e-9);
        }
        for c in plan.coupling.columns() {
            assert!((c.sum() - 1.0 / m as f64).abs() < 1e-9);
        }
        assert!(plan.coupling.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn transportation_agrees_with_assignment_on_square_problems() {
    let mut rng = rng_from_seed(8);
    for n in [2usize, 5, 12, 30] {
        let a = points(&mut rng, n, 3);
        let b = points(&mut rng, n, 3);
        let c = cost_matrix(a.view(), b.view(), GroundMetric::Euclidean).unwrap();
        let flow = transportation_simplex(&c);
        let lp: f64 = flow.iter().zip(c.iter()).map(|(&f, &v)| f as f64 * v).sum::<f64>() / (n * n) as f64;
        let hung = exact_wasserstein(a.view(), b.view(), GroundMetric::Euclidean).unwrap().cost;
        assert!((lp - hung).abs() < 1e-9);
    }
}

#[test]
fn sinkhorn_close_to_exact_on_fixed_instances() {
    let mut rng = rng_from_seed(21);
    for _ in 0..20 {
        let a = points(&mut rng, 5, 2);
        let b = points(&mut rng, 5, 2);
        let exact = exact_wasserstein(a.view(), b.view(), GroundMetric::Euclidean).unwrap().cost;
        let s = sinkhorn(a.view(), b.view(), 1e-3, 100_000, GroundMetric::Euclidean).unwrap();
        assert!(s.converged);
        assert!((s.cost - exact).abs() <= 0.01 * exact, "{} vs {exact}", s.cost);
    }
}

#[test]
fn sinkhorn_gap_shrinks_with_regularization() {
    let a = array![[0.0, 0.0], [1.0, 0.5], [2.0, -1.0], [0.3, 0.3]];
    let b = array![[0.1, 0.2], [1.5, 0.0], [-1.0, 1.0], [2.0, 2.0]];
    let exact = exact_wasserstein(a.view(), b.view(), GroundMetric::Euclidean).unwrap().cost;
    let mut last = f64::INFINITY;
    for eps in [1.0, 0.3, 0.1, 0.03, 0.01] {
        let gap = sinkhorn(a.view(), b.view(), eps, 100_000, GroundMetric::Euclidean).unwrap().cost - exact;
        assert!(gap >= -1e-9);
        assert!(gap <= last + 1e-9);
        last = gap;
    }
}

#[test]
fn mvn_sample_mean_within_clt_bound() {
    let x = array![[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [0.0, 0.5], [4.0, 3.0]];
    let m = fit_mvn(x.view()).unwrap();
    let n = 20_000;
    let s = sample_mvn(&m, n, &mut rng_from_seed(3));
    for j in 0..2 {
        let mean = s.column(j).mean().unwrap();
        let sd = m.cov[[j, j]].sqrt();
        assert!((mean - m.mean[j]).abs() < 4.0 * sd / (n as f64).sqrt());
    }
}

#[test]
fn singular_covariance_is_ridged() {
    let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
    assert!(fit_mvn(x.view()).unwrap().ridged);
}

#[test]
fn correlation_is_symmetric_with_unit_diagonal() {
    let mut rng = rng_from_seed(1);
    let x = points(&mut rng, 50, 4);
    let c = correlation_matrix(x.view());
    for i in 0..4 {
        assert_eq!(c[[i, i]], 1.0);
        for j in 0..4 {
            assert!((c[[i, j]] - c[[j, i]]).abs() < 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric_on_small_sets(seed in 0u64..10_000) {
        let mut rng = rng_from_seed(seed);
        let a = points(&mut rng, 4, 2);
        let b = points(&mut rng, 4, 2);
        let c = points(&mut rng, 4, 2);
        let w = |x: &Array2<f64>, y: &Array2<f64>| exact_wasserstein(x.view(), y.view(), GroundMetric::Euclidean).unwrap().cost;
        let ab = w(&a, &b);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - w(&b, &a)).abs() < 1e-12);
        prop_assert!((ab - brute_force(&a, &b)).abs() < 1e-9);
        prop_assert!(ab <= w(&a, &c) + w(&c, &b) + 1e-12);
        // Permuting rows leaves the multiset unchanged.
        let perm = a.select(ndarray::Axis(0), &[2, 0, 3, 1]);
        prop_assert!(w(&a, &perm).abs() < 1e-12);
    }
}
