use nalgebra::DMatrix;
use proptest::prelude::*;

use evpool::distfit::{ks_statistic, Transform, TRANSFORMS};
use evpool::geometry::{intersection_area, Buffer, Point, Polygon};
use evpool::inference::{summarize_feature, TukeyBox};
use evpool::preprocess::ResponseTransform;
use evpool::regression::{fold_partition, lambda_max, lasso_fit, log_grid, soft_threshold, LassoOptions};

fn design() -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>)> {
    (10usize..40, 1usize..8).prop_flat_map(|(n, p)| {
        (prop::collection::vec(-3.0f64..3.0, n * p), prop::collection::vec(-5.0f64..5.0, n))
            .prop_map(move |(xs, y)| (DMatrix::from_vec(n, p, xs), y))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lasso_satisfies_kkt((x, y) in design(), frac in 0.001f64..1.2, standardize: bool) {
        let (n, p) = x.shape();
        let lm = lambda_max(&x, &y, standardize);
        prop_assume!(lm > 1e-6);
        let opts = LassoOptions { standardize, tol: 1e-10, ..Default::default() };
        let lambda = frac * lm;
        let fit = lasso_fit(&x, &y, lambda, &opts).unwrap();
        let r: Vec<f64> = (0..n).map(|i| y[i] - fit.predict_row(&x, i)).collect();
        for j in 0..p {
            let c = x.column(j);
            let m = c.mean();
            let sd = if standardize { (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt() } else { 1.0 };
            prop_assume!(sd > 1e-8);
            let g: f64 = (0..n).map(|i| (x[(i, j)] - m) / sd * r[i]).sum::<f64>() / n as f64;
            if fit.coefficients[j] == 0.0 {
                prop_assert!(g.abs() <= lambda + 1e-6);
            } else {
                prop_assert!((g - lambda * fit.coefficients[j].signum()).abs() <= 1e-6);
            }
        }
        if frac >= 1.0 {
            prop_assert!(fit.coefficients.iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn soft_threshold_shrinks(z in -10.0f64..10.0, l in 0.0f64..5.0) {
        let s = soft_threshold(z, l);
        prop_assert!(s.abs() <= z.abs());
        prop_assert!(s == 0.0 || s.signum() == z.signum());
        prop_assert!((z - s).abs() <= l + 1e-12);
    }

    #[test]
    fn folds_partition_rows(n in 10usize..500, k in 2usize..11, seed: u64) {
        let folds = fold_partition(n, k, seed);
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn grid_is_increasing(lo in -6.0f64..-1.0, span in 0.5f64..4.0) {
        let g = log_grid(lo, lo + span, 0.02);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert!((g[0].log10() - lo).abs() < 1e-9);
    }

    #[test]
    fn stability_fractions(samples in prop::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], 1..300), zt in 0.01f64..0.5, ft in 0.0f64..0.2) {
        let s = summarize_feature("f", &samples, zt, ft);
        prop_assert!(s.zero_fraction + s.flip_fraction <= 1.0 + 1e-12);
        prop_assert!((s.zero_fraction + s.positive_fraction + s.negative_fraction - 1.0).abs() < 1e-12);
        if s.significant {
            prop_assert!(s.zero_fraction < zt && s.flip_fraction <= ft);
        }
        let t = s.tukey;
        prop_assert!(t.whisker_low <= t.q1 && t.q1 <= t.median && t.median <= t.q3 && t.q3 <= t.whisker_high);
    }

    #[test]
    fn tukey_counts_outliers(samples in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        let t = TukeyBox::of(&samples);
        let iqr = t.q3 - t.q1;
        let out = samples.iter().filter(|v| **v < t.q1 - 1.5 * iqr || **v > t.q3 + 1.5 * iqr).count();
        prop_assert_eq!(out, t.n_outliers);
    }

    #[test]
    fn distfit_transforms_invert(y in 0.01f64..1e4) {
        for t in TRANSFORMS {
            let back = t.inverse(t.apply(y));
            prop_assert!((back / y - 1.0).abs() < 1e-9, "{} at {}", t, y);
            if t != Transform::Identity {
                prop_assert!(t.derivative(y) > 0.0);
            }
        }
    }

    #[test]
    fn response_transforms_invert(y in 0.01f64..1e4, l in -1.0f64..2.0) {
        for t in [ResponseTransform::Identity, ResponseTransform::Sqrt, ResponseTransform::Square, ResponseTransform::Log, ResponseTransform::BoxCox(l)] {
            prop_assert!((t.inverse(t.forward(y)) / y - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn ks_statistic_bounds(mut v in prop::collection::vec(0.0f64..1.0, 1..200)) {
        v.sort_by(f64::total_cmp);
        let d = ks_statistic(&v, |x| x);
        prop_assert!(d >= 0.5 / v.len() as f64 - 1e-12 && d <= 1.0);
    }

    #[test]
    fn intersection_area_is_bounded(cx in -500.0f64..500.0, cy in -500.0f64..500.0, r in 10.0f64..400.0,
                                    x0 in -600.0f64..600.0, y0 in -600.0f64..600.0, w in 1.0f64..800.0, h in 1.0f64..800.0) {
        let b = Buffer::new(Point::new(cx, cy), r).unwrap();
        let poly = Polygon::rectangle(x0, y0, x0 + w, y0 + h).unwrap();
        let a = intersection_area(&poly, &b);
        prop_assert!(a >= 0.0);
        prop_assert!(a <= poly.area().min(b.area()) * (1.0 + 1e-9));
        let cover = Polygon::rectangle(cx - 2.0 * r, cy - 2.0 * r, cx + 2.0 * r, cy + 2.0 * r).unwrap();
        prop_assert!((intersection_area(&cover, &b) / b.area() - 1.0).abs() < 1e-9);
    }
}
