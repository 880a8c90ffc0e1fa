use std::collections::HashMap;

use rayon::prelude::*;
use robust_palmrt::framework::*;
use robust_palmrt::linalg::Matrix;
use robust_palmrt::regressors::{FitSummary, QuantileConfig};
use robust_palmrt::rng::{Domain, Stream};
use robust_palmrt::theory_checks::summary_gap;

/// `y = beta x + noise`, z = [1, z1, z2] with standard normal entries.
fn location_data(n: usize, beta: f64, noise: f64, index: u64) -> Dataset {
    let mut s = Stream::new(11, Domain::Property, index);
    let x: Vec<f64> = (0..n).map(|_| s.normal()).collect();
    let z1: Vec<f64> = (0..n).map(|_| s.normal()).collect();
    let z2: Vec<f64> = (0..n).map(|_| s.normal()).collect();
    let y = (0..n)
        .map(|i| beta * x[i] + 0.5 * z1[i] + noise * s.student_t3())
        .collect();
    Dataset::new(
        y,
        Matrix::column_vector(&x),
        Matrix::from_columns(n, &[vec![1.0; n], z1, z2]),
    )
    .unwrap()
}

fn bin_rate(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}

#[test]
fn two_element_permutations_are_fair() {
    let draws = 10_000;
    let ids = (0..draws)
        .filter(|&b| permutation_at(2, 3, b).is_identity())
        .count();
    let rate = bin_rate(ids, draws);
    assert!((rate - 0.5).abs() <= 0.015, "identity frequency {rate}");
}

#[test]
fn three_element_permutations_are_uniform() {
    let draws = 60_000;
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for p in sample_permutations(3, draws, 9) {
        *counts.entry(p.mapping().to_vec()).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    for (p, c) in counts {
        let f = bin_rate(c, draws);
        assert!((f - 1.0 / 6.0).abs() <= 0.005, "{p:?} frequency {f}");
    }
}

#[test]
fn permutations_depend_only_on_seed_and_index() {
    assert_eq!(permutation_at(17, 5, 42), permutation_at(17, 5, 42));
    assert_eq!(
        sample_permutations(17, 50, 5)[42],
        permutation_at(17, 5, 42)
    );
    assert_ne!(permutation_at(17, 5, 42), permutation_at(17, 6, 42));
}

#[test]
fn identity_permutation_gives_identical_fits() {
    let data = location_data(25, 0.3, 1.0, 1);
    for m in Method::ALL.into_iter().filter(|m| *m != Method::Dispersion) {
        let (o, p) = paired_fit(&data, &Permutation::identity(25), &m.fitter()).unwrap();
        assert_eq!(o, p, "{m}");
    }
}

#[test]
fn relabelled_rows_with_conjugated_permutation_leave_fits_unchanged() {
    let n = 30;
    let data = location_data(n, 0.4, 1.0, 2);
    let mut s = Stream::new(4, Domain::Property, 0);
    for k in 0..10 {
        let sigma = Permutation::new(s.permutation(n)).unwrap();
        let pi = permutation_at(n, 8, k);
        let moved = data.permute_rows(&sigma);
        let pi_moved = sigma.inverse().compose(&pi).compose(&sigma);
        for m in [Method::OlsL2, Method::HuberHuber] {
            let (o1, p1) = paired_fit(&data, &pi, &m.fitter()).unwrap();
            let (o2, p2) = paired_fit(&moved, &pi_moved, &m.fitter()).unwrap();
            assert!(summary_gap(&o1, &o2) <= 1e-8, "{m} orig");
            assert!(summary_gap(&p1, &p2) <= 1e-8, "{m} perm");
        }
    }
}

#[test]
fn ols_fit_of_response_in_span_is_zero() {
    let n = 20;
    let base = location_data(n, 0.0, 1.0, 3);
    let y: Vec<f64> = (0..n)
        .map(|i| 2.0 * base.x().get(i, 0) - base.z().get(i, 1) + 4.0)
        .collect();
    let data = base.with_response(y).unwrap();
    let (o, _) = paired_fit(&data, &permutation_at(n, 1, 0), &FitterSpec::ols()).unwrap();
    assert!(o.sorted_residuals.iter().all(|&r| r == 0.0));
}

#[test]
fn covariate_inside_controls_ties_everywhere() {
    let n = 30;
    let base = location_data(n, 0.0, 1.0, 4);
    let x = Matrix::column_vector(base.z().column(1));
    let data = Dataset::new(base.y().to_vec(), x, base.z().clone()).unwrap();
    for m in Method::ALL.into_iter().filter(|m| *m != Method::Dispersion) {
        let r = palmrt_test(&data, &m.fitter(), &m.evaluator(), 49, 2).unwrap();
        assert_eq!(r.p_value, 1.0, "{m}");
        assert!(r.indicators.iter().all(|&a| a == 1.0));
    }
}

#[test]
fn exact_signal_reaches_the_floor() {
    let n = 30;
    let base = location_data(n, 0.0, 1.0, 5);
    let y: Vec<f64> = (0..n)
        .map(|i| 3.0 * base.x().get(i, 0) + base.z().get(i, 2))
        .collect();
    let data = base.with_response(y).unwrap();
    let r = palmrt_test(&data, &FitterSpec::ols(), &EvaluatorSpec::L2, 99, 1).unwrap();
    assert_eq!(r.p_value, 1.0 / 100.0);
    assert!(r.indicators.iter().all(|&a| a == 0.0));
}

#[test]
fn p_value_is_on_the_lattice_and_matches_indicators() {
    for (k, m) in Method::ALL
        .into_iter()
        .filter(|m| *m != Method::Dispersion)
        .enumerate()
    {
        let data = location_data(40, 0.2, 1.0, 10 + k as u64);
        let b = 59;
        let r = palmrt_test(&data, &m.fitter(), &m.evaluator(), b, 3).unwrap();
        let sum: f64 = r.indicators.iter().sum();
        assert_eq!(r.p_value, (1.0 + sum) / (1.0 + b as f64));
        assert_eq!(r.indicators.len(), b);
        assert!(r.indicators.iter().all(|&a| a == 0.0 || a == 1.0));
        let k = r.p_value * (b + 1) as f64;
        assert_eq!(k, k.round());
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        assert_eq!(r.alpha_note, GUARANTEE_NOTE);
    }
}

#[test]
fn reports_are_reproducible_across_thread_counts() {
    let data = location_data(50, 0.2, 1.0, 20);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let r =
                palmrt_test(&data, &FitterSpec::huber(), &EvaluatorSpec::huber(), 99, 77).unwrap();
            serde_json::to_string(&r).unwrap()
        })
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(3));
}

#[test]
fn half_weight_ties_halve_the_tied_mass() {
    let n = 20;
    let base = location_data(n, 0.0, 1.0, 6);
    let x = Matrix::column_vector(base.z().column(2));
    let data = Dataset::new(base.y().to_vec(), x, base.z().clone()).unwrap();
    let r = palmrt_test_with_ties(
        &data,
        &FitterSpec::ols(),
        &EvaluatorSpec::L2,
        19,
        1,
        TieRule::HalfWeight,
    )
    .unwrap();
    assert_eq!(r.p_value, (1.0 + 9.5) / 20.0);
}

fn two_group(n: usize, case_scale: f64, index: u64) -> Dataset {
    let mut s = Stream::new(12, Domain::Property, index);
    let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let y = x
        .iter()
        .map(|&g| (1.0 + (case_scale - 1.0) * g) * s.normal())
        .collect();
    Dataset::new(y, Matrix::column_vector(&x), Matrix::ones(n)).unwrap()
}

fn deciles() -> (QuantileConfig, QuantileConfig) {
    (QuantileConfig::new(0.1), QuantileConfig::new(0.9))
}

#[test]
fn equal_group_spreads_give_p_one() {
    let n = 40;
    let mut s = Stream::new(13, Domain::Property, 0);
    let base: Vec<f64> = (0..n / 2).map(|_| s.normal()).collect();
    let y: Vec<f64> = (0..n).map(|i| base[i / 2] + 5.0 * (i % 2) as f64).collect();
    let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let data = Dataset::new(y, Matrix::column_vector(&x), Matrix::ones(n)).unwrap();
    let (lo, hi) = deciles();
    let r = dispersion_test(&data, lo, hi, 49, 1).unwrap();
    assert!(r.omega_orig.iter().all(|&w| w.abs() <= 1e-12));
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn dispersion_statistic_is_non_positive_and_label_symmetric() {
    // 31 per group: n q is not an integer, so the quantile fits are unique
    let data = two_group(62, 3.0, 1);
    let flipped_x: Vec<f64> = data.x().column(0).iter().map(|g| 1.0 - g).collect();
    let flipped = Dataset::new(
        data.y().to_vec(),
        Matrix::column_vector(&flipped_x),
        data.z().clone(),
    )
    .unwrap();
    let (lo, hi) = deciles();
    let a = dispersion_test(&data, lo, hi, 99, 4).unwrap();
    let b = dispersion_test(&flipped, lo, hi, 99, 4).unwrap();
    assert!(a.omega_orig.iter().chain(&a.omega_perm).all(|&w| w <= 0.0));
    assert_eq!(a.p_value, b.p_value);
    for (u, v) in a.omega_orig.iter().zip(&b.omega_orig) {
        assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
    }
}

#[test]
fn dispersion_test_requires_two_groups() {
    let data = location_data(20, 0.0, 1.0, 7);
    let (lo, hi) = deciles();
    assert!(matches!(
        dispersion_test(&data, lo, hi, 9, 1),
        Err(FrameworkError::InvalidDataset(_))
    ));
}

/// Evaluator that prefers worse fits.
struct NegatedL2;

impl Evaluator for NegatedL2 {
    fn evaluate(&self, s: &FitSummary) -> Result<f64, FrameworkError> {
        Ok(-s.sorted_residuals.iter().map(|r| r * r).sum::<f64>())
    }

    fn label(&self) -> String {
        "negated-l2".into()
    }
}

#[test]
fn validity_does_not_depend_on_the_evaluator() {
    let trials = 400;
    let ps: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let data = location_data(30, 0.0, 1.0, 1000 + t);
            palmrt_test(&data, &FitterSpec::ols(), &NegatedL2, 39, t)
                .unwrap()
                .p_value
        })
        .collect();
    for alpha in [0.05, 0.1] {
        let rate = bin_rate(ps.iter().filter(|&&p| p <= alpha).count(), trials);
        let bound = 2.0 * alpha + 3.0 * (2.0 * alpha * (1.0 - 2.0 * alpha) / trials as f64).sqrt();
        assert!(rate <= bound, "alpha {alpha}: rate {rate} > {bound}");
    }
}

#[test]
fn interval_with_zero_alpha_spans_the_grid() {
    let data = location_data(30, 1.0, 1.0, 8);
    let grid: Vec<f64> = (0..9).map(|i| -1.0 + 0.5 * i as f64).collect();
    let ci = invert_ci(
        &data,
        &FitterSpec::ols(),
        &EvaluatorSpec::L2,
        19,
        1,
        0.0,
        &grid,
    )
    .unwrap();
    assert_eq!((ci.beta_lo, ci.beta_hi), (-1.0, 3.0));
    assert!(ci.contiguous);
    assert_eq!(ci.grid.len(), 9);
}

#[test]
fn interval_p_curve_peaks_at_the_truth() {
    let n = 30;
    let base = location_data(n, 0.0, 1.0, 9);
    let y: Vec<f64> = base.x().column(0).iter().map(|x| 1.5 * x).collect();
    let data = base.with_response(y).unwrap();
    let grid = [0.5, 1.0, 1.5, 2.0, 2.5];
    let ci = invert_ci(
        &data,
        &FitterSpec::ols(),
        &EvaluatorSpec::L2,
        49,
        3,
        0.05,
        &grid,
    )
    .unwrap();
    let best = ci
        .grid
        .iter()
        .max_by(|a, b| a.p_value.total_cmp(&b.p_value))
        .unwrap();
    assert_eq!(best.beta, 1.5);
    assert_eq!(best.p_value, 1.0);
    assert!(ci.beta_lo <= 1.5 && 1.5 <= ci.beta_hi);
    for g in &ci.grid {
        if g.beta >= ci.beta_lo && g.beta <= ci.beta_hi && ci.contiguous {
            assert!(g.p_value > 0.05);
        }
    }
}

#[test]
fn interval_errors() {
    let data = location_data(30, 0.0, 1.0, 10);
    let y: Vec<f64> = data.x().column(0).iter().map(|x| 10.0 * x).collect();
    let data = data.with_response(y).unwrap();
    let far = [-5.0, -4.0];
    assert!(matches!(
        invert_ci(
            &data,
            &FitterSpec::ols(),
            &EvaluatorSpec::L2,
            19,
            1,
            0.2,
            &far
        ),
        Err(FrameworkError::EmptyAcceptance { .. })
    ));
    let unsorted = [1.0, 0.0];
    assert!(invert_ci(
        &data,
        &FitterSpec::ols(),
        &EvaluatorSpec::L2,
        19,
        1,
        0.05,
        &unsorted
    )
    .is_err());
    assert!(invert_ci(
        &data,
        &FitterSpec::ols(),
        &EvaluatorSpec::L2,
        19,
        1,
        0.05,
        &[]
    )
    .is_err());
}
