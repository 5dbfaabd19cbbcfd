mod common;

use fedtraffic::dfl::fedavg;
use fedtraffic::metrics::{aggregate_runs, are, mae};
use fedtraffic::seeds;
use num::{BigRational, ToPrimitive};
use proptest::prelude::*;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn fedavg_of_three_random_vectors_is_exact_to_1e12() {
    for seed in 0..20 {
        let mut rng = seeds::rng(seed);
        let dim = rng.random_range(1..200);
        let models: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-6..4))).collect())
            .collect();
        let got = fedavg(&models).unwrap();
        for (g, w) in got.iter().zip(common::exact_fedavg(&models)) {
            assert!(close(*g, w, 1e-12), "{g} vs {w}");
        }
    }
}

#[test]
fn are_of_100_random_pairs() {
    let mut rng = seeds::rng(8);
    let pairs: Vec<(f64, f64)> = (0..100).map(|_| (rng.random_range(0.0..1200.0), rng.random_range(0.0..1200.0))).collect();
    let oracle = common::exact_mean(&pairs.iter().map(|(t, d)| (t - d).abs()).collect::<Vec<_>>());
    assert!(close(are(&pairs).unwrap(), oracle, 1e-12));
}

#[test]
fn mae_of_a_random_profile_pair() {
    let mut rng = seeds::rng(9);
    let t: Vec<f64> = (0..24).map(|_| rng.random_range(0.0..900.0)).collect();
    let d: Vec<f64> = (0..24).map(|_| rng.random_range(0.0f64..900.0).round()).collect();
    let oracle = common::exact_mean(&t.iter().zip(&d).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>());
    assert!(close(mae(&t, &d).unwrap(), oracle, 1e-12));
}

#[test]
fn aggregate_of_ten_random_runs() {
    let mut rng = seeds::rng(10);
    let runs: Vec<f64> = (0..10).map(|_| rng.random_range(5.0..80.0)).collect();
    let (mu, sigma) = aggregate_runs(&runs).unwrap();
    let exact: Vec<BigRational> = runs.iter().map(|v| BigRational::from_float(*v).unwrap()).collect();
    let n = BigRational::from_integer(10.into());
    let m = exact.iter().fold(BigRational::from_integer(0.into()), |a, b| a + b) / &n;
    let var = exact.iter().fold(BigRational::from_integer(0.into()), |a, b| a + (b - &m) * (b - &m)) / &n;
    assert!(close(mu, m.to_f64().unwrap(), 1e-12));
    assert!(close(sigma, var.to_f64().unwrap().sqrt(), 1e-12));
}

proptest! {
    #[test]
    fn fedavg_matches_exact_mean(models in (1usize..6, 1usize..20).prop_flat_map(|(n, dim)| {
        prop::collection::vec(prop::collection::vec(-1e6f64..1e6, dim), n)
    })) {
        let got = fedavg(&models).unwrap();
        for (g, w) in got.iter().zip(common::exact_fedavg(&models)) {
            prop_assert!(close(*g, w, 1e-12));
        }
    }

    #[test]
    fn fedavg_is_order_independent_and_bounded(models in prop::collection::vec(prop::collection::vec(-50f64..50.0, 4), 2..6)) {
        let mut rev = models.clone();
        rev.reverse();
        let a = fedavg(&models).unwrap();
        let b = fedavg(&rev).unwrap();
        for i in 0..4 {
            prop_assert!(close(a[i], b[i], 1e-12));
            let lo = models.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= a[i] && a[i] <= hi);
        }
    }

    #[test]
    fn are_is_shift_invariant(pairs in prop::collection::vec((0f64..1e4, 0f64..1e4), 1..50), c in -100f64..100.0) {
        let shifted: Vec<(f64, f64)> = pairs.iter().map(|(t, d)| (t + c, d + c)).collect();
        prop_assert!(close(are(&pairs).unwrap(), are(&shifted).unwrap(), 1e-9));
    }
}
