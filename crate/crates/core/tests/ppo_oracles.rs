//! Independent checks of the PPO math: central finite differences for the
//! analytic gradient and explicit discounted sums for GAE.

mod common;

use common::{brute_force_gae, max_gradient_error};
use fedtraffic::ppo::{compute_gae, sample_action, Architecture, PpoHyperparams, PpoModel, Transition};
use fedtraffic::seeds;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn gradient_matches_finite_differences_on_tiny_net() {
    let worst = max_gradient_error(Architecture::new(2, &[2]), 1);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn gradient_matches_finite_differences_on_two_hidden_layers() {
    let worst = max_gradient_error(Architecture::new(3, &[5, 4]), 2);
    assert!(worst < 1e-4, "{worst}");
}

proptest! {
    #[test]
    fn gae_matches_explicit_sums(
        steps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 1..=6),
        last in -5.0f64..5.0,
        gamma in 0.5f64..1.0,
        lambda in 0.5f64..1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, last, gamma, lambda).unwrap();
        let oracle = brute_force_gae(&rewards, &values, &dones, last, gamma, lambda);
        for t in 0..rewards.len() {
            prop_assert!((adv[t] - oracle[t]).abs() < 1e-10);
            prop_assert!((ret[t] - (oracle[t] + values[t])).abs() < 1e-10);
        }
    }

    #[test]
    fn clipped_objective_never_exceeds_band(seed in 0u64..50) {
        let mut model = PpoModel::new(Architecture::new(3, &[8, 8]), PpoHyperparams::default(), seed).unwrap();
        let mut rng = seeds::rng(seed);
        let buffer: Vec<Transition> = (0..64)
            .map(|i| {
                let obs: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                let out = model.policy_forward(&obs).unwrap();
                let s = sample_action(out.mean, out.std, &mut rng);
                Transition {
                    obs,
                    action: s.action,
                    raw_action: s.raw,
                    log_prob: s.log_prob,
                    reward: rng.random::<f64>() * 10.0 - 5.0,
                    value: out.value,
                    done: i % 9 == 8,
                }
            })
            .collect();
        let eps = model.hyperparams().clip_range;
        let stats = model.update(&buffer, 0.0, &mut rng).unwrap();
        prop_assert_eq!(stats.ratios.len(), 4 * 64);
        for (r, a) in stats.ratios.iter().zip(&stats.advantages) {
            let surrogate = (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a);
            prop_assert!(surrogate <= (1.0 + eps) * a.abs() + 1e-12);
            prop_assert!(r.is_finite() && *r > 0.0);
        }
    }
}
