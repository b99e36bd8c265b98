use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use span_rl::bspline::SplineBasis;
use span_rl::envs::EnvKind;
use span_rl::iql::{awr_weight, expectile_loss};
use span_rl::linalg::{DenseArray, ParamStore};
use span_rl::metrics::{
    aggregate, anytime_table, env_thresholds, mean_std, sustained_solve_step, EvalRecord, NegativeRule, RunInfo,
    RunSummary,
};
use span_rl::ppo::{clipped_surrogate, compute_gae, normalize};
use span_rl::sac::{soft_target, soft_update, ReplayBuffer};

fn curve_from(means: &[f64]) -> Vec<EvalRecord> {
    means
        .iter()
        .enumerate()
        .map(|(i, &m)| EvalRecord::new((i as u64 + 1) * 5000, vec![m]))
        .collect()
}

fn summary(means: &[f64], seed: u64) -> RunSummary {
    let thresholds = env_thresholds(&EnvKind::CartPole.spec(), NegativeRule::Ratio);
    RunSummary::from_curve(
        RunInfo {
            env: "CartPole-v1".into(),
            algorithm: "ppo".into(),
            net: "span".into(),
            seed,
            fingerprint: "fp".into(),
            total_steps: means.len() as u64 * 5000,
            param_count: 0,
        },
        curve_from(means),
        thresholds,
        0.0,
    )
}

fn store(values: Vec<f64>) -> ParamStore {
    let mut s = ParamStore::new();
    let n = values.len();
    s.add("w", DenseArray::from_vec(&[n], values).unwrap());
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bspline_partition_of_unity(k in 1usize..=5, n in 1usize..=10, x in 0.0f64..=1.0) {
        let v = SplineBasis::new(k, n).unwrap().eval_basis(x).unwrap();
        prop_assert_eq!(v.len(), n + k);
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|b| *b >= 0.0));
        prop_assert!(v.iter().filter(|b| **b != 0.0).count() <= k + 1);
    }

    #[test]
    fn bspline_rejects_points_outside_unit_interval(k in 1usize..=4, n in 1usize..=6, x in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        prop_assert!(SplineBasis::new(k, n).unwrap().eval_basis(x).is_err());
    }

    #[test]
    fn clipping_never_rewards_moving_past_the_trust_region(ratio in 0.0f64..3.0, adv in -5.0f64..5.0, clip in 0.05f64..0.5) {
        let (obj, grad) = clipped_surrogate(ratio, adv, clip);
        prop_assert!(obj <= ratio * adv + 1e-12);
        if adv > 0.0 && ratio > 1.0 + clip {
            prop_assert_eq!(grad, 0.0);
        }
        if adv < 0.0 && ratio < 1.0 - clip {
            prop_assert_eq!(grad, 0.0);
        }
        if (1.0 - clip..=1.0 + clip).contains(&ratio) {
            prop_assert!((grad - ratio * adv).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_contracts_toward_online(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20),
        tau in 0.0f64..=1.0,
    ) {
        let (t, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mut target = store(t.clone());
        let online = store(o.clone());
        soft_update(&mut target, &online, tau).unwrap();
        for i in 0..t.len() {
            let before = (t[i] - o[i]).abs();
            let after = (target.value(0)[i] - o[i]).abs();
            prop_assert!((after - (1.0 - tau) * before).abs() < 1e-9);
        }
    }

    #[test]
    fn gae_with_unit_lambda_is_monte_carlo(
        steps in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, prop::bool::weighted(0.15)), 1..40),
        bootstrap in -2.0f64..2.0,
        gamma in 0.5f64..1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, 1.0);
        let mut g = bootstrap;
        for t in (0..rewards.len()).rev() {
            g = rewards[t] + if dones[t] { 0.0 } else { gamma * g };
            prop_assert!((ret[t] - g).abs() < 1e-9);
            prop_assert!((adv[t] - (g - values[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn expectile_loss_is_convex_and_continuous(u in -10.0f64..10.0, v in -10.0f64..10.0, tau in 0.01f64..0.99) {
        let mid = expectile_loss(0.5 * (u + v), tau);
        prop_assert!(mid <= 0.5 * (expectile_loss(u, tau) + expectile_loss(v, tau)) + 1e-12);
        let h = 1e-7;
        prop_assert!(expectile_loss(h, tau) < 1e-13 && expectile_loss(-h, tau) < 1e-13);
        prop_assert!((expectile_loss(u, 0.5) - 0.5 * u * u).abs() < 1e-12);
    }

    #[test]
    fn awr_weights_are_bounded(adv in -1e3f64..1e3, beta in 0.01f64..10.0) {
        let w = awr_weight(adv, beta, 100.0);
        prop_assert!(w > 0.0 || (beta * adv) < -700.0);
        prop_assert!(w <= 100.0);
    }

    #[test]
    fn solve_step_is_monotone_in_target(
        means in prop::collection::vec(0.0f64..500.0, 0..40),
        a in 0.0f64..500.0,
        b in 0.0f64..500.0,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let curve = curve_from(&means);
        let easy = sustained_solve_step(&curve, lo);
        let hard = sustained_solve_step(&curve, hi);
        match (easy, hard) {
            (None, Some(_)) => prop_assert!(false, "harder target solved, easier not"),
            (Some(e), Some(h)) => prop_assert!(e <= h),
            _ => {}
        }
    }

    #[test]
    fn success_rate_does_not_increase_with_threshold(
        runs in prop::collection::vec(prop::collection::vec(0.0f64..500.0, 5..30), 1..8),
    ) {
        let summaries: Vec<RunSummary> = runs.iter().enumerate().map(|(i, m)| summary(m, i as u64)).collect();
        let mut last = 1.0;
        for pct in [25, 50, 75, 95, 100] {
            let (_, rate) = aggregate(&summaries, pct).unwrap();
            prop_assert!(rate <= last);
            last = rate;
        }
    }

    #[test]
    fn anytime_full_budget_equals_final_statistics(
        runs in prop::collection::vec(prop::collection::vec(-500.0f64..500.0, 4..20), 1..6),
    ) {
        let len = runs.iter().map(Vec::len).min().unwrap();
        let summaries: Vec<RunSummary> = runs.iter().enumerate().map(|(i, m)| summary(&m[..len], i as u64)).collect();
        let budget = len as u64 * 5000;
        let table = anytime_table(&summaries, budget);
        let finals: Vec<f64> = summaries.iter().map(|s| s.final_mean().unwrap()).collect();
        let (m, s) = mean_std(&finals);
        let (tm, ts) = table[&100];
        prop_assert!((tm - m).abs() < 1e-9 && (ts - s).abs() < 1e-9);
    }

    #[test]
    fn soft_target_bootstraps_from_the_smaller_critic(
        r in -5.0f64..5.0, gamma in 0.0f64..1.0, q1 in -50.0f64..50.0, q2 in -50.0f64..50.0, alp in -3.0f64..3.0,
    ) {
        let y = soft_target(r, gamma, false, q1, q2, alp);
        prop_assert!(y <= soft_target(r, gamma, false, q1, q1, alp) + 1e-12);
        prop_assert!(y <= soft_target(r, gamma, false, q2, q2, alp) + 1e-12);
        prop_assert!((y - soft_target(r, gamma, false, q2, q1, alp)).abs() < 1e-12);
        prop_assert_eq!(soft_target(r, gamma, true, q1, q2, alp), r);
    }

    #[test]
    fn advantage_normalisation_preserves_order(xs in prop::collection::vec(-100.0f64..100.0, 2..64)) {
        let mut ys = xs.clone();
        normalize(&mut ys);
        for i in 0..xs.len() {
            for j in 0..xs.len() {
                if xs[i] < xs[j] {
                    prop_assert!(ys[i] <= ys[j]);
                }
            }
        }
        let (m, _) = mean_std(&ys);
        prop_assert!(m.abs() < 1e-9);
    }

    #[test]
    fn replay_indices_stay_in_range(cap in 1usize..50, pushes in 0usize..120, n in 1usize..64, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(cap, 1, 1);
        for i in 0..pushes.max(1) {
            buf.push(&[i as f64], &[0.0], i as f64, &[0.0], false);
        }
        prop_assert_eq!(buf.len(), pushes.max(1).min(cap));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(buf.sample_indices(n, &mut rng).iter().all(|&i| i < buf.len()));
    }
}

/// Index frequencies from uniform replay sampling pass a chi-square test.
#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(20, 1, 1);
    for i in 0..35 {
        buf.push(&[i as f64], &[0.0], 0.0, &[0.0], false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts = BTreeMap::new();
    let draws = 200_000;
    for i in buf.sample_indices(draws, &mut rng) {
        *counts.entry(i).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 20);
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 19 degrees of freedom; 43.8 is the 0.999 quantile.
    assert!(chi2 < 43.8, "chi-square {chi2}");
}
