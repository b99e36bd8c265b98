mod common;

use rand::Rng;
use span_rl::mlp::{Activation, MlpConfig, MlpNet};
use span_rl::policy::GaussianHead;
use span_rl::sac::{SacAgent, SacConfig};
use span_rl::net::Arch;
use span_rl::span::{SpanConfig, SpanNet};

use common::*;

#[test]
fn span_parameter_gradients_match_central_differences() {
    let mut r = rng(11);
    for i in 0..100 {
        let cfg = random_span_config(&mut r);
        let err = span_grad_error(cfg, 500 + i);
        assert!(err < 1e-4, "{cfg:?}: relative error {err:e}");
    }
}

#[test]
fn mlp_parameter_gradients_match_central_differences() {
    let mut r = rng(12);
    for i in 0..100 {
        let cfg = random_mlp_config(&mut r);
        let err = mlp_grad_error(cfg, 700 + i);
        assert!(err < 1e-4, "{cfg:?}: relative error {err:e}");
    }
}

fn input_error(
    d: usize,
    mut f: impl FnMut(&[f64]) -> f64,
    mut g: impl FnMut(&[f64]) -> Vec<f64>,
    s: &[f64],
) -> f64 {
    let analytic = g(s);
    let mut worst = 0.0_f64;
    for q in 0..d {
        let mut p = s.to_vec();
        p[q] += 1e-5;
        let plus = f(&p);
        p[q] -= 2e-5;
        let minus = f(&p);
        let numeric = (plus - minus) / 2e-5;
        let rel = (analytic[q] - numeric).abs() / analytic[q].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn input_gradients_match_central_differences() {
    let mut r = rng(13);
    for _ in 0..40 {
        let cfg = random_span_config(&mut r);
        let mut net = SpanNet::new(cfg, &mut r).unwrap();
        let loss = Quadratic::random(cfg.output_dim, &mut r);
        let s: Vec<f64> = (0..cfg.input_dim).map(|_| r.random_range(-2.0..2.0)).collect();
        let probe = net.clone();
        let f = |x: &[f64]| loss.value(probe.forward(x, &mut probe.new_cache()).unwrap());
        let g = |x: &[f64]| {
            let mut c = net.new_cache();
            let y = net.forward(x, &mut c).unwrap().to_vec();
            let mut gin = vec![0.0; x.len()];
            net.backward(&mut c, &loss.grad(&y), Some(&mut gin)).unwrap();
            gin
        };
        let err = input_error(cfg.input_dim, f, g, &s);
        assert!(err < 1e-4, "{cfg:?}: {err:e}");

        let mcfg = MlpConfig::new(cfg.input_dim, (7, 5), cfg.output_dim, Activation::Tanh);
        let mut mlp = MlpNet::new(mcfg, 1.0, &mut r).unwrap();
        let probe = mlp.clone();
        let f = |x: &[f64]| loss.value(probe.forward(x, &mut probe.new_cache()).unwrap());
        let g = |x: &[f64]| {
            let mut c = mlp.new_cache();
            let y = mlp.forward(x, &mut c).unwrap().to_vec();
            let mut gin = vec![0.0; x.len()];
            mlp.backward(&mut c, &loss.grad(&y), Some(&mut gin)).unwrap();
            gin
        };
        let err = input_error(cfg.input_dim, f, g, &s);
        assert!(err < 1e-4, "{mcfg:?}: {err:e}");
    }
}

/// The reparameterised actor objective `α·log π − min Q` differentiated
/// through the critic's input gradient, against central differences on the
/// actor parameters with the noise held fixed.
#[test]
fn sac_actor_gradient_matches_finite_differences() {
    let cfg = SacConfig::default();
    let archs = [
        Arch::Span { nmodes: 3, nelems: 3, degree: 2 },
        Arch::Mlp { hidden: (8, 8), activation: Activation::Relu },
    ];
    for (case, arch) in archs.iter().enumerate() {
        let mut agent = SacAgent::build(arch, arch, 3, 2, &cfg, case as u64).unwrap();
        let mut r = rng(40 + case as u64);
        let states: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let noise: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
        let alpha = 0.3;

        agent.actor.params_mut().zero_grad();
        for (s, e) in states.iter().zip(&noise) {
            agent.actor_objective(s, e, alpha, 0.25).unwrap();
        }
        let analytic: Vec<Vec<f64>> = (0..agent.actor.params().len())
            .map(|i| agent.actor.params().grad(i).to_vec())
            .collect();
        assert!(agent.q1.params().grad_norm() == 0.0 && agent.q2.params().grad_norm() == 0.0);

        let objective = |agent: &SacAgent| -> f64 {
            let mut total = 0.0;
            for (s, e) in states.iter().zip(&noise) {
                let head = GaussianHead::from_output(agent.actor.forward(s, &mut agent.actor.new_cache()).unwrap());
                let sample = head.with_noise(e);
                let mut sa = s.clone();
                sa.extend_from_slice(&sample.action);
                let q1 = agent.q1.forward(&sa, &mut agent.q1.new_cache()).unwrap()[0];
                let q2 = agent.q2.forward(&sa, &mut agent.q2.new_cache()).unwrap()[0];
                total += 0.25 * (alpha * sample.log_prob - q1.min(q2));
            }
            total
        };
        let mut worst = 0.0_f64;
        for i in 0..analytic.len() {
            for j in 0..analytic[i].len() {
                let orig = agent.actor.params().value(i)[j];
                agent.actor.params_mut().value_mut(i)[j] = orig + 1e-5;
                let plus = objective(&agent);
                agent.actor.params_mut().value_mut(i)[j] = orig - 1e-5;
                let minus = objective(&agent);
                agent.actor.params_mut().value_mut(i)[j] = orig;
                let numeric = (plus - minus) / 2e-5;
                let a = analytic[i][j];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
        assert!(worst < 1e-3, "{arch:?}: {worst:e}");
    }
}

#[test]
fn span_config_is_copy_and_formula_matches() {
    let cfg = SpanConfig::new(4, 2, 1, 2, 1);
    let net = SpanNet::new(cfg, &mut rng(0)).unwrap();
    assert_eq!(net.params().num_params(), span_formula(4, 1, 2, 1, 2));
}
