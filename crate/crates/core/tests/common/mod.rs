//! Reference implementations used as oracles by the integration tests.
//! They are written from the textbook definitions and share no code with the
//! library's evaluation paths.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use span_rl::linalg::ParamStore;
use span_rl::mlp::{Activation, MlpConfig, MlpNet};
use span_rl::span::{SpanConfig, SpanNet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Clamped uniform knot vector on [0, 1].
pub fn clamped_knots(degree: usize, nelems: usize) -> Vec<f64> {
    let mut t = vec![0.0; degree + 1];
    t.extend((1..nelems).map(|i| i as f64 / nelems as f64));
    t.extend(std::iter::repeat_n(1.0, degree + 1));
    t
}

/// `B_{i,k}(x)` by direct Cox–de Boor recursion. The right end point is
/// assigned to the last non-degenerate interval.
pub fn naive_basis(t: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if k == 0 {
        let last = t[t.len() - 1];
        let inside = t[i] <= x && x < t[i + 1];
        let at_end = x == last && t[i] < t[i + 1] && t[i + 1] == last;
        return if inside || at_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + k] - t[i];
    if d1 > 0.0 {
        v += (x - t[i]) / d1 * naive_basis(t, i, k - 1, x);
    }
    let d2 = t[i + k + 1] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + k + 1] - x) / d2 * naive_basis(t, i + 1, k - 1, x);
    }
    v
}

/// All `N + k` basis values at `x`.
pub fn naive_basis_all(degree: usize, nelems: usize, x: f64) -> Vec<f64> {
    let t = clamped_knots(degree, nelems);
    (0..nelems + degree).map(|i| naive_basis(&t, i, degree, x)).collect()
}

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Dense tensor-grid evaluation `Σ_{i_1..i_d} C[i_1..i_d] Π_p B_{i_p}(z_p)`
/// with `C` materialised as the outer product of per-dimension weight
/// vectors.
pub fn dense_separable(weights: &[Vec<f64>], degree: usize, nelems: usize, z: &[f64]) -> f64 {
    let d = weights.len();
    let nb = nelems + degree;
    let basis: Vec<Vec<f64>> = z.iter().map(|&x| naive_basis_all(degree, nelems, x)).collect();
    let total = nb.pow(d as u32);
    let mut coeff = vec![1.0; total];
    for (flat, c) in coeff.iter_mut().enumerate() {
        let mut rem = flat;
        for w in weights.iter().rev() {
            *c *= w[rem % nb];
            rem /= nb;
        }
    }
    let mut sum = 0.0;
    for (flat, c) in coeff.iter().enumerate() {
        let mut rem = flat;
        let mut prod = 1.0;
        for b in basis.iter().rev() {
            prod *= b[rem % nb];
            rem /= nb;
        }
        sum += c * prod;
    }
    sum
}

/// `(d² + d) + M·d·(N + k) + M·o + o`, written out independently.
pub fn span_formula(d: usize, m: usize, n: usize, k: usize, o: usize) -> usize {
    d * d + d + m * d * (n + k) + m * o + o
}

/// Random quadratic loss `Σ_q c_q (y_q − t_q)²`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub coef: Vec<f64>,
    pub target: Vec<f64>,
}

impl Quadratic {
    pub fn random<R: Rng>(o: usize, rng: &mut R) -> Self {
        Self {
            coef: (0..o).map(|_| rng.random_range(0.5..2.0)).collect(),
            target: (0..o).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        y.iter()
            .zip(&self.coef)
            .zip(&self.target)
            .map(|((y, c), t)| c * (y - t).powi(2))
            .sum()
    }

    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.coef)
            .zip(&self.target)
            .map(|((y, c), t)| 2.0 * c * (y - t))
            .collect()
    }
}

/// Worst relative error over every parameter of a random SPAN with a
/// random quadratic loss over a small batch.
pub fn span_grad_error(cfg: SpanConfig, seed: u64) -> f64 {
    let mut r = rng(seed);
    let net = SpanNet::new(cfg, &mut r).expect("valid config");
    let loss = Quadratic::random(cfg.output_dim, &mut r);
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..cfg.input_dim).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let mut store = net.params().clone();
    exhaustive_check(
        &mut store,
        |p: &mut ParamStore| {
            let mut n = SpanNet::from_params(cfg, p.clone()).expect("same shapes");
            let mut cache = n.new_cache();
            let mut total = 0.0;
            for s in &inputs {
                let y = n.forward(s, &mut cache).expect("finite").to_vec();
                total += loss.value(&y);
                n.backward(&mut cache, &loss.grad(&y), None).expect("backward");
            }
            copy_grads(p, n.params());
            total
        },
    )
}

pub fn mlp_grad_error(cfg: MlpConfig, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut net = MlpNet::new(cfg, 1.0, &mut r).expect("valid config");
    // Zero biases put dead ReLU layers exactly on a kink; move off it.
    for i in 0..net.params().len() {
        for v in net.params_mut().value_mut(i) {
            *v += r.random_range(-0.1..0.1);
        }
    }
    let loss = Quadratic::random(cfg.output_dim, &mut r);
    let inputs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..cfg.input_dim).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let mut store = net.params().clone();
    exhaustive_check(
        &mut store,
        |p: &mut ParamStore| {
            let mut n = MlpNet::from_params(cfg, p.clone()).expect("same shapes");
            let mut cache = n.new_cache();
            let mut total = 0.0;
            for s in &inputs {
                let y = n.forward(s, &mut cache).expect("finite").to_vec();
                total += loss.value(&y);
                n.backward(&mut cache, &loss.grad(&y), None).expect("backward");
            }
            copy_grads(p, n.params());
            total
        },
    )
}

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-6;

/// Worst relative error between the gradient `loss` accumulates and a
/// central difference, over every scalar in `store`.
pub fn exhaustive_check(store: &mut ParamStore, mut loss: impl FnMut(&mut ParamStore) -> f64) -> f64 {
    for i in 0..store.len() {
        store.grad_mut(i).fill(0.0);
    }
    loss(store);
    let analytic: Vec<Vec<f64>> = (0..store.len()).map(|i| store.grad(i).to_vec()).collect();
    let mut worst = 0.0_f64;
    for i in 0..store.len() {
        for j in 0..analytic[i].len() {
            let orig = store.value(i)[j];
            store.value_mut(i)[j] = orig + FD_STEP;
            let plus = loss(store);
            store.value_mut(i)[j] = orig - FD_STEP;
            let minus = loss(store);
            store.value_mut(i)[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn copy_grads(dst: &mut ParamStore, src: &ParamStore) {
    for i in 0..dst.len() {
        dst.grad_mut(i).copy_from_slice(src.grad(i));
    }
}

/// Random SPAN config within d∈[1,8], M∈[1,10], N∈[1,8], k∈[1,3].
pub fn random_span_config<R: Rng>(rng: &mut R) -> SpanConfig {
    SpanConfig::new(
        rng.random_range(1..=8),
        rng.random_range(1..=3),
        rng.random_range(1..=10),
        rng.random_range(1..=8),
        rng.random_range(1..=3),
    )
}

pub fn random_mlp_config<R: Rng>(rng: &mut R) -> MlpConfig {
    let activation = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu };
    MlpConfig::new(
        rng.random_range(1..=8),
        (rng.random_range(1..=16), rng.random_range(1..=16)),
        rng.random_range(1..=3),
        activation,
    )
}

/// Worst gradient error over `count` random configurations of each family.
pub fn grad_sweep(count: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut worst_span = 0.0_f64;
    let mut worst_mlp = 0.0_f64;
    for i in 0..count {
        let cfg = random_span_config(&mut r);
        worst_span = worst_span.max(span_grad_error(cfg, seed * 1000 + i as u64));
        let cfg = random_mlp_config(&mut r);
        worst_mlp = worst_mlp.max(mlp_grad_error(cfg, seed * 1000 + i as u64));
    }
    (worst_span, worst_mlp)
}

/// Worst deviation from the B-spline axioms over `points` random points for
/// each `(k, N)` in `{1..=4} × {1, 2, 5, 8}`. Returns
/// `(max |Σ − 1|, min value, max nonzero count minus (k + 1))`.
pub fn bspline_axioms(points: usize, seed: u64) -> (f64, f64, i64) {
    use span_rl::bspline::SplineBasis;
    let mut r = rng(seed);
    let mut worst_sum = 0.0_f64;
    let mut min_val = f64::INFINITY;
    let mut support_excess = i64::MIN;
    for k in 1..=4 {
        for n in [1, 2, 5, 8] {
            let basis = SplineBasis::new(k, n).expect("valid");
            for i in 0..points {
                let x = match i {
                    0 => 0.0,
                    1 => 1.0,
                    _ => r.random_range(0.0..=1.0),
                };
                let v = basis.eval_basis(x).expect("in domain");
                worst_sum = worst_sum.max((v.iter().sum::<f64>() - 1.0).abs());
                min_val = min_val.min(v.iter().cloned().fold(f64::INFINITY, f64::min));
                let nonzero = v.iter().filter(|b| **b != 0.0).count() as i64;
                support_excess = support_excess.max(nonzero - (k as i64 + 1));
            }
        }
    }
    (worst_sum, min_val, support_excess)
}

/// Largest `|rank-1 SPAN mode − dense contraction|` over `cases` random
/// networks with input dimension `d`, evaluated through the full forward
/// pass with an identity head.
pub fn separability_error(d: usize, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let nelems = r.random_range(1..=5);
        let degree = r.random_range(1..=3);
        let cfg = SpanConfig::new(d, 1, 1, nelems, degree);
        let mut net = SpanNet::new(cfg, &mut r).expect("valid");
        let nb = nelems + degree;
        let weights: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..nb).map(|_| r.random_range(-1.5..1.5)).collect())
            .collect();
        let w_pre: Vec<f64> = (0..d * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let b_pre: Vec<f64> = (0..d).map(|_| r.random_range(-0.5..0.5)).collect();
        {
            let p = net.params_mut();
            let set = |p: &mut ParamStore, name: &str, v: &[f64]| {
                let i = p.index_of(name).expect("named parameter");
                p.value_mut(i).copy_from_slice(v);
            };
            set(p, "w_pre", &w_pre);
            set(p, "b_pre", &b_pre);
            set(p, "spline", &weights.concat());
            set(p, "head_w", &[1.0]);
            set(p, "head_b", &[0.0]);
        }
        let s: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let z: Vec<f64> = (0..d)
            .map(|p| sigmoid(b_pre[p] + (0..d).map(|q| w_pre[p * d + q] * s[q]).sum::<f64>()))
            .collect();
        let expected = dense_separable(&weights, degree, nelems, &z);
        let mut cache = net.new_cache();
        let got = net.forward(&s, &mut cache).expect("finite")[0];
        worst = worst.max((got - expected).abs());
        let direct = net.modes_at(&z).expect("in domain")[0];
        worst = worst.max((direct - expected).abs());
    }
    worst
}
