//! Categorical and tanh-squashed Gaussian action distributions over network
//! outputs, with the derivatives the training losses need.

use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `log(1 − tanh(u)² + ε)`.
pub const SQUASH_EPS: f64 = 1e-6;
/// Dataset actions are clipped to `±(1 − ACTION_CLIP_EPS)` before `atanh`.
pub const ACTION_CLIP_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

// ---------------------------------------------------------------- categorical

/// Log-probabilities and probabilities of `softmax(logits)`.
pub fn log_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let logp: Vec<f64> = logits.iter().map(|l| l - lse).collect();
    let p = logp.iter().map(|x| x.exp()).collect();
    (logp, p)
}

pub fn categorical_entropy(logp: &[f64], p: &[f64]) -> f64 {
    -p.iter().zip(logp).map(|(pi, li)| pi * li).sum::<f64>()
}

/// `∂H/∂logits_j = −p_j·(log p_j + H)`.
pub fn entropy_grad(logp: &[f64], p: &[f64]) -> Vec<f64> {
    let h = categorical_entropy(logp, p);
    p.iter().zip(logp).map(|(pi, li)| -pi * (li + h)).collect()
}

/// Inverse-CDF draw from probabilities `p`.
pub fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// First index of the largest entry.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

// ----------------------------------------------------- tanh-squashed Gaussian

/// Mean and clamped log-std read from an actor output `[μ; log σ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Whether the raw log-std was inside the clamp range (gradient passes).
    pub log_std_free: Vec<bool>,
}

impl GaussianHead {
    pub fn from_output(out: &[f64]) -> Self {
        let a = out.len() / 2;
        let mean = out[..a].to_vec();
        let mut log_std = Vec::with_capacity(a);
        let mut log_std_free = Vec::with_capacity(a);
        for &raw in &out[a..] {
            log_std.push(raw.clamp(LOG_STD_MIN, LOG_STD_MAX));
            log_std_free.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&raw));
        }
        Self {
            mean,
            log_std,
            log_std_free,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Deterministic action `tanh(μ)` in `[-1, 1]`.
    pub fn mode(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m.tanh()).collect()
    }

    /// Reparameterised draw `u = μ + σ·ε`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SquashedSample {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.with_noise(&eps)
    }

    pub fn with_noise(&self, eps: &[f64]) -> SquashedSample {
        let mut pre = Vec::with_capacity(self.dim());
        let mut action = Vec::with_capacity(self.dim());
        let mut log_prob = 0.0;
        for i in 0..self.dim() {
            let std = self.log_std[i].exp();
            let u = self.mean[i] + std * eps[i];
            let a = u.tanh();
            log_prob += -0.5 * eps[i] * eps[i] - self.log_std[i] - HALF_LN_2PI
                - (1.0 - a * a + SQUASH_EPS).ln();
            pre.push(u);
            action.push(a);
        }
        SquashedSample {
            eps: eps.to_vec(),
            pre_tanh: pre,
            action,
            log_prob,
        }
    }

    /// Log-density of a given squashed action `a ∈ (−1, 1)`, after clipping
    /// to `±(1 − ACTION_CLIP_EPS)`, with `∂/∂μ` and `∂/∂(log σ)`.
    pub fn log_prob_of(&self, action: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let lim = 1.0 - ACTION_CLIP_EPS;
        let mut lp = 0.0;
        let mut d_mean = Vec::with_capacity(self.dim());
        let mut d_log_std = Vec::with_capacity(self.dim());
        for (i, &a_raw) in action.iter().enumerate() {
            let a = a_raw.clamp(-lim, lim);
            let u = a.atanh();
            let std = self.log_std[i].exp();
            let z = (u - self.mean[i]) / std;
            lp += -0.5 * z * z - self.log_std[i] - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
            d_mean.push(z / std);
            d_log_std.push(z * z - 1.0);
        }
        (lp, d_mean, d_log_std)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub eps: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    /// `tanh(u)` in `[-1, 1]`.
    pub action: Vec<f64>,
    pub log_prob: f64,
}

impl SquashedSample {
    /// Gradient of `coef·log π + Σ_i action_grad_i·a_i` with respect to the
    /// raw actor output `[μ; log σ]`, holding the noise fixed.
    pub fn output_grad(
        &self,
        head: &GaussianHead,
        log_prob_coef: f64,
        action_grad: &[f64],
    ) -> Vec<f64> {
        let n = head.dim();
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            let a = self.action[i];
            let one_minus = 1.0 - a * a;
            // d log π / du through the squash correction.
            let dlogp_du = 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
            let du = log_prob_coef * dlogp_du + action_grad[i] * one_minus;
            let std = head.log_std[i].exp();
            g[i] = du;
            if head.log_std_free[i] {
                g[n + i] = du * std * self.eps[i] - log_prob_coef;
            }
        }
        g
    }
}
