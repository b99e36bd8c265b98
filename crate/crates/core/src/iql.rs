//! Implicit Q-learning from a fixed dataset: expectile regression of a state
//! value toward the twin target critics, TD regression of the critics onto
//! that value, and advantage-weighted extraction of a tanh-Gaussian policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::OfflineDataset;
use crate::envs::EnvKind;
use crate::error::{Result, SpanError};
use crate::linalg::{adam_step, AdamConfig};
use crate::metrics::EvalRecord;
use crate::net::{Arch, Net, NetCache};
use crate::policy::GaussianHead;
use crate::rng::{stream_rng, Stream};
use crate::sac::soft_update;
use crate::train::{evaluate_policy, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqlConfig {
    pub iterations: u64,
    pub batch: usize,
    pub gamma: f64,
    pub expectile: f64,
    pub beta: f64,
    pub tau: f64,
    pub weight_clip: f64,
    pub lr: f64,
    pub eval_episodes: usize,
    /// Standardise states with dataset statistics during training. The
    /// statistics are folded into the input layers afterwards, so saved
    /// networks take raw states.
    pub normalize_states: bool,
}

impl Default for IqlConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch: 256,
            gamma: 0.99,
            expectile: 0.7,
            beta: 3.0,
            tau: 0.005,
            weight_clip: 100.0,
            lr: 3e-4,
            eval_episodes: 100,
            normalize_states: true,
        }
    }
}

impl IqlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpanError::Config(format!("iql: {m}")));
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return bad("expectile must lie in (0, 1)");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.weight_clip > 0.0) {
            return bad("weight_clip must be positive");
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

/// `|τ − 1(u < 0)|·u²`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// `min(exp(β·advantage), clip)`.
pub fn awr_weight(advantage: f64, beta: f64, clip: f64) -> f64 {
    (beta * advantage).exp().min(clip)
}

/// Mean losses of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IqlStats {
    pub value_loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_weight: f64,
}

/// The five networks IQL trains (plus two targets).
#[derive(Debug, Clone)]
pub struct IqlAgent {
    pub actor: Net,
    pub value: Net,
    pub q1: Net,
    pub q2: Net,
    pub q1_target: Net,
    pub q2_target: Net,
    actor_cache: NetCache,
    value_cache: NetCache,
    q_cache: NetCache,
    sa: Vec<f64>,
}

impl IqlAgent {
    pub fn build(actor_arch: &Arch, critic_arch: &Arch, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        let actor = Net::build(actor_arch, state_dim, 2 * action_dim, 1.0, &mut rng)?;
        let value = Net::build(critic_arch, state_dim, 1, 1.0, &mut rng)?;
        let q1 = Net::build(critic_arch, state_dim + action_dim, 1, 1.0, &mut rng)?;
        let q2 = Net::build(critic_arch, state_dim + action_dim, 1, 1.0, &mut rng)?;
        Ok(Self {
            actor_cache: actor.new_cache(),
            value_cache: value.new_cache(),
            q_cache: q1.new_cache(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            value,
            q1,
            q2,
            sa: Vec::new(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.actor.num_params() + self.value.num_params() + self.q1.num_params() + self.q2.num_params()
    }

    fn join(&mut self, s: &[f64], a: &[f64]) {
        self.sa.clear();
        self.sa.extend_from_slice(s);
        self.sa.extend_from_slice(a);
    }

    fn target_min(&mut self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.join(s, a);
        let t1 = self.q1_target.forward(&self.sa, &mut self.q_cache)?[0];
        let t2 = self.q2_target.forward(&self.sa, &mut self.q_cache)?[0];
        Ok(t1.min(t2))
    }

    /// One value, actor and critic step on the batch `idx`, then target
    /// tracking.
    pub fn update(&mut self, data: &OfflineDataset, idx: &[usize], cfg: &IqlConfig) -> Result<IqlStats> {
        let adam = AdamConfig::with_lr(cfg.lr);
        let w = 1.0 / idx.len() as f64;
        let mut stats = IqlStats::default();
        let q_targets: Vec<f64> = idx
            .iter()
            .map(|&i| self.target_min(data.state(i), data.action(i)))
            .collect::<Result<_>>()?;

        // Expectile regression of V toward min Q̄.
        for (&i, &qt) in idx.iter().zip(&q_targets) {
            let v = self.value.forward(data.state(i), &mut self.value_cache)?[0];
            let u = qt - v;
            stats.value_loss += w * expectile_loss(u, cfg.expectile);
            let g = -2.0 * expectile_weight(u, cfg.expectile) * u * w;
            self.value.backward(&mut self.value_cache, &[g], None)?;
        }
        if !stats.value_loss.is_finite() {
            return Err(SpanError::fault("value", "non-finite expectile loss"));
        }
        adam_step(self.value.params_mut(), &adam)?;

        // Advantage-weighted regression on dataset actions.
        for (&i, &qt) in idx.iter().zip(&q_targets) {
            let v = self.value.forward(data.state(i), &mut self.value_cache)?[0];
            let weight = awr_weight(qt - v, cfg.beta, cfg.weight_clip);
            let head = GaussianHead::from_output(self.actor.forward(data.state(i), &mut self.actor_cache)?);
            let (logp, d_mean, d_log_std) = head.log_prob_of(data.action(i));
            stats.actor_loss -= w * weight * logp;
            stats.mean_weight += w * weight;
            let n = head.dim();
            let mut g = vec![0.0; 2 * n];
            for k in 0..n {
                g[k] = -w * weight * d_mean[k];
                if head.log_std_free[k] {
                    g[n + k] = -w * weight * d_log_std[k];
                }
            }
            self.actor.backward(&mut self.actor_cache, &g, None)?;
        }
        if !stats.actor_loss.is_finite() {
            return Err(SpanError::fault("actor", "non-finite advantage-weighted loss"));
        }
        adam_step(self.actor.params_mut(), &adam)?;

        // TD regression of both critics onto r + γ(1 − done)·V(s′).
        for &i in idx {
            let next_v = if data.terminals[i] {
                0.0
            } else {
                self.value.forward(data.next_state(i), &mut self.value_cache)?[0]
            };
            let y = data.rewards[i] + cfg.gamma * next_v;
            self.join(data.state(i), data.action(i));
            for net in [&mut self.q1, &mut self.q2] {
                let q = net.forward(&self.sa, &mut self.q_cache)?[0];
                let err = q - y;
                stats.critic_loss += w * err * err;
                net.backward(&mut self.q_cache, &[2.0 * w * err], None)?;
            }
        }
        if !stats.critic_loss.is_finite() {
            return Err(SpanError::fault("q1", "non-finite critic loss"));
        }
        adam_step(self.q1.params_mut(), &adam)?;
        adam_step(self.q2.params_mut(), &adam)?;
        soft_update(self.q1_target.params_mut(), self.q1.params(), cfg.tau)?;
        soft_update(self.q2_target.params_mut(), self.q2.params(), cfg.tau)?;
        Ok(stats)
    }
}

/// Run the gradient iterations only; never touches an environment.
pub fn iql_fit(data: &OfflineDataset, actor_arch: &Arch, critic_arch: &Arch, cfg: &IqlConfig, seed: u64) -> Result<IqlAgent> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(SpanError::Config("empty dataset".into()));
    }
    let mut agent = IqlAgent::build(actor_arch, critic_arch, data.meta.state_dim, data.meta.action_dim, seed)?;
    let stats = cfg.normalize_states.then(|| state_stats(data));
    let normalized;
    let train_data = match &stats {
        Some((mean, std)) => {
            normalized = standardized(data, mean, std);
            &normalized
        }
        None => data,
    };
    let mut rng = stream_rng(seed, Stream::Replay);
    let mut idx = vec![0usize; cfg.batch];
    for _ in 0..cfg.iterations {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..data.len());
        }
        agent.update(train_data, &idx, cfg)?;
    }
    if let Some((mean, std)) = stats {
        let a = data.meta.action_dim;
        let sa_shift: Vec<f64> = mean.iter().copied().chain(std::iter::repeat_n(0.0, a)).collect();
        let sa_scale: Vec<f64> = std.iter().copied().chain(std::iter::repeat_n(1.0, a)).collect();
        agent.actor.fold_input_affine(&mean, &std)?;
        agent.value.fold_input_affine(&mean, &std)?;
        for net in [&mut agent.q1, &mut agent.q2, &mut agent.q1_target, &mut agent.q2_target] {
            net.fold_input_affine(&sa_shift, &sa_scale)?;
        }
    }
    Ok(agent)
}

/// Per-dimension mean and standard deviation (floored at 1e-3) of the
/// dataset states.
pub fn state_stats(data: &OfflineDataset) -> (Vec<f64>, Vec<f64>) {
    let d = data.meta.state_dim;
    let n = data.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for s in data.states.chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in data.states.chunks_exact(d) {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
            *v += (x - m).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-3)).collect())
}

fn standardized(data: &OfflineDataset, mean: &[f64], std: &[f64]) -> OfflineDataset {
    let d = data.meta.state_dim;
    let apply = |xs: &[f64]| -> Vec<f64> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| (x - mean[i % d]) / std[i % d])
            .collect()
    };
    OfflineDataset {
        meta: data.meta.clone(),
        states: apply(&data.states),
        actions: data.actions.clone(),
        rewards: data.rewards.clone(),
        next_states: apply(&data.next_states),
        terminals: data.terminals.clone(),
    }
}

/// Fit on `data`, then evaluate the deterministic policy and report the
/// normalised score against the dataset anchors.
pub fn iql_train(data: &OfflineDataset, actor_arch: &Arch, critic_arch: &Arch, cfg: &IqlConfig, seed: u64) -> Result<TrainOutcome> {
    let kind = EnvKind::parse(&data.meta.env)?;
    let agent = iql_fit(data, actor_arch, critic_arch, cfg, seed)?;
    let returns = evaluate_policy(&agent.actor, kind, cfg.eval_episodes, seed, 0)?;
    let record = EvalRecord::new(cfg.iterations, returns);
    let score = data.meta.normalize(record.mean);

    let mut checkpoint = Checkpoint::new();
    checkpoint.set_meta("algorithm", "iql");
    checkpoint.set_meta("env", data.meta.env.clone());
    checkpoint.set_meta("seed", seed.to_string());
    checkpoint.set_meta("iterations", cfg.iterations.to_string());
    checkpoint.insert_net("actor", &agent.actor);
    checkpoint.insert_net("value", &agent.value);
    checkpoint.insert_net("q1", &agent.q1);
    checkpoint.insert_net("q2", &agent.q2);
    Ok(TrainOutcome {
        curve: vec![record],
        checkpoint,
        param_count: agent.param_count(),
        env_steps: 0,
        updates: cfg.iterations,
        normalized_score: Some(score),
    })
}
