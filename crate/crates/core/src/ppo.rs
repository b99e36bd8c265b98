//! Clipped-surrogate PPO with GAE for discrete actions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::envs::{Action, ActionSpace, Env, EnvKind};
use crate::error::{Result, SpanError};
use crate::linalg::{adam_step, AdamConfig};
use crate::metrics::EvalRecord;
use crate::net::{Arch, Net, NetCache};
use crate::policy::{categorical_entropy, entropy_grad, log_softmax, sample_categorical};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::train::{evaluate_policy, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub rollout: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            rollout: 1024,
            minibatch: 64,
            epochs: 4,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            lr: 3e-4,
            total_steps: 500_000,
            eval_interval: 5000,
            eval_episodes: 30,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpanError::Config(format!("ppo: {m}")));
        if self.rollout == 0 || self.minibatch == 0 || self.rollout % self.minibatch != 0 {
            return bad("rollout must be a positive multiple of minibatch");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr).clipped(Some(self.max_grad_norm))
    }
}

/// On-policy storage for one rollout.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    capacity: usize,
    state_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, state_dim: usize) -> Self {
        Self {
            capacity,
            state_dim,
            states: Vec::with_capacity(capacity * state_dim),
            actions: Vec::with_capacity(capacity),
            logprobs: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn push(&mut self, s: &[f64], a: usize, logprob: f64, reward: f64, value: f64, done: bool) {
        debug_assert!(!self.is_full());
        self.states.extend_from_slice(s);
        self.actions.push(a);
        self.logprobs.push(logprob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        self.states.clear();
        self.actions.clear();
        self.logprobs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    /// Fill `advantages` and `returns` from the stored trajectory.
    pub fn finish(&mut self, bootstrap: f64, gamma: f64, lambda: f64) {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, bootstrap, gamma, lambda);
        self.advantages = adv;
        self.returns = ret;
    }
}

/// Generalised advantage estimates and returns. `bootstrap` is `V` of the
/// state following the last stored step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)·A)` and its
/// derivative with respect to `log π(a|s)`.
pub fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, ratio * adv)
    } else {
        (clipped, 0.0)
    }
}

/// Zero-mean, unit-variance rescaling (population statistics).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for x in xs {
        *x = (*x - mean) * scale;
    }
}

/// Mean losses over every minibatch of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Actor, critic and their forward caches.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub actor: Net,
    pub critic: Net,
    actor_cache: NetCache,
    critic_cache: NetCache,
}

impl PpoAgent {
    pub fn new(actor: Net, critic: Net) -> Self {
        let actor_cache = actor.new_cache();
        let critic_cache = critic.new_cache();
        Self {
            actor,
            critic,
            actor_cache,
            critic_cache,
        }
    }

    pub fn build(arch: &Arch, critic_arch: &Arch, state_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        let policy_scale = match arch {
            Arch::Mlp { .. } => 0.01,
            Arch::Span { .. } => 1.0,
        };
        let actor = Net::build(arch, state_dim, n_actions, policy_scale, &mut rng)?;
        let critic = Net::build(critic_arch, state_dim, 1, 1.0, &mut rng)?;
        Ok(Self::new(actor, critic))
    }

    pub fn param_count(&self) -> usize {
        self.actor.num_params() + self.critic.num_params()
    }

    /// `(log π(·|s), π(·|s))`.
    pub fn policy(&mut self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(log_softmax(self.actor.forward(s, &mut self.actor_cache)?))
    }

    pub fn value(&mut self, s: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(s, &mut self.critic_cache)?[0])
    }

    /// Accumulate gradients of the per-sample PPO loss
    /// `−surrogate − c_ent·H + c_v·(V − R)²`, each scaled by `weight`.
    /// Returns `(surrogate, value loss, entropy, clipped)`.
    pub fn accumulate_sample(
        &mut self,
        s: &[f64],
        action: usize,
        old_logprob: f64,
        adv: f64,
        ret: f64,
        cfg: &PpoConfig,
        weight: f64,
    ) -> Result<(f64, f64, f64, bool)> {
        let (logp, p) = self.policy(s)?;
        let ratio = (logp[action] - old_logprob).exp();
        let (surr, d_surr) = clipped_surrogate(ratio, adv, cfg.clip);
        let entropy = categorical_entropy(&logp, &p);
        if !surr.is_finite() || !entropy.is_finite() {
            return Err(SpanError::fault(
                "actor",
                format!("non-finite policy loss (ratio {ratio}, advantage {adv})"),
            ));
        }
        let h_grad = entropy_grad(&logp, &p);
        let g: Vec<f64> = (0..p.len())
            .map(|j| {
                let dlogp = if j == action { 1.0 - p[j] } else { -p[j] };
                weight * (-d_surr * dlogp - cfg.entropy_coef * h_grad[j])
            })
            .collect();
        self.actor.backward(&mut self.actor_cache, &g, None)?;

        let v = self.value(s)?;
        let err = v - ret;
        if !err.is_finite() {
            return Err(SpanError::fault("critic", format!("non-finite value loss (V {v}, return {ret})")));
        }
        let gv = [weight * cfg.value_coef * 2.0 * err];
        self.critic.backward(&mut self.critic_cache, &gv, None)?;
        Ok((surr, err * err, entropy, (ratio - 1.0).abs() > cfg.clip))
    }
}

/// Several epochs of minibatch updates over a finished buffer.
pub fn ppo_update<R: rand::Rng + ?Sized>(
    agent: &mut PpoAgent,
    buffer: &mut RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    if buffer.advantages.len() != buffer.len() {
        return Err(SpanError::Protocol("advantages not computed for this rollout".into()));
    }
    let mut advantages = buffer.advantages.clone();
    if cfg.normalize_advantages {
        normalize(&mut advantages);
    }
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = PpoStats::default();
    let mut samples = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (surr, vloss, ent, clipped) = agent.accumulate_sample(
                    buffer.state(i),
                    buffer.actions[i],
                    buffer.logprobs[i],
                    advantages[i],
                    buffer.returns[i],
                    cfg,
                    w,
                )?;
                stats.policy_loss -= surr;
                stats.value_loss += vloss;
                stats.entropy += ent;
                stats.clip_fraction += f64::from(u8::from(clipped));
                samples += 1;
            }
            adam_step(agent.actor.params_mut(), &adam)?;
            adam_step(agent.critic.params_mut(), &adam)?;
            stats.minibatches += 1;
        }
    }
    if samples > 0 {
        let n = samples as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.clip_fraction /= n;
    }
    Ok(stats)
}

/// Train a PPO agent on `kind` and return its evaluation curve and checkpoint.
pub fn ppo_train(kind: EnvKind, actor_arch: &Arch, critic_arch: &Arch, cfg: &PpoConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = kind.spec();
    let ActionSpace::Discrete(n_actions) = spec.action_space else {
        return Err(SpanError::Config(format!("ppo needs a discrete action space; {} is continuous", spec.name)));
    };
    let mut agent = PpoAgent::build(actor_arch, critic_arch, spec.state_dim, n_actions, seed)?;
    let mut action_rng = stream_rng(seed, Stream::Action);
    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut env = Env::new(kind);
    let mut buffer = RolloutBuffer::new(cfg.rollout, spec.state_dim);
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(seed, Stream::EnvReset, episode));
    let mut step = 0u64;
    let mut updates = 0u64;

    while step < cfg.total_steps {
        buffer.clear();
        let mut last_done = false;
        while !buffer.is_full() && step < cfg.total_steps {
            let (logp, p) = agent.policy(&state)?;
            let a = sample_categorical(&p, &mut action_rng);
            let v = agent.value(&state)?;
            let t = env.step(&Action::Discrete(a))?;
            let mut reward = t.reward;
            if t.truncated && !t.terminated {
                reward += cfg.gamma * agent.value(&t.next_state)?;
            }
            buffer.push(&state, a, logp[a], reward, v, t.done());
            step += 1;
            last_done = t.done();
            if last_done {
                episode += 1;
                state = env.reset(derive_seed(seed, Stream::EnvReset, episode));
            } else {
                state = t.next_state;
            }
            if step % cfg.eval_interval == 0 {
                let round = step / cfg.eval_interval - 1;
                let returns = evaluate_policy(&agent.actor, kind, cfg.eval_episodes, seed, round)?;
                curve.push(EvalRecord::new(step, returns));
            }
        }
        let bootstrap = if last_done { 0.0 } else { agent.value(&state)? };
        buffer.finish(bootstrap, cfg.gamma, cfg.lambda);
        ppo_update(&mut agent, &mut buffer, cfg, &mut shuffle_rng)?;
        updates += 1;
    }

    let mut checkpoint = Checkpoint::new();
    checkpoint.set_meta("algorithm", "ppo");
    checkpoint.set_meta("env", spec.name);
    checkpoint.set_meta("seed", seed.to_string());
    checkpoint.set_meta("steps", step.to_string());
    checkpoint.insert_net("actor", &agent.actor);
    checkpoint.insert_net("critic", &agent.critic);
    Ok(TrainOutcome {
        curve,
        checkpoint,
        param_count: agent.param_count(),
        env_steps: env.total_steps(),
        updates,
        normalized_score: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Activation;

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = [1.0, 0.5, -0.2];
        let v = [0.3, 0.1, 0.4];
        let d = [false, true, false];
        let (adv, ret) = compute_gae(&r, &v, &d, 0.7, 0.9, 0.0);
        assert_eq!(adv[0], 1.0 + 0.9 * 0.1 - 0.3);
        assert_eq!(adv[1], 0.5 - 0.1);
        assert_eq!(adv[2], -0.2 + 0.9 * 0.7 - 0.4);
        for i in 0..3 {
            assert_eq!(ret[i], adv[i] + v[i]);
        }
    }

    #[test]
    fn gae_single_step() {
        let (adv, ret) = compute_gae(&[1.0], &[0.0], &[false], 0.0, 0.99, 0.95);
        assert_eq!((adv[0], ret[0]), (1.0, 1.0));
    }

    #[test]
    fn gae_three_steps_by_hand() {
        let (g, l) = (0.99, 0.95);
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.25, 0.125];
        let boot = 1.0;
        let d0 = r[0] + g * v[1] - v[0];
        let d1 = r[1] + g * v[2] - v[1];
        let d2 = r[2] + g * boot - v[2];
        let a2 = d2;
        let a1 = d1 + g * l * a2;
        let a0 = d0 + g * l * a1;
        let (adv, _) = compute_gae(&r, &v, &[false; 3], boot, g, l);
        assert!((adv[0] - a0).abs() < 1e-14);
        assert!((adv[1] - a1).abs() < 1e-14);
        assert!((adv[2] - a2).abs() < 1e-14);
    }

    #[test]
    fn clip_arithmetic() {
        let (obj, d) = clipped_surrogate(1.5, 2.0, 0.2);
        assert!((obj - 1.2 * 2.0).abs() < 1e-15);
        assert_eq!(d, 0.0);
        let (obj, d) = clipped_surrogate(1.0, -3.0, 0.2);
        assert_eq!((obj, d), (-3.0, -3.0));
    }

    #[test]
    fn unit_ratio_gives_vanilla_policy_gradient() {
        // At ρ = 1 the surrogate gradient equals ∇(A·log π(a|s)).
        let arch = Arch::Mlp {
            hidden: (4, 3),
            activation: Activation::Tanh,
        };
        let mut agent = PpoAgent::build(&arch, &arch, 4, 2, 3).unwrap();
        let cfg = PpoConfig {
            entropy_coef: 0.0,
            value_coef: 0.0,
            ..PpoConfig::default()
        };
        let s = [0.1, -0.2, 0.03, 0.4];
        let (logp, _) = agent.policy(&s).unwrap();
        agent.accumulate_sample(&s, 1, logp[1], 0.7, 0.0, &cfg, 1.0).unwrap();
        let ppo_grad: Vec<f64> = (0..agent.actor.params().len())
            .flat_map(|i| agent.actor.params().grad(i).to_vec())
            .collect();
        agent.actor.params_mut().zero_grad();

        let (_, p) = agent.policy(&s).unwrap();
        let g = [-0.7 * (-p[0]), -0.7 * (1.0 - p[1])];
        let mut cache = agent.actor.new_cache();
        agent.actor.forward(&s, &mut cache).unwrap();
        agent.actor.backward(&mut cache, &g, None).unwrap();
        let pg: Vec<f64> = (0..agent.actor.params().len())
            .flat_map(|i| agent.actor.params().grad(i).to_vec())
            .collect();
        for (a, b) in ppo_grad.iter().zip(&pg) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_budget_gives_empty_curve() {
        let arch = Arch::Span {
            nmodes: 1,
            nelems: 2,
            degree: 1,
        };
        let cfg = PpoConfig {
            total_steps: 0,
            ..PpoConfig::default()
        };
        let out = ppo_train(EnvKind::CartPole, &arch, &arch, &cfg, 0).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.env_steps, 0);
    }

    #[test]
    fn rejects_continuous_env_and_bad_config() {
        let arch = Arch::Span {
            nmodes: 1,
            nelems: 2,
            degree: 1,
        };
        assert!(ppo_train(EnvKind::Pendulum, &arch, &arch, &PpoConfig::default(), 0).is_err());
        let cfg = PpoConfig {
            rollout: 100,
            minibatch: 64,
            ..PpoConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(SpanError::Config(_))));
    }

    #[test]
    fn short_run_is_reproducible() {
        let arch = Arch::Span {
            nmodes: 1,
            nelems: 2,
            degree: 1,
        };
        let cfg = PpoConfig {
            total_steps: 2048,
            eval_interval: 1024,
            eval_episodes: 2,
            ..PpoConfig::default()
        };
        let a = ppo_train(EnvKind::CartPole, &arch, &arch, &cfg, 11).unwrap();
        let b = ppo_train(EnvKind::CartPole, &arch, &arch, &cfg, 11).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.len(), 2);
        assert_eq!(a.env_steps, 2048);
        assert_eq!(a.updates, 2);
    }
}
