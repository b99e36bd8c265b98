//! Soft actor-critic with twin critics, Polyak-averaged targets and a learned
//! entropy temperature. Actions are handled in the normalised box `[-1, 1]^A`
//! and scaled to the environment bound only when applied.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::envs::{Action, ActionSpace, Env, EnvKind};
use crate::error::{Result, SpanError};
use crate::linalg::{adam_step, AdamConfig, DenseArray, ParamStore};
use crate::metrics::EvalRecord;
use crate::net::{Arch, Net, NetCache};
use crate::policy::{GaussianHead, SquashedSample};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::train::{evaluate_policy, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub batch: usize,
    pub buffer_capacity: usize,
    pub warmup: u64,
    pub tau: f64,
    pub gamma: f64,
    pub lr: f64,
    pub target_entropy_scale: f64,
    pub init_log_alpha: f64,
    pub max_grad_norm: f64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            batch: 128,
            buffer_capacity: 1_000_000,
            warmup: 1000,
            tau: 0.005,
            gamma: 0.99,
            lr: 3e-4,
            target_entropy_scale: 1.0,
            init_log_alpha: 0.0,
            max_grad_norm: 10.0,
            total_steps: 100_000,
            eval_interval: 5000,
            eval_episodes: 30,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SpanError::Config(format!("sac: {m}")));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad("buffer_capacity must be at least batch > 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
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

/// Fixed-capacity ring of transitions; the oldest entry is overwritten once full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    terminals: Vec<bool>,
    cursor: usize,
    size: usize,
}

/// Borrowed view of one stored transition.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub reward: f64,
    pub next_state: &'a [f64],
    pub terminal: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            terminals: Vec::new(),
            cursor: 0,
            size: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, s: &[f64], a: &[f64], r: f64, s2: &[f64], terminal: bool) {
        let (d, k) = (self.state_dim, self.action_dim);
        if self.size < self.capacity {
            self.states.extend_from_slice(s);
            self.actions.extend_from_slice(a);
            self.rewards.push(r);
            self.next_states.extend_from_slice(s2);
            self.terminals.push(terminal);
            self.size += 1;
        } else {
            let i = self.cursor;
            self.states[i * d..(i + 1) * d].copy_from_slice(s);
            self.actions[i * k..(i + 1) * k].copy_from_slice(a);
            self.rewards[i] = r;
            self.next_states[i * d..(i + 1) * d].copy_from_slice(s2);
            self.terminals[i] = terminal;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Sample<'_> {
        let (d, k) = (self.state_dim, self.action_dim);
        Sample {
            state: &self.states[i * d..(i + 1) * d],
            action: &self.actions[i * k..(i + 1) * k],
            reward: self.rewards[i],
            next_state: &self.next_states[i * d..(i + 1) * d],
            terminal: self.terminals[i],
        }
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.size)).collect()
    }
}

/// `target ← (1 − τ)·target + τ·online`, entrywise.
pub fn soft_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<()> {
    target.blend_toward(online, tau)
}

/// Bootstrap target `r + γ(1 − done)(min(q1, q2) − α·log π)`.
pub fn soft_target(reward: f64, gamma: f64, terminal: bool, q1: f64, q2: f64, alpha_logp: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * (q1.min(q2) - alpha_logp)
    }
}

/// `∂/∂(log α)` of the temperature loss `−log α·(log π + H̄)` at batch mean
/// `mean_logp`.
pub fn temperature_grad(mean_logp: f64, target_entropy: f64) -> f64 {
    -(mean_logp + target_entropy)
}

/// Mean losses of one gradient step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Actor, twin critics with targets, and the temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub actor: Net,
    pub q1: Net,
    pub q2: Net,
    pub q1_target: Net,
    pub q2_target: Net,
    /// Single entry `log_alpha` with its own Adam state.
    pub log_alpha: ParamStore,
    pub target_entropy: f64,
    action_dim: usize,
    actor_cache: NetCache,
    q1_cache: NetCache,
    q2_cache: NetCache,
    sa: Vec<f64>,
}

impl SacAgent {
    pub fn build(actor_arch: &Arch, critic_arch: &Arch, state_dim: usize, action_dim: usize, cfg: &SacConfig, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, Stream::Init);
        let actor = Net::build(actor_arch, state_dim, 2 * action_dim, 1.0, &mut rng)?;
        let q1 = Net::build(critic_arch, state_dim + action_dim, 1, 1.0, &mut rng)?;
        let q2 = Net::build(critic_arch, state_dim + action_dim, 1, 1.0, &mut rng)?;
        Ok(Self::from_nets(actor, q1, q2, action_dim, cfg))
    }

    pub fn from_nets(actor: Net, q1: Net, q2: Net, action_dim: usize, cfg: &SacConfig) -> Self {
        let mut log_alpha = ParamStore::new();
        log_alpha.add("log_alpha", DenseArray::from_vec(&[1], vec![cfg.init_log_alpha]).expect("finite"));
        Self {
            actor_cache: actor.new_cache(),
            q1_cache: q1.new_cache(),
            q2_cache: q2.new_cache(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha,
            target_entropy: -cfg.target_entropy_scale * action_dim as f64,
            action_dim,
            sa: Vec::new(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value(0)[0].exp()
    }

    pub fn param_count(&self) -> usize {
        self.actor.num_params() + self.q1.num_params() + self.q2.num_params()
    }

    pub fn head(&mut self, s: &[f64]) -> Result<GaussianHead> {
        Ok(GaussianHead::from_output(self.actor.forward(s, &mut self.actor_cache)?))
    }

    /// Reparameterised normalised action and its log-probability.
    pub fn actor_sample<R: Rng + ?Sized>(&mut self, s: &[f64], rng: &mut R) -> Result<SquashedSample> {
        Ok(self.head(s)?.sample(rng))
    }

    fn join(&mut self, s: &[f64], a: &[f64]) {
        self.sa.clear();
        self.sa.extend_from_slice(s);
        self.sa.extend_from_slice(a);
    }

    /// Twin target-network values at `(s, a)`.
    fn target_values(&mut self, s: &[f64], a: &[f64]) -> Result<(f64, f64)> {
        self.join(s, a);
        let t1 = self.q1_target.forward(&self.sa, &mut self.q1_cache)?[0];
        let t2 = self.q2_target.forward(&self.sa, &mut self.q2_cache)?[0];
        Ok((t1, t2))
    }

    /// One squared-error step of both critics toward the soft target.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, idx: &[usize], cfg: &SacConfig, rng: &mut R) -> Result<f64> {
        let alpha = self.alpha();
        let w = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        for &i in idx {
            let t = buffer.get(i);
            let next = self.actor_sample(t.next_state, rng)?;
            let (t1, t2) = self.target_values(t.next_state, &next.action)?;
            let y = soft_target(t.reward, cfg.gamma, t.terminal, t1, t2, alpha * next.log_prob);
            if !y.is_finite() {
                return Err(SpanError::fault("q_target", format!("non-finite bootstrap target {y}")));
            }
            self.join(t.state, t.action);
            for (net, cache) in [(&mut self.q1, &mut self.q1_cache), (&mut self.q2, &mut self.q2_cache)] {
                let q = net.forward(&self.sa, cache)?[0];
                let err = q - y;
                loss += w * err * err;
                net.backward(cache, &[w * 2.0 * err], None)?;
            }
        }
        let adam = cfg.adam();
        adam_step(self.q1.params_mut(), &adam)?;
        adam_step(self.q2.params_mut(), &adam)?;
        Ok(0.5 * loss)
    }

    /// Accumulate actor gradients of `α·log π(ã|s) − min(Q1, Q2)(s, ã)` for
    /// one state, with `ã` drawn from `noise`. Returns the objective value and
    /// the log-probability. Critic parameter gradients touched on the way are
    /// cleared.
    pub fn actor_objective(&mut self, s: &[f64], noise: &[f64], alpha: f64, weight: f64) -> Result<(f64, f64)> {
        let head = self.head(s)?;
        let sample = head.with_noise(noise);
        self.join(s, &sample.action);
        let q1 = self.q1.forward(&self.sa, &mut self.q1_cache)?[0];
        let q2 = self.q2.forward(&self.sa, &mut self.q2_cache)?[0];
        let mut din = vec![0.0; self.sa.len()];
        if q1 <= q2 {
            self.q1.backward(&mut self.q1_cache, &[1.0], Some(&mut din))?;
        } else {
            self.q2.backward(&mut self.q2_cache, &[1.0], Some(&mut din))?;
        }
        let state_dim = s.len();
        self.q1.params_mut().zero_grad();
        self.q2.params_mut().zero_grad();
        let dq_da: Vec<f64> = din[state_dim..].iter().map(|g| -weight * g).collect();
        let g = sample.output_grad(&head, weight * alpha, &dq_da);
        self.actor.backward(&mut self.actor_cache, &g, None)?;
        Ok((alpha * sample.log_prob - q1.min(q2), sample.log_prob))
    }

    /// One step on the actor and on `log α`.
    pub fn actor_and_alpha_update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, idx: &[usize], cfg: &SacConfig, rng: &mut R) -> Result<(f64, f64, f64)> {
        let alpha = self.alpha();
        let w = 1.0 / idx.len() as f64;
        let mut actor_loss = 0.0;
        let mut mean_logp = 0.0;
        let mut noise = vec![0.0; self.action_dim];
        for &i in idx {
            for n in noise.iter_mut() {
                *n = rng.sample(rand_distr::StandardNormal);
            }
            let (obj, logp) = self.actor_objective(buffer.get(i).state, &noise, alpha, w)?;
            actor_loss += w * obj;
            mean_logp += w * logp;
        }
        if !actor_loss.is_finite() {
            return Err(SpanError::fault("actor", format!("non-finite actor loss {actor_loss}")));
        }
        let adam = cfg.adam();
        adam_step(self.actor.params_mut(), &adam)?;

        self.log_alpha.grad_mut(0)[0] = temperature_grad(mean_logp, self.target_entropy);
        let alpha_loss = -self.log_alpha.value(0)[0] * (mean_logp + self.target_entropy);
        adam_step(&mut self.log_alpha, &adam)?;
        Ok((actor_loss, alpha_loss, -mean_logp))
    }

    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        soft_update(self.q1_target.params_mut(), self.q1.params(), tau)?;
        soft_update(self.q2_target.params_mut(), self.q2.params(), tau)
    }

    /// Critic step, actor and temperature step, then target tracking.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, cfg: &SacConfig, rng: &mut R) -> Result<SacStats> {
        let idx = buffer.sample_indices(cfg.batch, rng);
        let critic_loss = self.critic_update(buffer, &idx, cfg, rng)?;
        let (actor_loss, alpha_loss, entropy) = self.actor_and_alpha_update(buffer, &idx, cfg, rng)?;
        self.update_targets(cfg.tau)?;
        Ok(SacStats {
            critic_loss,
            actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy,
        })
    }

    pub fn checkpoint(&self, env: &str, seed: u64, steps: u64) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("algorithm", "sac");
        c.set_meta("env", env);
        c.set_meta("seed", seed.to_string());
        c.set_meta("steps", steps.to_string());
        c.set_meta("log_alpha", format!("{:e}", self.log_alpha.value(0)[0]));
        c.insert_net("actor", &self.actor);
        c.insert_net("q1", &self.q1);
        c.insert_net("q2", &self.q2);
        c
    }
}

/// Progress of a SAC run, exposed for tests.
#[derive(Debug, Clone)]
pub struct SacRun {
    pub outcome: TrainOutcome,
    pub agent: SacAgent,
    pub buffer_len: usize,
}

/// Train SAC on a continuous-action environment.
pub fn sac_train(kind: EnvKind, actor_arch: &Arch, critic_arch: &Arch, cfg: &SacConfig, seed: u64) -> Result<TrainOutcome> {
    sac_run(kind, actor_arch, critic_arch, cfg, seed).map(|r| r.outcome)
}

/// [`sac_train`] that also returns the final agent and buffer size.
pub fn sac_run(kind: EnvKind, actor_arch: &Arch, critic_arch: &Arch, cfg: &SacConfig, seed: u64) -> Result<SacRun> {
    cfg.validate()?;
    let spec = kind.spec();
    let ActionSpace::Continuous { dim, bound } = spec.action_space else {
        return Err(SpanError::Config(format!("sac needs a continuous action space; {} is discrete", spec.name)));
    };
    let mut agent = SacAgent::build(actor_arch, critic_arch, spec.state_dim, dim, cfg, seed)?;
    let mut action_rng = stream_rng(seed, Stream::Action);
    let mut replay_rng = stream_rng(seed, Stream::Replay);
    let mut env = Env::new(kind);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, spec.state_dim, dim);
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let mut state = env.reset(derive_seed(seed, Stream::EnvReset, episode));
    let mut updates = 0u64;

    for step in 1..=cfg.total_steps {
        let a: Vec<f64> = if step <= cfg.warmup {
            (0..dim).map(|_| action_rng.random_range(-1.0..=1.0)).collect()
        } else {
            agent.actor_sample(&state, &mut action_rng)?.action
        };
        let applied: Vec<f64> = a.iter().map(|x| (x * bound).clamp(-bound, bound)).collect();
        let t = env.step(&Action::Continuous(applied))?;
        buffer.push(&state, &a, t.reward, &t.next_state, t.terminated);
        if t.done() {
            episode += 1;
            state = env.reset(derive_seed(seed, Stream::EnvReset, episode));
        } else {
            state = t.next_state;
        }
        if step > cfg.warmup && buffer.len() >= cfg.batch {
            agent.update(&buffer, cfg, &mut replay_rng)?;
            updates += 1;
        }
        if step % cfg.eval_interval == 0 {
            let round = step / cfg.eval_interval - 1;
            let returns = evaluate_policy(&agent.actor, kind, cfg.eval_episodes, seed, round)?;
            curve.push(EvalRecord::new(step, returns));
        }
    }

    let outcome = TrainOutcome {
        curve,
        checkpoint: agent.checkpoint(spec.name, seed, cfg.total_steps),
        param_count: agent.param_count(),
        env_steps: env.total_steps(),
        updates,
        normalized_score: None,
    };
    Ok(SacRun {
        outcome,
        buffer_len: buffer.len(),
        agent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Arch {
        Arch::Span {
            nmodes: 2,
            nelems: 2,
            degree: 1,
        }
    }

    #[test]
    fn soft_target_examples() {
        assert_eq!(soft_target(1.5, 0.99, true, 7.0, 3.0, 0.4), 1.5);
        assert!((soft_target(1.0, 0.99, false, 2.0, 2.5, 0.1) - 2.881).abs() < 1e-12);
        // Zero temperature and identical critics: clipped double-Q target.
        assert_eq!(soft_target(1.0, 0.5, false, 4.0, 4.0, 0.0), 3.0);
    }

    #[test]
    fn soft_update_examples() {
        let mk = |v: f64| {
            let mut p = ParamStore::new();
            p.add("w", DenseArray::from_vec(&[2], vec![v, v]).unwrap());
            p
        };
        let online = mk(2.0);
        let mut t = mk(0.0);
        soft_update(&mut t, &online, 0.5).unwrap();
        assert_eq!(t.value(0), &[1.0, 1.0]);
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.value(0), &[1.0, 1.0]);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.value(0), &[2.0, 2.0]);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 1, 1);
        for i in 0..5 {
            let x = i as f64;
            b.push(&[x], &[0.0], x, &[x + 1.0], false);
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).reward).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn temperature_gradient_vanishes_at_target_entropy() {
        assert_eq!(temperature_grad(-0.8, 0.8), 0.0);
        // Entropy below target (log π high) raises α.
        assert!(temperature_grad(2.0, -1.0) < 0.0);
        let mut store = ParamStore::new();
        store.add("log_alpha", DenseArray::from_vec(&[1], vec![0.3]).unwrap());
        store.grad_mut(0)[0] = temperature_grad(-0.8, 0.8);
        adam_step(&mut store, &SacConfig::default().adam()).unwrap();
        assert_eq!(store.value(0)[0], 0.3);
    }

    #[test]
    fn huge_temperature_pushes_std_up() {
        let cfg = SacConfig::default();
        let mut agent = SacAgent::build(&small(), &small(), 3, 1, &cfg, 4).unwrap();
        let s = [0.2, 0.9, -0.3];
        agent.actor.params_mut().zero_grad();
        agent.actor_objective(&s, &[0.0], 1e6, 1.0).unwrap();
        // Descending the loss must increase log σ: ∂loss/∂(log σ) < 0.
        let head_b = agent.actor.params().index_of("head_b").unwrap();
        assert!(agent.actor.params().grad(head_b)[1] < 0.0);
    }

    #[test]
    fn warmup_collects_without_updates() {
        let cfg = SacConfig {
            total_steps: 300,
            warmup: 300,
            eval_interval: 300,
            eval_episodes: 1,
            ..SacConfig::default()
        };
        let run = sac_run(EnvKind::Pendulum, &small(), &small(), &cfg, 1).unwrap();
        assert_eq!(run.buffer_len, 300);
        assert_eq!(run.outcome.updates, 0);
        assert_eq!(run.agent.q1.params().step(), 0);
    }

    #[test]
    fn short_run_is_reproducible() {
        let cfg = SacConfig {
            total_steps: 400,
            warmup: 200,
            batch: 32,
            eval_interval: 200,
            eval_episodes: 1,
            ..SacConfig::default()
        };
        let a = sac_train(EnvKind::Pendulum, &small(), &small(), &cfg, 9).unwrap();
        let b = sac_train(EnvKind::Pendulum, &small(), &small(), &cfg, 9).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.updates, 200);
    }
}
