//! Pieces shared by the trainers: deterministic evaluation and run outcomes.

use std::collections::BTreeMap;

use crate::checkpoint::Checkpoint;
use crate::envs::{rollout_episode, Action, EnvKind, Env};
use crate::error::Result;
use crate::metrics::{EvalRecord, RunInfo, RunSummary};
use crate::net::{Net, NetCache};
use crate::policy::{argmax, GaussianHead};
use crate::rng::{derive_seed, Stream};

/// What a trainer hands back besides its learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<EvalRecord>,
    /// Networks and metadata needed to rerun the learned policy.
    pub checkpoint: Checkpoint,
    /// Trainable parameters of the actor and every critic/value network.
    pub param_count: usize,
    /// Environment steps taken while learning (evaluation excluded).
    pub env_steps: u64,
    /// Gradient updates applied.
    pub updates: u64,
    pub normalized_score: Option<f64>,
}

impl TrainOutcome {
    pub fn summarize(
        &self,
        info: RunInfo,
        thresholds: BTreeMap<u32, f64>,
        wall_clock_secs: f64,
    ) -> RunSummary {
        let mut s = RunSummary::from_curve(info, self.curve.clone(), thresholds, wall_clock_secs);
        s.normalized_score = self.normalized_score;
        s
    }
}

/// Action chosen without exploration: argmax of logits for discrete spaces,
/// `bound·tanh(μ)` for continuous ones.
pub fn deterministic_action(actor: &Net, cache: &mut NetCache, kind: EnvKind, s: &[f64]) -> Result<Action> {
    let out = actor.forward(s, cache)?;
    Ok(match kind.spec().action_space {
        crate::envs::ActionSpace::Discrete(_) => Action::Discrete(argmax(out)),
        crate::envs::ActionSpace::Continuous { bound, .. } => Action::Continuous(
            GaussianHead::from_output(out)
                .mode()
                .into_iter()
                .map(|a| (a * bound).clamp(-bound, bound))
                .collect(),
        ),
    })
}

/// Returns of `episodes` deterministic-policy episodes on a fresh environment.
/// Episode `e` of round `round` starts from the derived evaluation seed
/// `round·episodes + e`, so rounds never share initial states.
pub fn evaluate_policy(actor: &Net, kind: EnvKind, episodes: usize, seed: u64, round: u64) -> Result<Vec<f64>> {
    let mut env = Env::new(kind);
    let mut cache = actor.new_cache();
    let horizon = env.spec().horizon;
    (0..episodes)
        .map(|e| {
            let ep_seed = derive_seed(seed, Stream::EvalReset, round * episodes as u64 + e as u64);
            let ep = rollout_episode(
                &mut env,
                |s| deterministic_action(actor, &mut cache, kind, s),
                ep_seed,
                horizon,
            )?;
            Ok(ep.total_return)
        })
        .collect()
}
