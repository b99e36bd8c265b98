//! Offline transition datasets and their generation from behavior policies.
//!
//! File layout (little-endian, version 1):
//!
//! ```text
//! magic     8 bytes  "SPANDSET"
//! version   u32
//! header    u32 length + UTF-8 JSON of `DatasetMeta`
//! states        size × state_dim   f64
//! actions       size × action_dim  f64   (normalised to [-1, 1])
//! rewards       size               f64
//! next_states   size × state_dim   f64
//! terminals     size               f64   (0 or 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_str, write_str, Checkpoint};
use crate::envs::{Action, ActionSpace, Env, EnvKind};
use crate::error::{Result, SpanError};
use crate::metrics::mean_std;
use crate::net::{Net, NetCache};
use crate::policy::GaussianHead;
use crate::rng::{derive_seed, derived_rng, Stream};

pub const DATASET_MAGIC: &[u8; 8] = b"SPANDSET";
pub const DATASET_VERSION: u32 = 1;
/// Episodes used to measure each normalisation anchor.
pub const ANCHOR_EPISODES: usize = 100;

/// Offset separating anchor-measurement episodes from data episodes.
const ANCHOR_SEED_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    /// Behavior policy: `expert`, `medium` or `random`.
    pub tag: String,
    pub size: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub noise: f64,
    pub seed: u64,
    /// Mean return of the completed behavior episodes in the data.
    pub behavior_mean_return: f64,
    pub episodes: usize,
    /// Mean return of a uniform random policy.
    pub random_return: f64,
    /// Mean deterministic return of the behavior policy (environment target
    /// for the random tag).
    pub expert_return: f64,
}

impl DatasetMeta {
    /// `(score − random) / (expert − random)`.
    pub fn normalize(&self, score: f64) -> f64 {
        (score - self.random_return) / (self.expert_return - self.random_return)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.meta.state_dim;
        &self.states[i * d..(i + 1) * d]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        let a = self.meta.action_dim;
        &self.actions[i * a..(i + 1) * a]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        let d = self.meta.state_dim;
        &self.next_states[i * d..(i + 1) * d]
    }

    /// Checks array lengths against the header and that rewards are finite.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let n = m.size;
        if self.states.len() != n * m.state_dim
            || self.next_states.len() != n * m.state_dim
            || self.actions.len() != n * m.action_dim
            || self.rewards.len() != n
            || self.terminals.len() != n
        {
            return Err(SpanError::Format("dataset arrays disagree with the header size".into()));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(SpanError::Format("non-finite reward in dataset".into()));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        w.write_all(DATASET_MAGIC)?;
        w.write_u32::<LittleEndian>(DATASET_VERSION)?;
        write_str(w, &self.meta_json()?)?;
        for block in [&self.states, &self.actions, &self.rewards, &self.next_states] {
            for x in block.iter() {
                w.write_f64::<LittleEndian>(*x)?;
            }
        }
        for t in &self.terminals {
            w.write_f64::<LittleEndian>(if *t { 1.0 } else { 0.0 })?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(SpanError::Format("not a dataset file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != DATASET_VERSION {
            return Err(SpanError::Format(format!("unsupported dataset version {version}")));
        }
        let meta: DatasetMeta = serde_json::from_str(&read_str(r)?)
            .map_err(|e| SpanError::Format(format!("dataset header: {e}")))?;
        let n = meta.size;
        let mut read = |len: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let states = read(n * meta.state_dim)?;
        let actions = read(n * meta.action_dim)?;
        let rewards = read(n)?;
        let next_states = read(n * meta.state_dim)?;
        let terminals = read(n)?.into_iter().map(|t| t != 0.0).collect();
        let ds = Self {
            meta,
            states,
            actions,
            rewards,
            next_states,
            terminals,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn meta_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.meta).map_err(|e| SpanError::Internal(e.to_string()))
    }
}

/// Policy that generates the data.
#[derive(Debug, Clone)]
pub enum Behavior {
    /// Uniform actions over the box.
    Random,
    /// `tanh(μ)` of a trained actor plus Gaussian noise; `tag` is `expert`
    /// or `medium`.
    Policy { tag: String, actor: Net },
}

impl Behavior {
    /// Behavior from a tag and optional SAC checkpoint.
    pub fn from_tag(tag: &str, checkpoint: Option<&Checkpoint>) -> Result<Self> {
        match (tag, checkpoint) {
            ("random", _) => Ok(Behavior::Random),
            ("expert" | "medium", Some(c)) => Ok(Behavior::Policy {
                tag: tag.to_string(),
                actor: c.net("actor")?,
            }),
            ("expert" | "medium", None) => {
                Err(SpanError::Config(format!("behavior `{tag}` needs a policy checkpoint")))
            }
            (other, _) => Err(SpanError::Config(format!("unknown behavior tag `{other}`"))),
        }
    }

    pub fn tag(&self) -> &str {
        match self {
            Behavior::Random => "random",
            Behavior::Policy { tag, .. } => tag,
        }
    }
}

struct Actor<'a> {
    behavior: &'a Behavior,
    cache: Option<NetCache>,
}

impl Actor<'_> {
    /// Normalised action in `[-1, 1]^dim`.
    fn act<R: Rng + ?Sized>(&mut self, s: &[f64], dim: usize, noise: f64, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match self.behavior {
            Behavior::Random => (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            Behavior::Policy { actor, .. } => {
                let cache = self.cache.get_or_insert_with(|| actor.new_cache());
                let mode = GaussianHead::from_output(actor.forward(s, cache)?).mode();
                mode.into_iter()
                    .map(|m| {
                        let eps: f64 = rng.sample(StandardNormal);
                        (m + noise * eps).clamp(-1.0, 1.0)
                    })
                    .collect()
            }
        })
    }
}

fn continuous_space(kind: EnvKind) -> Result<(usize, f64)> {
    match kind.spec().action_space {
        ActionSpace::Continuous { dim, bound } => Ok((dim, bound)),
        ActionSpace::Discrete(_) => Err(SpanError::Config(format!(
            "offline datasets need a continuous action space; {} is discrete",
            kind.spec().name
        ))),
    }
}

/// Mean return of `episodes` episodes of `behavior` with the given noise.
fn measure(kind: EnvKind, behavior: &Behavior, noise: f64, episodes: usize, seed: u64) -> Result<f64> {
    let (dim, bound) = continuous_space(kind)?;
    let mut env = Env::new(kind);
    let mut actor = Actor { behavior, cache: None };
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let index = ANCHOR_SEED_BASE + e as u64;
        let mut rng = derived_rng(seed, Stream::Dataset, index);
        let mut s = env.reset(derive_seed(seed, Stream::EnvReset, index));
        let mut total = 0.0;
        loop {
            let a = actor.act(&s, dim, noise, &mut rng)?;
            let t = env.step(&Action::Continuous(a.iter().map(|x| x * bound).collect()))?;
            total += t.reward;
            if t.done() {
                break;
            }
            s = t.next_state;
        }
        returns.push(total);
    }
    Ok(mean_std(&returns).0)
}

/// Uniform-policy return anchor for `kind`.
pub fn random_anchor(kind: EnvKind, seed: u64) -> Result<f64> {
    measure(kind, &Behavior::Random, 0.0, ANCHOR_EPISODES, seed)
}

/// Roll out `behavior` with Gaussian action noise until `size` transitions
/// are collected.
pub fn generate_dataset(kind: EnvKind, behavior: &Behavior, size: usize, noise: f64, seed: u64) -> Result<OfflineDataset> {
    if size == 0 {
        return Err(SpanError::Config("dataset size must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(SpanError::Config("dataset noise must be a finite non-negative number".into()));
    }
    let spec = kind.spec();
    let (dim, bound) = continuous_space(kind)?;
    let mut env = Env::new(kind);
    let mut actor = Actor { behavior, cache: None };
    let d = spec.state_dim;
    let mut ds = OfflineDataset {
        meta: DatasetMeta {
            env: spec.name.to_string(),
            tag: behavior.tag().to_string(),
            size,
            state_dim: d,
            action_dim: dim,
            noise,
            seed,
            behavior_mean_return: 0.0,
            episodes: 0,
            random_return: 0.0,
            expert_return: 0.0,
        },
        states: Vec::with_capacity(size * d),
        actions: Vec::with_capacity(size * dim),
        rewards: Vec::with_capacity(size),
        next_states: Vec::with_capacity(size * d),
        terminals: Vec::with_capacity(size),
    };
    let mut completed = Vec::new();
    let mut episode = 0u64;
    let mut partial = 0.0;
    'outer: while ds.len() < size {
        let mut rng = derived_rng(seed, Stream::Dataset, episode);
        let mut s = env.reset(derive_seed(seed, Stream::EnvReset, episode));
        episode += 1;
        partial = 0.0;
        loop {
            let a = actor.act(&s, dim, noise, &mut rng)?;
            let t = env.step(&Action::Continuous(a.iter().map(|x| x * bound).collect()))?;
            ds.states.extend_from_slice(&s);
            ds.actions.extend_from_slice(&a);
            ds.rewards.push(t.reward);
            ds.next_states.extend_from_slice(&t.next_state);
            ds.terminals.push(t.terminated);
            partial += t.reward;
            if t.done() {
                completed.push(partial);
                continue 'outer;
            }
            if ds.len() == size {
                break 'outer;
            }
            s = t.next_state;
        }
    }
    ds.meta.episodes = completed.len();
    ds.meta.behavior_mean_return = if completed.is_empty() { partial } else { mean_std(&completed).0 };
    ds.meta.random_return = random_anchor(kind, seed)?;
    ds.meta.expert_return = match behavior {
        Behavior::Random => spec.target_return,
        Behavior::Policy { .. } => measure(kind, behavior, 0.0, ANCHOR_EPISODES, seed)?,
    };
    ds.validate()?;
    Ok(ds)
}
