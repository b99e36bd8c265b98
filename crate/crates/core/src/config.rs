//! TOML run configuration.
//!
//! ```toml
//! [run]
//! env = "CartPole-v1"
//! algorithm = "ppo"          # ppo | sac | iql
//! net = "span"               # span | mlp
//! seeds = [0, 1, 2, 3, 4]
//! total_steps = 500000       # optional; overrides the algorithm budget
//! out = "runs/cartpole"      # optional output directory
//! dataset = "data/pendulum_expert.bin"   # iql only
//!
//! [span]                     # required when net = "span"
//! nmodes = 1
//! nelems = 2
//! degree = 1
//!
//! [mlp]                      # required when net = "mlp"
//! actor_hidden = [4, 3]
//! critic_hidden = [4, 4]
//! activation = "tanh"        # optional; tanh for ppo, relu otherwise
//!
//! [ppo] / [sac] / [iql]      # optional hyperparameter overrides
//! [sweep]                    # per-axis values for `sweep`
//! nmodes = [2, 4, 6, 8, 10]
//! [metrics]
//! negative_rule = "ratio"    # ratio | linear
//! [dataset]                  # for `dataset`
//! tag = "expert"
//! size = 50000
//! noise = 0.1
//! checkpoint = "runs/sac/checkpoint_seed0.bin"
//! out = "data/pendulum_expert.bin"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ActionSpace, EnvKind};
use crate::error::{Result, SpanError};
use crate::iql::IqlConfig;
use crate::metrics::{env_thresholds, NegativeRule};
use crate::mlp::Activation;
use crate::net::{Arch, NetKind};
use crate::ppo::PpoConfig;
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Sac,
    Iql,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Sac => "sac",
            Algorithm::Iql => "iql",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetTag {
    Span,
    Mlp,
}

impl NetTag {
    pub fn kind(self) -> NetKind {
        match self {
            NetTag::Span => NetKind::Span,
            NetTag::Mlp => NetKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub env: String,
    pub algorithm: Algorithm,
    pub net: NetTag,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanSection {
    pub nmodes: usize,
    pub nelems: usize,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSection {
    pub actor_hidden: [usize; 2],
    pub critic_hidden: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub nmodes: Vec<usize>,
    pub nelems: Vec<usize>,
    pub degree: Vec<usize>,
}

impl SweepSection {
    /// `(axis name, values)` for every non-empty axis.
    pub fn axes(&self) -> Vec<(&'static str, &[usize])> {
        [("nmodes", &self.nmodes), ("nelems", &self.nelems), ("degree", &self.degree)]
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(n, v)| (n, v.as_slice()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub negative_rule: NegativeRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub tag: String,
    pub size: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<SpanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpSection>,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub iql: IqlConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
}

impl RunConfig {
    /// Parse and validate; errors carry the offending line where known.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SpanError::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpanError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            SpanError::Config(m) => SpanError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SpanError::Internal(e.to_string()))
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        EnvKind::parse(&self.run.env).map_err(|_| SpanError::Config(format!("run.env: unknown environment `{}`", self.run.env)))
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.env_kind()?;
        let discrete = matches!(kind.spec().action_space, ActionSpace::Discrete(_));
        match (self.run.algorithm, discrete) {
            (Algorithm::Ppo, false) => {
                return Err(SpanError::Config(format!("run.algorithm: ppo needs a discrete action space; {} is continuous", kind.spec().name)))
            }
            (Algorithm::Sac | Algorithm::Iql, true) => {
                return Err(SpanError::Config(format!(
                    "run.algorithm: {} needs a continuous action space; {} is discrete",
                    self.run.algorithm.tag(),
                    kind.spec().name
                )))
            }
            _ => {}
        }
        if self.run.seeds.is_empty() {
            return Err(SpanError::Config("run.seeds: at least one seed is required".into()));
        }
        self.actor_arch()?;
        self.critic_arch()?;
        if !self.sweep.axes().is_empty() && self.run.net != NetTag::Span {
            return Err(SpanError::Config("sweep: architecture axes apply to span networks only".into()));
        }
        match self.run.algorithm {
            Algorithm::Ppo => self.effective_ppo().validate()?,
            Algorithm::Sac => self.effective_sac().validate()?,
            Algorithm::Iql => self.effective_iql().validate()?,
        }
        if let Some(d) = &self.dataset {
            if d.size == 0 {
                return Err(SpanError::Config("dataset.size must be positive".into()));
            }
            if !(d.noise >= 0.0 && d.noise.is_finite()) {
                return Err(SpanError::Config("dataset.noise must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn activation(&self) -> Result<Activation> {
        let default = if self.run.algorithm == Algorithm::Ppo { Activation::Tanh } else { Activation::Relu };
        match self.mlp.as_ref().and_then(|m| m.activation.as_deref()) {
            None => Ok(default),
            Some(tag) => Activation::from_tag(tag).ok_or_else(|| SpanError::Config(format!("mlp.activation: unknown activation `{tag}`"))),
        }
    }

    fn arch(&self, critic: bool) -> Result<Arch> {
        let arch = match self.run.net {
            NetTag::Span => {
                let s = self.span.ok_or_else(|| SpanError::Config("run.net is span but the [span] section is missing".into()))?;
                Arch::Span {
                    nmodes: s.nmodes,
                    nelems: s.nelems,
                    degree: s.degree,
                }
            }
            NetTag::Mlp => {
                let m = self.mlp.as_ref().ok_or_else(|| SpanError::Config("run.net is mlp but the [mlp] section is missing".into()))?;
                let h = if critic { m.critic_hidden } else { m.actor_hidden };
                Arch::Mlp {
                    hidden: (h[0], h[1]),
                    activation: self.activation()?,
                }
            }
        };
        check_arch(&arch)?;
        Ok(arch)
    }

    pub fn actor_arch(&self) -> Result<Arch> {
        self.arch(false)
    }

    pub fn critic_arch(&self) -> Result<Arch> {
        self.arch(true)
    }

    pub fn effective_ppo(&self) -> PpoConfig {
        let mut c = self.ppo.clone();
        if let Some(t) = self.run.total_steps {
            c.total_steps = t;
        }
        c
    }

    pub fn effective_sac(&self) -> SacConfig {
        let mut c = self.sac.clone();
        if let Some(t) = self.run.total_steps {
            c.total_steps = t;
        }
        c
    }

    pub fn effective_iql(&self) -> IqlConfig {
        let mut c = self.iql.clone();
        if let Some(t) = self.run.total_steps {
            c.iterations = t;
        }
        c
    }

    /// Environment steps (PPO, SAC) or gradient iterations (IQL).
    pub fn budget(&self) -> u64 {
        match self.run.algorithm {
            Algorithm::Ppo => self.effective_ppo().total_steps,
            Algorithm::Sac => self.effective_sac().total_steps,
            Algorithm::Iql => self.effective_iql().iterations,
        }
    }

    pub fn thresholds(&self) -> Result<BTreeMap<u32, f64>> {
        Ok(env_thresholds(&self.env_kind()?.spec(), self.metrics.negative_rule))
    }

    /// Short hash of everything that shapes a run except the seed list and
    /// output locations.
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.run.seeds.clear();
        c.run.out = None;
        if let Some(d) = c.dataset.as_mut() {
            d.out = None;
        }
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    /// Copy with one SPAN architecture field replaced.
    pub fn with_span_axis(&self, axis: &str, value: usize) -> Result<Self> {
        let mut c = self.clone();
        let s = c.span.as_mut().ok_or_else(|| SpanError::Config("sweep needs a [span] section".into()))?;
        match axis {
            "nmodes" => s.nmodes = value,
            "nelems" => s.nelems = value,
            "degree" => s.degree = value,
            other => return Err(SpanError::Config(format!("sweep: unknown axis `{other}`"))),
        }
        c.sweep = SweepSection::default();
        c.validate()?;
        Ok(c)
    }

    /// Output directory: explicit value, then `run.out`, then `fallback`,
    /// then `runs`.
    pub fn output_dir(&self, explicit: Option<&Path>, fallback: Option<PathBuf>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.run.out.as_ref().map(PathBuf::from))
            .or(fallback)
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn check_arch(arch: &Arch) -> Result<()> {
    let bad = |m: String| Err(SpanError::Config(m));
    match *arch {
        Arch::Span { nmodes, nelems, degree } => {
            if nmodes == 0 || nelems == 0 {
                return bad("span: nmodes and nelems must be positive".into());
            }
            if degree == 0 || degree > crate::bspline::MAX_DEGREE {
                return bad(format!("span.degree must lie in 1..={}", crate::bspline::MAX_DEGREE));
            }
        }
        Arch::Mlp { hidden, .. } => {
            if hidden.0 == 0 || hidden.1 == 0 {
                return bad("mlp: hidden sizes must be positive".into());
            }
        }
    }
    Ok(())
}
