//! Seedable episodic environments.

pub mod acrobot;
pub mod cartpole;
pub mod pendulum;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SpanError};
use crate::rng::Stream;

thread_local! {
    static THREAD_STEPS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Environment steps taken on the current thread by any [`Env`].
pub fn thread_env_steps() -> u64 {
    THREAD_STEPS.with(|c| c.get())
}

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use pendulum::Pendulum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Box `[-bound, bound]^dim`.
    Continuous { dim: usize, bound: f64 },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Width of the action vector fed to critics.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { dim, .. } => *dim,
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            ActionSpace::Discrete(_) => 1.0,
            ActionSpace::Continuous { bound, .. } => *bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// Flat numeric form (the index for discrete actions).
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Action::Discrete(a) => vec![*a as f64],
            Action::Continuous(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    CartPole,
    Acrobot,
    Pendulum,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        let base = name.split('-').next().unwrap_or(name).to_ascii_lowercase();
        match base.as_str() {
            "cartpole" => Ok(EnvKind::CartPole),
            "acrobot" => Ok(EnvKind::Acrobot),
            "pendulum" => Ok(EnvKind::Pendulum),
            _ => Err(SpanError::Config(format!("unknown environment `{name}`"))),
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::CartPole => EnvSpec {
                kind: self,
                name: "CartPole",
                state_dim: 4,
                action_space: ActionSpace::Discrete(2),
                horizon: 500,
                target_return: 500.0,
                floor_return: 0.0,
            },
            EnvKind::Acrobot => EnvSpec {
                kind: self,
                name: "Acrobot",
                state_dim: 6,
                action_space: ActionSpace::Discrete(3),
                horizon: 500,
                target_return: -100.0,
                floor_return: -500.0,
            },
            EnvKind::Pendulum => EnvSpec {
                kind: self,
                name: "Pendulum",
                state_dim: 3,
                action_space: ActionSpace::Continuous {
                    dim: 1,
                    bound: pendulum::MAX_TORQUE,
                },
                horizon: 200,
                target_return: -200.0,
                // Worst per-step cost is π² + 0.1·8² + 0.001·2² ≈ 16.27.
                floor_return: -1600.0,
            },
        }
    }
}

/// Static description of an environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub name: &'static str,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    /// Return defining the 100% (expert / solved) threshold.
    pub target_return: f64,
    /// Lower anchor used for thresholds of negative-return tasks.
    pub floor_return: f64,
}

impl EnvSpec {
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(EnvKind::parse(name)?.spec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone)]
enum Physics {
    CartPole(CartPole),
    Acrobot(Acrobot),
    Pendulum(Pendulum),
}

/// An environment instance with horizon truncation and a step counter.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    physics: Physics,
    elapsed: usize,
    finished: bool,
    started: bool,
    total_steps: u64,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        let physics = match kind {
            EnvKind::CartPole => Physics::CartPole(CartPole::default()),
            EnvKind::Acrobot => Physics::Acrobot(Acrobot::default()),
            EnvKind::Pendulum => Physics::Pendulum(Pendulum::default()),
        };
        Self {
            spec: kind.spec(),
            physics,
            elapsed: 0,
            finished: false,
            started: false,
            total_steps: 0,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(Self::new(EnvKind::parse(name)?))
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Steps taken by this instance since construction.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Start an episode from the standard initial distribution; the draw is a
    /// pure function of `seed`.
    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(Stream::EnvReset as u64);
        match &mut self.physics {
            Physics::CartPole(p) => p.reset(&mut rng),
            Physics::Acrobot(p) => p.reset(&mut rng),
            Physics::Pendulum(p) => p.reset(&mut rng),
        }
        self.elapsed = 0;
        self.finished = false;
        self.started = true;
        self.observe()
    }

    pub fn observe(&self) -> Vec<f64> {
        match &self.physics {
            Physics::CartPole(p) => p.observe(),
            Physics::Acrobot(p) => p.observe(),
            Physics::Pendulum(p) => p.observe(),
        }
    }

    /// Set the raw physical state directly (tests and scripted starts).
    pub fn set_physical_state(&mut self, state: &[f64]) -> Result<()> {
        let ok = match &mut self.physics {
            Physics::CartPole(p) if state.len() == 4 => {
                p.state.copy_from_slice(state);
                true
            }
            Physics::Acrobot(p) if state.len() == 4 => {
                p.state.copy_from_slice(state);
                true
            }
            Physics::Pendulum(p) if state.len() == 2 => {
                p.state.copy_from_slice(state);
                true
            }
            _ => false,
        };
        if !ok {
            return Err(SpanError::Dimension(format!(
                "{} state of length {}",
                self.spec.name,
                state.len()
            )));
        }
        self.elapsed = 0;
        self.finished = false;
        self.started = true;
        Ok(())
    }

    pub fn physical_state(&self) -> Vec<f64> {
        match &self.physics {
            Physics::CartPole(p) => p.state.to_vec(),
            Physics::Acrobot(p) => p.state.to_vec(),
            Physics::Pendulum(p) => p.state.to_vec(),
        }
    }

    /// Pendulum mechanical energy; `None` for other tasks.
    pub fn pendulum_energy(&self) -> Option<f64> {
        match &self.physics {
            Physics::Pendulum(p) => Some(p.energy()),
            _ => None,
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<Transition> {
        if !self.started {
            return Err(SpanError::Protocol("step before reset".into()));
        }
        if self.finished {
            return Err(SpanError::Protocol("step after episode end".into()));
        }
        self.validate_action(action)?;
        let state = self.observe();
        let (reward, terminated) = match (&mut self.physics, action) {
            (Physics::CartPole(p), Action::Discrete(a)) => p.step(*a),
            (Physics::Acrobot(p), Action::Discrete(a)) => p.step(*a),
            (Physics::Pendulum(p), Action::Continuous(u)) => p.step(u[0]),
            _ => unreachable!("validated above"),
        };
        self.elapsed += 1;
        self.total_steps += 1;
        THREAD_STEPS.with(|c| c.set(c.get() + 1));
        let truncated = !terminated && self.elapsed >= self.spec.horizon;
        self.finished = terminated || truncated;
        Ok(Transition {
            state,
            action: action.clone(),
            reward,
            next_state: self.observe(),
            terminated,
            truncated,
        })
    }

    fn validate_action(&self, action: &Action) -> Result<()> {
        match (self.spec.action_space, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if *a < n => Ok(()),
            (ActionSpace::Continuous { dim, bound }, Action::Continuous(u))
                if u.len() == dim && u.iter().all(|x| x.is_finite() && x.abs() <= bound) =>
            {
                Ok(())
            }
            (space, a) => Err(SpanError::Action(format!(
                "{a:?} is not in {space:?} of {}",
                self.spec.name
            ))),
        }
    }
}

/// One finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub total_return: f64,
}

/// Run `policy` from `env.reset(seed)` until termination, truncation or
/// `max_steps`.
pub fn rollout_episode<P>(env: &mut Env, mut policy: P, seed: u64, max_steps: usize) -> Result<Episode>
where
    P: FnMut(&[f64]) -> Result<Action>,
{
    let mut state = env.reset(seed);
    let mut transitions = Vec::new();
    let mut total_return = 0.0;
    for _ in 0..max_steps {
        let action = policy(&state)?;
        let t = env.step(&action)?;
        total_return += t.reward;
        state.clone_from(&t.next_state);
        let done = t.done();
        transitions.push(t);
        if done {
            break;
        }
    }
    Ok(Episode {
        transitions,
        total_return,
    })
}
