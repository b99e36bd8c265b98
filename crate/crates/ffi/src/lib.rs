//! C interface to the span-rl toolkit.
//!
//! Every function returns a [`SpanRlStatus`]. Objects are opaque handles
//! created by `*_new` functions and released with the matching `*_free`.
//! On failure, [`span_rl_last_error`] describes the most recent error on the
//! calling thread. Panics never cross the boundary; they surface as
//! [`SpanRlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use span_rl::bspline::SplineBasis;
use span_rl::checkpoint::Checkpoint;
use span_rl::envs::{Action, ActionSpace, Env};
use span_rl::metrics::{sustained_solve_step, EvalRecord};
use span_rl::net::{Arch, Net, NetCache};
use span_rl::SpanError;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanRlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Domain = 4,
    Protocol = 5,
    Io = 6,
    Format = 7,
    TrainingFault = 8,
    Internal = 9,
    Panic = 10,
}

/// A SPAN or MLP network with its evaluation workspace.
pub struct SpanRlNet {
    net: Net,
    cache: NetCache,
}

/// A classic-control environment instance.
pub struct SpanRlEnv {
    env: Env,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &SpanError) -> SpanRlStatus {
    match err {
        SpanError::Dimension(_) => SpanRlStatus::Dimension,
        SpanError::Domain { .. } => SpanRlStatus::Domain,
        SpanError::Input(_) | SpanError::Action(_) | SpanError::Config(_) | SpanError::Usage(_) => {
            SpanRlStatus::InvalidArgument
        }
        SpanError::Protocol(_) => SpanRlStatus::Protocol,
        SpanError::Io(_) => SpanRlStatus::Io,
        SpanError::Format(_) => SpanRlStatus::Format,
        SpanError::TrainingFault { .. } => SpanRlStatus::TrainingFault,
        SpanError::Internal(_) => SpanRlStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(SpanError),
}

impl From<SpanError> for Failure {
    fn from(e: SpanError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpanRlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpanRlStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SpanRlStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            SpanRlStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside span-rl".into());
            SpanRlStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> Result<(), Failure> {
    if dst.len() != src.len() {
        return Err(Failure::Lib(SpanError::Dimension(format!(
            "output buffer holds {}, need {}",
            dst.len(),
            src.len()
        ))));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes, into `buf`. Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn span_rl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Writes the `nelems + degree` clamped uniform B-spline basis values at
/// `x ∈ [0, 1]` into `out`.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn span_rl_bspline_eval(
    degree: usize,
    nelems: usize,
    x: f64,
    out: *mut f64,
    out_len: usize,
) -> SpanRlStatus {
    guard(|| {
        let basis = SplineBasis::new(degree, nelems)?;
        let out = slice_mut(out, out_len, "out")?;
        copy_out(&basis.eval_basis(x)?, out)
    })
}

/// Creates a freshly initialised SPAN network.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn span_rl_span_net_new(
    input_dim: usize,
    output_dim: usize,
    nmodes: usize,
    nelems: usize,
    degree: usize,
    seed: u64,
    out: *mut *mut SpanRlNet,
) -> SpanRlStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let arch = Arch::Span { nmodes, nelems, degree };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Net::build(&arch, input_dim, output_dim, 1.0, &mut rng)?;
        let cache = net.new_cache();
        *slot = Box::into_raw(Box::new(SpanRlNet { net, cache }));
        Ok(())
    })
}

/// Loads the network stored under `role` (for example `actor`) in a
/// checkpoint file.
///
/// # Safety
/// `path` and `role` must be NUL-terminated strings; `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn span_rl_net_load(
    path: *const c_char,
    role: *const c_char,
    out: *mut *mut SpanRlNet,
) -> SpanRlStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let path = string(path, "path")?;
        let role = string(role, "role")?;
        let net = Checkpoint::load(Path::new(path))?.net(role)?;
        let cache = net.new_cache();
        *slot = Box::into_raw(Box::new(SpanRlNet { net, cache }));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn span_rl_net_free(net: *mut SpanRlNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width, output width and trainable parameter count.
///
/// # Safety
/// `net` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn span_rl_net_shape(
    net: *const SpanRlNet,
    input_dim: *mut usize,
    output_dim: *mut usize,
    param_count: *mut usize,
) -> SpanRlStatus {
    guard(|| {
        let net = &net.as_ref().ok_or(Failure::Null("net"))?.net;
        if let Some(p) = input_dim.as_mut() {
            *p = net.input_dim();
        }
        if let Some(p) = output_dim.as_mut() {
            *p = net.output_dim();
        }
        if let Some(p) = param_count.as_mut() {
            *p = net.num_params();
        }
        Ok(())
    })
}

/// Evaluates the network at `input`.
///
/// # Safety
/// `net` must be a live handle not used concurrently; the buffers must hold
/// the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn span_rl_net_forward(
    net: *mut SpanRlNet,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SpanRlStatus {
    guard(|| {
        let h = net.as_mut().ok_or(Failure::Null("net"))?;
        let input = slice(input, input_len, "input")?;
        let out = slice_mut(out, out_len, "out")?;
        let y = h.net.forward(input, &mut h.cache)?;
        copy_out(y, out)
    })
}

/// Creates an environment by name (`CartPole-v1`, `Acrobot-v1`,
/// `Pendulum-v1`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn span_rl_env_new(name: *const c_char, out: *mut *mut SpanRlEnv) -> SpanRlStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let env = Env::by_name(string(name, "name")?)?;
        *slot = Box::into_raw(Box::new(SpanRlEnv { env }));
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn span_rl_env_free(env: *mut SpanRlEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Observation width and action description. `action_count` is the number
/// of discrete actions, or 0 for continuous spaces, in which case
/// `action_dim` and `action_bound` describe the box.
///
/// # Safety
/// `env` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn span_rl_env_spec(
    env: *const SpanRlEnv,
    state_dim: *mut usize,
    action_count: *mut usize,
    action_dim: *mut usize,
    action_bound: *mut f64,
) -> SpanRlStatus {
    guard(|| {
        let spec = env.as_ref().ok_or(Failure::Null("env"))?.env.spec();
        let (count, dim, bound) = match spec.action_space {
            ActionSpace::Discrete(n) => (n, 1, 0.0),
            ActionSpace::Continuous { dim, bound } => (0, dim, bound),
        };
        if let Some(p) = state_dim.as_mut() {
            *p = spec.state_dim;
        }
        if let Some(p) = action_count.as_mut() {
            *p = count;
        }
        if let Some(p) = action_dim.as_mut() {
            *p = dim;
        }
        if let Some(p) = action_bound.as_mut() {
            *p = bound;
        }
        Ok(())
    })
}

/// Starts an episode and writes the first observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn span_rl_env_reset(
    env: *mut SpanRlEnv,
    seed: u64,
    obs: *mut f64,
    obs_len: usize,
) -> SpanRlStatus {
    guard(|| {
        let h = env.as_mut().ok_or(Failure::Null("env"))?;
        let obs = slice_mut(obs, obs_len, "obs")?;
        let s = h.env.reset(seed);
        copy_out(&s, obs)
    })
}

/// Advances one step. Discrete environments read the action index from
/// `action[0]`, which must be a whole number.
///
/// # Safety
/// `env` must be a live handle; buffers must hold the stated lengths and
/// the flag pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn span_rl_env_step(
    env: *mut SpanRlEnv,
    action: *const f64,
    action_len: usize,
    obs: *mut f64,
    obs_len: usize,
    reward: *mut f64,
    terminated: *mut bool,
    truncated: *mut bool,
) -> SpanRlStatus {
    guard(|| {
        let h = env.as_mut().ok_or(Failure::Null("env"))?;
        let action = slice(action, action_len, "action")?;
        let obs = slice_mut(obs, obs_len, "obs")?;
        let reward = out_ref(reward, "reward")?;
        let terminated = out_ref(terminated, "terminated")?;
        let truncated = out_ref(truncated, "truncated")?;
        let a = match h.env.spec().action_space {
            ActionSpace::Discrete(_) => match action {
                [x] if x.fract() == 0.0 && *x >= 0.0 => Action::Discrete(*x as usize),
                _ => return Err(Failure::Arg("discrete action must be one whole number".into())),
            },
            ActionSpace::Continuous { .. } => Action::Continuous(action.to_vec()),
        };
        let t = h.env.step(&a)?;
        copy_out(&t.next_state, obs)?;
        *reward = t.reward;
        *terminated = t.terminated;
        *truncated = t.truncated;
        Ok(())
    })
}

/// Step of the first of five consecutive evaluations whose mean reaches
/// `target`. `found` is set to false when no such window exists.
///
/// # Safety
/// `steps` and `means` must hold `len` values; `step` and `found` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn span_rl_sustained_solve_step(
    steps: *const u64,
    means: *const f64,
    len: usize,
    target: f64,
    step: *mut u64,
    found: *mut bool,
) -> SpanRlStatus {
    guard(|| {
        let means = slice(means, len, "means")?;
        let steps: &[u64] = if len == 0 {
            &[]
        } else if steps.is_null() {
            return Err(Failure::Null("steps"));
        } else {
            std::slice::from_raw_parts(steps, len)
        };
        let step = out_ref(step, "step")?;
        let found = out_ref(found, "found")?;
        let curve: Vec<EvalRecord> = steps
            .iter()
            .zip(means)
            .map(|(&s, &m)| EvalRecord {
                step: s,
                returns: vec![m],
                mean: m,
                std: 0.0,
            })
            .collect();
        match sustained_solve_step(&curve, target) {
            Some(s) => {
                *step = s;
                *found = true;
            }
            None => {
                *step = 0;
                *found = false;
            }
        }
        Ok(())
    })
}
