//! Dense arrays, parameter storage with gradient slots, and Adam.

use rand::Rng;

use crate::error::{Result, SpanError};

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(SpanError::Dimension(format!(
                "shape {shape:?} holds {len} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(SpanError::Input(format!("array entry {bad}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

/// `w · x` for a rank-2 `w` and rank-1 `x`.
pub fn matvec(w: &DenseArray, x: &DenseArray) -> Result<DenseArray> {
    let (rows, cols) = match (w.shape(), x.shape()) {
        ([r, c], [n]) if c == n => (*r, *c),
        (ws, xs) => {
            return Err(SpanError::Dimension(format!(
                "matvec of {ws:?} with {xs:?}"
            )))
        }
    };
    let out = w
        .data
        .chunks_exact(cols.max(1))
        .take(rows)
        .map(|row| row.iter().zip(&x.data).map(|(a, b)| a * b).sum())
        .collect::<Vec<f64>>();
    let out = if cols == 0 { vec![0.0; rows] } else { out };
    DenseArray::from_vec(&[rows], out)
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip threshold.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn clipped(mut self, max_grad_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_grad_norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.max_grad_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SpanError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: DenseArray,
    grad: DenseArray,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named trainable arrays with matching gradient slots and Adam moments.
///
/// Entries keep insertion order; networks address them by the index returned
/// from [`ParamStore::add`].
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: DenseArray) -> usize {
        let n = value.len();
        let grad = DenseArray::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn array(&self, idx: usize) -> &DenseArray {
        &self.entries[idx].value
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        &self.entries[idx].value.data
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.entries[idx].value.data
    }

    pub fn grad(&self, idx: usize) -> &[f64] {
        &self.entries[idx].grad.data
    }

    pub fn grad_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.entries[idx].grad.data
    }

    /// Value and gradient of one entry, borrowed together.
    pub fn value_and_grad_mut(&mut self, idx: usize) -> (&[f64], &mut [f64]) {
        let e = &mut self.entries[idx];
        (&e.value.data, &mut e.grad.data)
    }

    /// Adam step counter, shared by every entry.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Multiply every gradient by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.data.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Copy values (not gradients or moments) from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_layout(other)?;
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            dst.value.data.copy_from_slice(&src.value.data);
        }
        Ok(())
    }

    /// `self ← (1 − tau)·self + tau·online`, elementwise.
    pub fn blend_toward(&mut self, online: &ParamStore, tau: f64) -> Result<()> {
        self.check_layout(online)?;
        for (dst, src) in self.entries.iter_mut().zip(&online.entries) {
            for (t, o) in dst.value.data.iter_mut().zip(&src.value.data) {
                *t = (1.0 - tau) * *t + tau * o;
            }
        }
        Ok(())
    }

    /// Replace the value of a named entry, checking its shape.
    pub fn set_array(&mut self, name: &str, array: DenseArray) -> Result<()> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| SpanError::Format(format!("unknown parameter `{name}`")))?;
        let entry = &mut self.entries[idx];
        if entry.value.shape != array.shape {
            return Err(SpanError::Dimension(format!(
                "`{name}` has shape {:?}, got {:?}",
                entry.value.shape, array.shape
            )));
        }
        entry.value = array;
        Ok(())
    }

    fn check_layout(&self, other: &ParamStore) -> Result<()> {
        let same = self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape == b.value.shape);
        if same {
            Ok(())
        } else {
            Err(SpanError::Dimension("parameter stores differ in layout".into()))
        }
    }

    /// Flat (entry, offset) address of the `k`-th scalar parameter.
    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, e) in self.entries.iter().enumerate() {
            if k < e.value.len() {
                return (i, k);
            }
            k -= e.value.len();
        }
        panic!("parameter index out of range");
    }
}

/// One bias-corrected Adam update over every entry of `store`.
///
/// Gradients are clipped to the configured global norm first and zeroed
/// afterwards. When every gradient is exactly zero the parameters and moments
/// are left untouched.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    for e in &store.entries {
        if e.grad.data.iter().any(|g| !g.is_finite()) {
            return Err(SpanError::fault(&e.name, "non-finite gradient"));
        }
    }
    let norm = store.grad_norm();
    if let Some(limit) = cfg.max_grad_norm {
        if norm > limit {
            store.scale_grads(limit / norm);
        }
    }
    store.step += 1;
    if norm == 0.0 {
        return Ok(());
    }
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for e in &mut store.entries {
        for (((p, g), m), v) in e
            .value
            .data
            .iter_mut()
            .zip(e.grad.data.iter_mut())
            .zip(e.m.iter_mut())
            .zip(e.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            *g = 0.0;
        }
        if e.value.data.iter().any(|p| !p.is_finite()) {
            return Err(SpanError::fault(&e.name, "parameter became non-finite"));
        }
    }
    Ok(())
}

/// Denominator floor of the relative error used by [`grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients against central differences.
///
/// `loss` must return the scalar loss and accumulate its gradient into the
/// store's gradient slots (which are zeroed before each call). `probes`
/// scalar parameters are drawn uniformly; the worst relative error is
/// returned. Parameter values are restored and gradients left zeroed.
pub fn grad_check<F, R>(store: &mut ParamStore, mut loss: F, probes: usize, rng: &mut R) -> f64
where
    F: FnMut(&mut ParamStore) -> f64,
    R: Rng + ?Sized,
{
    let total = store.num_params();
    if total == 0 {
        return 0.0;
    }
    store.zero_grad();
    loss(store);
    let analytic: Vec<Vec<f64>> = store.entries.iter().map(|e| e.grad.data.clone()).collect();

    let mut worst = 0.0_f64;
    for _ in 0..probes {
        let (entry, offset) = store.locate(rng.random_range(0..total));
        let original = store.entries[entry].value.data[offset];

        store.entries[entry].value.data[offset] = original + GRAD_CHECK_STEP;
        store.zero_grad();
        let plus = loss(store);
        store.entries[entry].value.data[offset] = original - GRAD_CHECK_STEP;
        store.zero_grad();
        let minus = loss(store);
        store.entries[entry].value.data[offset] = original;

        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        worst = worst.max(relative_error(analytic[entry][offset], numeric));
    }
    store.zero_grad();
    worst
}
