//! SPAN: sigmoid preprocessing, per-dimension spline sums, rank-`M` product
//! modes and a linear head.
//!
//! ```text
//! z      = sigmoid(W_pre·s + b_pre)
//! S[p,j] = Σ_i w[p,j,i]·B_i(z_p)
//! mode_j = Π_p S[p,j]
//! y      = W·mode + b
//! ```

use rand::Rng;

use crate::bspline::{SplineBasis, MAX_DEGREE};
use crate::error::{Result, SpanError};
use crate::linalg::{DenseArray, ParamStore};

/// Architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub nmodes: usize,
    pub nelems: usize,
    pub degree: usize,
}

impl SpanConfig {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        nmodes: usize,
        nelems: usize,
        degree: usize,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            nmodes,
            nelems,
            degree,
        }
    }

    pub fn nbasis(&self) -> usize {
        self.nelems + self.degree
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.nmodes == 0 {
            return Err(SpanError::Config(format!(
                "SPAN dimensions must be positive: {self:?}"
            )));
        }
        SplineBasis::new(self.degree, self.nelems).map(|_| ())
    }
}

/// `(d² + d) + M·d·(N + k) + M·o + o`.
pub fn span_param_count(cfg: &SpanConfig) -> usize {
    let d = cfg.input_dim;
    let o = cfg.output_dim;
    let m = cfg.nmodes;
    (d * d + d) + m * d * cfg.nbasis() + (m * o + o)
}

const W_PRE: usize = 0;
const B_PRE: usize = 1;
const SPLINE: usize = 2;
const HEAD_W: usize = 3;
const HEAD_B: usize = 4;

#[derive(Debug, Clone)]
pub struct SpanNet {
    cfg: SpanConfig,
    basis: SplineBasis,
    params: ParamStore,
}

/// Forward-pass workspace; holds everything the backward pass needs.
#[derive(Debug, Clone, Default)]
pub struct SpanCache {
    input: Vec<f64>,
    z: Vec<f64>,
    /// First nonzero basis index per dimension.
    first: Vec<usize>,
    /// `(k+1)` basis values per dimension.
    basis: Vec<f64>,
    basis_deriv: Vec<f64>,
    /// `S[p,j]` at `p·M + j`.
    sums: Vec<f64>,
    sums_deriv: Vec<f64>,
    modes: Vec<f64>,
    output: Vec<f64>,
    // backward scratch
    mode_grad: Vec<f64>,
    prefix: Vec<f64>,
    pre_grad: Vec<f64>,
    ready: bool,
}

impl SpanCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn modes(&self) -> &[f64] {
        &self.modes
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SpanNet {
    /// Network with the default initialisation: `W_pre ~ U(±1/√d)`,
    /// spline weights `1 + U(±0.1)`, head `W ~ U(±1/√M)`, zero biases.
    pub fn new<R: Rng + ?Sized>(cfg: SpanConfig, rng: &mut R) -> Result<Self> {
        Self::with_head_scale(cfg, 1.0, rng)
    }

    /// As [`SpanNet::new`] with the head range multiplied by `head_scale`.
    pub fn with_head_scale<R: Rng + ?Sized>(cfg: SpanConfig, head_scale: f64, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.input_dim;
        let m = cfg.nmodes;
        let o = cfg.output_dim;
        let nb = cfg.nbasis();

        let pre_scale = 1.0 / (d as f64).sqrt();
        let head_range = head_scale / (m as f64).sqrt();
        let w_pre = (0..d * d)
            .map(|_| rng.random_range(-pre_scale..pre_scale))
            .collect();
        let spline = (0..d * m * nb)
            .map(|_| 1.0 + rng.random_range(-0.1..0.1))
            .collect();
        let head = (0..o * m)
            .map(|_| rng.random_range(-head_range..head_range))
            .collect();

        let mut params = ParamStore::new();
        params.add("w_pre", DenseArray::from_vec(&[d, d], w_pre)?);
        params.add("b_pre", DenseArray::zeros(&[d]));
        params.add("spline", DenseArray::from_vec(&[d, m, nb], spline)?);
        params.add("head_w", DenseArray::from_vec(&[o, m], head)?);
        params.add("head_b", DenseArray::zeros(&[o]));
        Self::from_params(cfg, params)
    }

    /// Wrap an existing parameter store, checking names and shapes.
    pub fn from_params(cfg: SpanConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.input_dim;
        let m = cfg.nmodes;
        let o = cfg.output_dim;
        let expected: [(&str, Vec<usize>); 5] = [
            ("w_pre", vec![d, d]),
            ("b_pre", vec![d]),
            ("spline", vec![d, m, cfg.nbasis()]),
            ("head_w", vec![o, m]),
            ("head_b", vec![o]),
        ];
        if params.len() != expected.len() {
            return Err(SpanError::Format(format!(
                "SPAN expects {} parameter arrays, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in expected.iter().enumerate() {
            if params.name(i) != *name || params.array(i).shape() != shape.as_slice() {
                return Err(SpanError::Format(format!(
                    "SPAN parameter {i} should be `{name}` {shape:?}, found `{}` {:?}",
                    params.name(i),
                    params.array(i).shape()
                )));
            }
        }
        assert_eq!(params.num_params(), span_param_count(&cfg));
        Ok(Self {
            cfg,
            basis: SplineBasis::new(cfg.degree, cfg.nelems)?,
            params,
        })
    }

    pub fn config(&self) -> &SpanConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn new_cache(&self) -> SpanCache {
        let d = self.cfg.input_dim;
        let m = self.cfg.nmodes;
        let k1 = self.cfg.degree + 1;
        SpanCache {
            input: vec![0.0; d],
            z: vec![0.0; d],
            first: vec![0; d],
            basis: vec![0.0; d * k1],
            basis_deriv: vec![0.0; d * k1],
            sums: vec![0.0; d * m],
            sums_deriv: vec![0.0; d * m],
            modes: vec![0.0; m],
            output: vec![0.0; self.cfg.output_dim],
            mode_grad: vec![0.0; m],
            prefix: vec![0.0; d],
            pre_grad: vec![0.0; d],
            ready: false,
        }
    }

    /// Evaluate the network at `s`; the output stays in `cache`.
    pub fn forward<'c>(&self, s: &[f64], cache: &'c mut SpanCache) -> Result<&'c [f64]> {
        let d = self.cfg.input_dim;
        let m = self.cfg.nmodes;
        let k1 = self.cfg.degree + 1;
        let nb = self.cfg.nbasis();
        if s.len() != d {
            return Err(SpanError::Dimension(format!(
                "SPAN input has length {}, expected {d}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(SpanError::Input(format!("state {s:?}")));
        }
        if cache.z.len() != d || cache.modes.len() != m || cache.basis.len() != d * k1 {
            *cache = self.new_cache();
        }
        cache.ready = false;
        cache.input.copy_from_slice(s);

        let w_pre = self.params.value(W_PRE);
        let b_pre = self.params.value(B_PRE);
        let spline = self.params.value(SPLINE);

        let mut vals = [0.0; MAX_DEGREE + 1];
        let mut ders = [0.0; MAX_DEGREE + 1];
        for p in 0..d {
            let row = &w_pre[p * d..(p + 1) * d];
            let a = b_pre[p] + row.iter().zip(s).map(|(w, x)| w * x).sum::<f64>();
            let z = sigmoid(a);
            cache.z[p] = z;
            let first = self.basis.eval_local(z, &mut vals, Some(&mut ders))?;
            cache.first[p] = first;
            cache.basis[p * k1..(p + 1) * k1].copy_from_slice(&vals[..k1]);
            cache.basis_deriv[p * k1..(p + 1) * k1].copy_from_slice(&ders[..k1]);
            for j in 0..m {
                let w = &spline[(p * m + j) * nb + first..(p * m + j) * nb + first + k1];
                let mut sum = 0.0;
                let mut dsum = 0.0;
                for r in 0..k1 {
                    sum += w[r] * vals[r];
                    dsum += w[r] * ders[r];
                }
                cache.sums[p * m + j] = sum;
                cache.sums_deriv[p * m + j] = dsum;
            }
        }
        for j in 0..m {
            cache.modes[j] = (0..d).map(|p| cache.sums[p * m + j]).product();
        }

        let head_w = self.params.value(HEAD_W);
        let head_b = self.params.value(HEAD_B);
        for (q, out) in cache.output.iter_mut().enumerate() {
            let row = &head_w[q * m..(q + 1) * m];
            *out = head_b[q] + row.iter().zip(&cache.modes).map(|(w, x)| w * x).sum::<f64>();
        }
        if cache.output.iter().any(|v| !v.is_finite()) {
            return Err(SpanError::fault("span", "non-finite output"));
        }
        cache.ready = true;
        Ok(&cache.output)
    }

    /// Accumulate `∂L/∂θ` for `out_grad = ∂L/∂y` into the parameter
    /// gradients, and write `∂L/∂s` into `input_grad` when given.
    pub fn backward(
        &mut self,
        cache: &mut SpanCache,
        out_grad: &[f64],
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let d = self.cfg.input_dim;
        let m = self.cfg.nmodes;
        let o = self.cfg.output_dim;
        let k1 = self.cfg.degree + 1;
        let nb = self.cfg.nbasis();
        if !cache.ready || cache.z.len() != d || cache.modes.len() != m {
            return Err(SpanError::Internal(
                "backward called without a matching forward pass".into(),
            ));
        }
        if out_grad.len() != o {
            return Err(SpanError::Dimension(format!(
                "output gradient has length {}, expected {o}",
                out_grad.len()
            )));
        }

        // Head.
        {
            let (_, gb) = self.params.value_and_grad_mut(HEAD_B);
            for (g, og) in gb.iter_mut().zip(out_grad) {
                *g += og;
            }
        }
        cache.mode_grad.iter_mut().for_each(|g| *g = 0.0);
        {
            let (w, gw) = self.params.value_and_grad_mut(HEAD_W);
            for q in 0..o {
                let og = out_grad[q];
                if og == 0.0 {
                    continue;
                }
                for j in 0..m {
                    gw[q * m + j] += og * cache.modes[j];
                    cache.mode_grad[j] += og * w[q * m + j];
                }
            }
        }

        // Spline sums: ∂mode_j/∂S[p,j] = Π_{q≠p} S[q,j], via prefix/suffix
        // products so zero sums are handled exactly.
        cache.pre_grad.iter_mut().for_each(|g| *g = 0.0);
        {
            let (_, gs) = self.params.value_and_grad_mut(SPLINE);
            for j in 0..m {
                let gm = cache.mode_grad[j];
                if gm == 0.0 {
                    continue;
                }
                let mut acc = 1.0;
                for p in 0..d {
                    cache.prefix[p] = acc;
                    acc *= cache.sums[p * m + j];
                }
                let mut suffix = 1.0;
                for p in (0..d).rev() {
                    let g_sum = gm * cache.prefix[p] * suffix;
                    suffix *= cache.sums[p * m + j];
                    let base = (p * m + j) * nb + cache.first[p];
                    for r in 0..k1 {
                        gs[base + r] += g_sum * cache.basis[p * k1 + r];
                    }
                    cache.pre_grad[p] += g_sum * cache.sums_deriv[p * m + j];
                }
            }
        }

        // Sigmoid and preprocessing layer.
        for p in 0..d {
            let z = cache.z[p];
            cache.pre_grad[p] *= z * (1.0 - z);
        }
        {
            let (_, gb) = self.params.value_and_grad_mut(B_PRE);
            for (g, pg) in gb.iter_mut().zip(&cache.pre_grad) {
                *g += pg;
            }
        }
        {
            let (_, gw) = self.params.value_and_grad_mut(W_PRE);
            for p in 0..d {
                let pg = cache.pre_grad[p];
                for (g, x) in gw[p * d..(p + 1) * d].iter_mut().zip(&cache.input) {
                    *g += pg * x;
                }
            }
        }
        if let Some(gin) = input_grad {
            if gin.len() != d {
                return Err(SpanError::Dimension(format!(
                    "input gradient buffer has length {}, expected {d}",
                    gin.len()
                )));
            }
            let w_pre = self.params.value(W_PRE);
            for (q, g) in gin.iter_mut().enumerate() {
                *g = (0..d).map(|p| w_pre[p * d + q] * cache.pre_grad[p]).sum();
            }
        }
        Ok(())
    }

    /// Modes `M_j(z)` evaluated directly at a point `z ∈ [0,1]^d`, bypassing
    /// preprocessing.
    pub fn modes_at(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.cfg.input_dim;
        let m = self.cfg.nmodes;
        let nb = self.cfg.nbasis();
        if z.len() != d {
            return Err(SpanError::Dimension(format!("point of length {}", z.len())));
        }
        let spline = self.params.value(SPLINE);
        let mut modes = vec![1.0; m];
        for (p, &zp) in z.iter().enumerate() {
            let b = self.basis.eval_basis(zp)?;
            for (j, mode) in modes.iter_mut().enumerate() {
                let w = &spline[(p * m + j) * nb..(p * m + j + 1) * nb];
                *mode *= w.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        Ok(modes)
    }
}
