//! Two-hidden-layer perceptron baseline.

use rand::Rng;

use crate::error::{Result, SpanError};
use crate::linalg::{DenseArray, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: (usize, usize),
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(
        input_dim: usize,
        hidden: (usize, usize),
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            activation,
        }
    }

    fn widths(&self) -> [usize; 4] {
        [self.input_dim, self.hidden.0, self.hidden.1, self.output_dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(SpanError::Config(format!(
                "MLP widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `d·h1 + h1 + h1·h2 + h2 + h2·o + o`.
pub fn mlp_param_count(cfg: &MlpConfig) -> usize {
    let [d, h1, h2, o] = cfg.widths();
    d * h1 + h1 + h1 * h2 + h2 + h2 * o + o
}

#[derive(Debug, Clone)]
pub struct MlpNet {
    cfg: MlpConfig,
    params: ParamStore,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Layer activations: input, hidden 1, hidden 2, output.
    acts: [Vec<f64>; 4],
    delta: [Vec<f64>; 3],
    ready: bool,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        &self.acts[3]
    }
}

impl MlpNet {
    /// Fan-in scaled uniform init (`U(±gain·√(3/fan_in))`, unit variance per
    /// unit for gain 1), with the last layer further multiplied by
    /// `output_scale`. Biases start at zero.
    pub fn new<R: Rng + ?Sized>(cfg: MlpConfig, output_scale: f64, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        let gain = match cfg.activation {
            Activation::Tanh => 5.0 / 3.0,
            Activation::Relu => std::f64::consts::SQRT_2,
        };
        let mut params = ParamStore::new();
        for layer in 0..3 {
            let (fan_in, fan_out) = (widths[layer], widths[layer + 1]);
            let g = if layer == 2 { output_scale } else { gain };
            let bound = g * (3.0 / fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            params.add(
                &format!("w{}", layer + 1),
                DenseArray::from_vec(&[fan_out, fan_in], w)?,
            );
            params.add(&format!("b{}", layer + 1), DenseArray::zeros(&[fan_out]));
        }
        Self::from_params(cfg, params)
    }

    pub fn from_params(cfg: MlpConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        if params.len() != 6 {
            return Err(SpanError::Format(format!(
                "MLP expects 6 parameter arrays, got {}",
                params.len()
            )));
        }
        for layer in 0..3 {
            let w_shape = [widths[layer + 1], widths[layer]];
            let b_shape = [widths[layer + 1]];
            let (wi, bi) = (2 * layer, 2 * layer + 1);
            if params.name(wi) != format!("w{}", layer + 1)
                || params.array(wi).shape() != w_shape
                || params.name(bi) != format!("b{}", layer + 1)
                || params.array(bi).shape() != b_shape
            {
                return Err(SpanError::Format(format!(
                    "MLP layer {} has unexpected parameters",
                    layer + 1
                )));
            }
        }
        assert_eq!(params.num_params(), mlp_param_count(&cfg));
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn new_cache(&self) -> MlpCache {
        let w = self.cfg.widths();
        MlpCache {
            acts: [
                vec![0.0; w[0]],
                vec![0.0; w[1]],
                vec![0.0; w[2]],
                vec![0.0; w[3]],
            ],
            delta: [vec![0.0; w[1]], vec![0.0; w[2]], vec![0.0; w[3]]],
            ready: false,
        }
    }

    pub fn forward<'c>(&self, s: &[f64], cache: &'c mut MlpCache) -> Result<&'c [f64]> {
        let widths = self.cfg.widths();
        if s.len() != widths[0] {
            return Err(SpanError::Dimension(format!(
                "MLP input has length {}, expected {}",
                s.len(),
                widths[0]
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(SpanError::Input(format!("state {s:?}")));
        }
        if cache.acts[0].len() != widths[0] || cache.acts[3].len() != widths[3] {
            *cache = self.new_cache();
        }
        cache.ready = false;
        cache.acts[0].copy_from_slice(s);
        for layer in 0..3 {
            let w = self.params.value(2 * layer);
            let b = self.params.value(2 * layer + 1);
            let (inputs, outputs) = cache.acts.split_at_mut(layer + 1);
            let x = &inputs[layer];
            let y = &mut outputs[0];
            let fan_in = x.len();
            for (u, out) in y.iter_mut().enumerate() {
                let row = &w[u * fan_in..(u + 1) * fan_in];
                let a = b[u] + row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>();
                *out = if layer < 2 {
                    self.cfg.activation.apply(a)
                } else {
                    a
                };
            }
        }
        if cache.acts[3].iter().any(|v| !v.is_finite()) {
            return Err(SpanError::fault("mlp", "non-finite output"));
        }
        cache.ready = true;
        Ok(&cache.acts[3])
    }

    pub fn backward(
        &mut self,
        cache: &mut MlpCache,
        out_grad: &[f64],
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let widths = self.cfg.widths();
        if !cache.ready || cache.acts[3].len() != widths[3] {
            return Err(SpanError::Internal(
                "backward called without a matching forward pass".into(),
            ));
        }
        if out_grad.len() != widths[3] {
            return Err(SpanError::Dimension(format!(
                "output gradient has length {}, expected {}",
                out_grad.len(),
                widths[3]
            )));
        }
        cache.delta[2].copy_from_slice(out_grad);
        for layer in (0..3).rev() {
            let fan_in = widths[layer];
            {
                let (_, gb) = self.params.value_and_grad_mut(2 * layer + 1);
                for (g, d) in gb.iter_mut().zip(&cache.delta[layer]) {
                    *g += d;
                }
            }
            {
                let (_, gw) = self.params.value_and_grad_mut(2 * layer);
                for (u, d) in cache.delta[layer].iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (g, x) in gw[u * fan_in..(u + 1) * fan_in]
                        .iter_mut()
                        .zip(&cache.acts[layer])
                    {
                        *g += d * x;
                    }
                }
            }
            let w = self.params.value(2 * layer);
            if layer > 0 {
                let (lower, upper) = cache.delta.split_at_mut(layer);
                let below = &mut lower[layer - 1];
                let above = &upper[0];
                for (q, out) in below.iter_mut().enumerate() {
                    let back: f64 = above
                        .iter()
                        .enumerate()
                        .map(|(u, d)| w[u * fan_in + q] * d)
                        .sum();
                    *out = back * self.cfg.activation.deriv_from_output(cache.acts[layer][q]);
                }
            } else if let Some(gin) = input_grad.take() {
                if gin.len() != fan_in {
                    return Err(SpanError::Dimension(format!(
                        "input gradient buffer has length {}, expected {fan_in}",
                        gin.len()
                    )));
                }
                for (q, out) in gin.iter_mut().enumerate() {
                    *out = cache.delta[0]
                        .iter()
                        .enumerate()
                        .map(|(u, d)| w[u * fan_in + q] * d)
                        .sum();
                }
            }
        }
        Ok(())
    }
}
