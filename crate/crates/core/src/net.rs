//! Function approximators behind one interface.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Result, SpanError};
use crate::linalg::ParamStore;
use crate::mlp::{Activation, MlpCache, MlpConfig, MlpNet};
use crate::span::{SpanCache, SpanConfig, SpanNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Span,
    Mlp,
}

impl NetKind {
    pub fn tag(self) -> &'static str {
        match self {
            NetKind::Span => "span",
            NetKind::Mlp => "mlp",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "span" => Some(NetKind::Span),
            "mlp" => Some(NetKind::Mlp),
            _ => None,
        }
    }
}

/// Architecture of one network, independent of its input and output widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Span {
        nmodes: usize,
        nelems: usize,
        degree: usize,
    },
    Mlp {
        hidden: (usize, usize),
        activation: Activation,
    },
}

impl Arch {
    pub fn kind(&self) -> NetKind {
        match self {
            Arch::Span { .. } => NetKind::Span,
            Arch::Mlp { .. } => NetKind::Mlp,
        }
    }

    pub fn param_count(&self, input_dim: usize, output_dim: usize) -> usize {
        match *self {
            Arch::Span {
                nmodes,
                nelems,
                degree,
            } => crate::span::span_param_count(&SpanConfig::new(
                input_dim, output_dim, nmodes, nelems, degree,
            )),
            Arch::Mlp { hidden, activation } => crate::mlp::mlp_param_count(&MlpConfig::new(
                input_dim, hidden, output_dim, activation,
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Net {
    Span(SpanNet),
    Mlp(MlpNet),
}

#[derive(Debug, Clone)]
pub enum NetCache {
    Span(SpanCache),
    Mlp(MlpCache),
}

impl NetCache {
    pub fn output(&self) -> &[f64] {
        match self {
            NetCache::Span(c) => c.output(),
            NetCache::Mlp(c) => c.output(),
        }
    }
}

impl Net {
    /// Fresh network. `output_scale` multiplies the init range of the final
    /// layer (MLP) or head (SPAN); PPO policies use 0.01.
    pub fn build<R: Rng + ?Sized>(
        arch: &Arch,
        input_dim: usize,
        output_dim: usize,
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match *arch {
            Arch::Span {
                nmodes,
                nelems,
                degree,
            } => Net::Span(SpanNet::with_head_scale(
                SpanConfig::new(input_dim, output_dim, nmodes, nelems, degree),
                output_scale,
                rng,
            )?),
            Arch::Mlp { hidden, activation } => Net::Mlp(MlpNet::new(
                MlpConfig::new(input_dim, hidden, output_dim, activation),
                output_scale,
                rng,
            )?),
        })
    }

    pub fn from_params(
        arch: &Arch,
        input_dim: usize,
        output_dim: usize,
        params: ParamStore,
    ) -> Result<Self> {
        Ok(match *arch {
            Arch::Span {
                nmodes,
                nelems,
                degree,
            } => Net::Span(SpanNet::from_params(
                SpanConfig::new(input_dim, output_dim, nmodes, nelems, degree),
                params,
            )?),
            Arch::Mlp { hidden, activation } => Net::Mlp(MlpNet::from_params(
                MlpConfig::new(input_dim, hidden, output_dim, activation),
                params,
            )?),
        })
    }

    pub fn arch(&self) -> Arch {
        match self {
            Net::Span(n) => {
                let c = n.config();
                Arch::Span {
                    nmodes: c.nmodes,
                    nelems: c.nelems,
                    degree: c.degree,
                }
            }
            Net::Mlp(n) => {
                let c = n.config();
                Arch::Mlp {
                    hidden: c.hidden,
                    activation: c.activation,
                }
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Net::Span(n) => n.config().input_dim,
            Net::Mlp(n) => n.config().input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Net::Span(n) => n.config().output_dim,
            Net::Mlp(n) => n.config().output_dim,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Net::Span(n) => n.params(),
            Net::Mlp(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Net::Span(n) => n.params_mut(),
            Net::Mlp(n) => n.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().num_params()
    }

    /// Rewrite the first affine map so that the network applied to `s`
    /// equals the original applied to `(s − shift) / scale`.
    pub fn fold_input_affine(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        let d = self.input_dim();
        if shift.len() != d || scale.len() != d {
            return Err(SpanError::Dimension(format!("input affine map needs length {d}")));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SpanError::Config("input scales must be positive".into()));
        }
        // Both kinds store the first weight matrix [rows, d] at index 0 and
        // its bias at index 1.
        let params = self.params_mut();
        let rows = params.value(1).len();
        let mut w = params.value(0).to_vec();
        let mut b = params.value(1).to_vec();
        for r in 0..rows {
            for q in 0..d {
                w[r * d + q] /= scale[q];
                b[r] -= w[r * d + q] * shift[q];
            }
        }
        params.value_mut(0).copy_from_slice(&w);
        params.value_mut(1).copy_from_slice(&b);
        Ok(())
    }

    pub fn new_cache(&self) -> NetCache {
        match self {
            Net::Span(n) => NetCache::Span(n.new_cache()),
            Net::Mlp(n) => NetCache::Mlp(n.new_cache()),
        }
    }

    pub fn forward<'c>(&self, s: &[f64], cache: &'c mut NetCache) -> Result<&'c [f64]> {
        if !self.cache_matches(cache) {
            *cache = self.new_cache();
        }
        match (self, cache) {
            (Net::Span(n), NetCache::Span(c)) => n.forward(s, c),
            (Net::Mlp(n), NetCache::Mlp(c)) => n.forward(s, c),
            _ => unreachable!(),
        }
    }

    pub fn backward(
        &mut self,
        cache: &mut NetCache,
        out_grad: &[f64],
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        match (self, cache) {
            (Net::Span(n), NetCache::Span(c)) => n.backward(c, out_grad, input_grad),
            (Net::Mlp(n), NetCache::Mlp(c)) => n.backward(c, out_grad, input_grad),
            _ => Err(SpanError::Internal("cache belongs to another network kind".into())),
        }
    }

    fn cache_matches(&self, cache: &NetCache) -> bool {
        matches!(
            (self, cache),
            (Net::Span(_), NetCache::Span(_)) | (Net::Mlp(_), NetCache::Mlp(_))
        )
    }

    /// Key/value description sufficient to rebuild the network shape.
    pub fn describe(&self, role: &str) -> BTreeMap<String, String> {
        let mut meta = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            meta.insert(format!("{role}.{k}"), v);
        };
        put("input_dim", self.input_dim().to_string());
        put("output_dim", self.output_dim().to_string());
        match self.arch() {
            Arch::Span {
                nmodes,
                nelems,
                degree,
            } => {
                put("kind", "span".into());
                put("nmodes", nmodes.to_string());
                put("nelems", nelems.to_string());
                put("degree", degree.to_string());
            }
            Arch::Mlp { hidden, activation } => {
                put("kind", "mlp".into());
                put("hidden", format!("{},{}", hidden.0, hidden.1));
                put("activation", activation.tag().into());
            }
        }
        meta
    }

    /// Inverse of [`Net::describe`]: `(arch, input_dim, output_dim)`.
    pub fn parse_description(
        meta: &BTreeMap<String, String>,
        role: &str,
    ) -> Result<(Arch, usize, usize)> {
        let get = |k: &str| -> Result<&str> {
            meta.get(&format!("{role}.{k}"))
                .map(String::as_str)
                .ok_or_else(|| SpanError::Format(format!("missing metadata `{role}.{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| SpanError::Format(format!("bad integer for `{role}.{k}`")))
        };
        let arch = match get("kind")? {
            "span" => Arch::Span {
                nmodes: num("nmodes")?,
                nelems: num("nelems")?,
                degree: num("degree")?,
            },
            "mlp" => {
                let hidden = get("hidden")?;
                let (a, b) = hidden
                    .split_once(',')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                    .ok_or_else(|| SpanError::Format(format!("bad hidden sizes `{hidden}`")))?;
                let activation = Activation::from_tag(get("activation")?)
                    .ok_or_else(|| SpanError::Format("unknown activation".into()))?;
                Arch::Mlp {
                    hidden: (a, b),
                    activation,
                }
            }
            other => return Err(SpanError::Format(format!("unknown network kind `{other}`"))),
        };
        Ok((arch, num("input_dim")?, num("output_dim")?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn description_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for arch in [
            Arch::Span {
                nmodes: 3,
                nelems: 4,
                degree: 2,
            },
            Arch::Mlp {
                hidden: (5, 7),
                activation: Activation::Relu,
            },
        ] {
            let net = Net::build(&arch, 3, 2, 1.0, &mut rng).unwrap();
            let (back, i, o) = Net::parse_description(&net.describe("actor"), "actor").unwrap();
            assert_eq!((back, i, o), (arch, 3, 2));
            assert_eq!(arch.param_count(3, 2), net.num_params());
        }
    }
}
