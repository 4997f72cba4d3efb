//! High-order recurrent network over frame sequences.
//!
//! Each layer updates its state as
//! `s(t) = relu(Wx·x(t) + Σ_k U_k·s(t−off_k) + b)` with every out-of-range
//! state taken as zero, so the network is strictly causal. The default
//! look-back offsets are 1 and 4, giving the state direct access to
//! longer-term history than a plain recurrent layer. A final affine layer
//! reduces the state sequence to the attention input width.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Affine, BoundAffine};
use crate::tensor::{glorot_uniform, Tape, Tensor, TensorId};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HornnConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    pub state_dim: usize,
    /// Width of the final affine reduction fed to attention.
    pub projection_dim: usize,
    pub recurrence_offsets: Vec<usize>,
}

impl HornnConfig {
    /// Two layers with look-back offsets {1, 4}.
    pub fn standard(input_dim: usize, state_dim: usize, projection_dim: usize) -> Self {
        HornnConfig {
            input_dim,
            num_layers: 2,
            state_dim,
            projection_dim,
            recurrence_offsets: vec![1, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.num_layers == 0
            || self.state_dim == 0
            || self.projection_dim == 0
        {
            return Err(Error::Config("hornn dims must be positive".into()));
        }
        if self.recurrence_offsets.is_empty() {
            return Err(Error::Config("hornn needs at least one recurrence".into()));
        }
        if self.recurrence_offsets.iter().any(|&o| o == 0) {
            return Err(Error::Config(
                "hornn recurrence offsets must be positive look-backs".into(),
            ));
        }
        if self.recurrence_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "hornn recurrence offsets must be strictly increasing, got {:?}",
                self.recurrence_offsets
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let d = self.state_dim;
        let k = self.recurrence_offsets.len();
        let mut total = 0;
        let mut in_dim = self.input_dim;
        for _ in 0..self.num_layers {
            total += in_dim * d + k * d * d + d;
            in_dim = d;
        }
        total + d * self.projection_dim + self.projection_dim
    }
}

#[derive(Debug, Clone)]
struct HornnLayer {
    wx: Tensor,
    us: Vec<Tensor>,
    b: Tensor,
}

#[derive(Debug, Clone)]
pub struct Hornn {
    cfg: HornnConfig,
    layers: Vec<HornnLayer>,
    proj: Affine,
}

struct BoundHornnLayer {
    wx: TensorId,
    us: Vec<TensorId>,
    b: TensorId,
}

pub struct BoundHornn {
    layers: Vec<BoundHornnLayer>,
    proj: BoundAffine,
}

impl BoundHornn {
    /// Tape ids in the same order as [`Hornn::named_params`].
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.wx);
            out.extend_from_slice(&layer.us);
            out.push(layer.b);
        }
        out.push(self.proj.w);
        out.push(self.proj.b);
        out
    }
}

impl Hornn {
    pub fn init<R: Rng>(rng: &mut R, cfg: HornnConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.state_dim;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut in_dim = cfg.input_dim;
        for _ in 0..cfg.num_layers {
            let us = cfg
                .recurrence_offsets
                .iter()
                .map(|_| {
                    // recurrent weights start at half scale for stability
                    let mut u = glorot_uniform(rng, d, d);
                    u.data_mut().iter_mut().for_each(|v| *v *= 0.5);
                    u.with_grad()
                })
                .collect();
            layers.push(HornnLayer {
                wx: glorot_uniform(rng, in_dim, d).with_grad(),
                us,
                b: Tensor::zeros(vec![1, d]).with_grad(),
            });
            in_dim = d;
        }
        let proj = Affine::init(rng, d, cfg.projection_dim);
        Ok(Hornn { cfg, layers, proj })
    }

    pub fn config(&self) -> &HornnConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.projection_dim
    }

    pub fn param_count(&self) -> usize {
        let layer_total: usize = self
            .layers
            .iter()
            .map(|l| l.wx.numel() + l.us.iter().map(Tensor::numel).sum::<usize>() + l.b.numel())
            .sum();
        layer_total + self.proj.param_count()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.wx"), &layer.wx));
            for (u, &off) in layer.us.iter().zip(&self.cfg.recurrence_offsets) {
                out.push((format!("layer{i}.u{off}"), u));
            }
            out.push((format!("layer{i}.b"), &layer.b));
        }
        out.push(("proj.w".to_string(), &self.proj.w));
        out.push(("proj.b".to_string(), &self.proj.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let offsets = self.cfg.recurrence_offsets.clone();
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.wx"), &mut layer.wx));
            for (u, &off) in layer.us.iter_mut().zip(&offsets) {
                out.push((format!("layer{i}.u{off}"), u));
            }
            out.push((format!("layer{i}.b"), &mut layer.b));
        }
        out.push(("proj.w".to_string(), &mut self.proj.w));
        out.push(("proj.b".to_string(), &mut self.proj.b));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundHornn {
        BoundHornn {
            layers: self
                .layers
                .iter()
                .map(|l| BoundHornnLayer {
                    wx: tape.leaf(&l.wx),
                    us: l.us.iter().map(|u| tape.leaf(u)).collect(),
                    b: tape.leaf(&l.b),
                })
                .collect(),
            proj: self.proj.bind(tape),
        }
    }

    /// Bind against leaves already on a tape, consumed from `ids` in
    /// [`Hornn::named_params`] order.
    pub fn bind_ids<I: Iterator<Item = TensorId>>(&self, ids: &mut I) -> BoundHornn {
        fn take<I: Iterator<Item = TensorId>>(ids: &mut I) -> TensorId {
            ids.next().expect("bind_ids: id list too short")
        }
        BoundHornn {
            layers: self
                .layers
                .iter()
                .map(|l| BoundHornnLayer {
                    wx: take(ids),
                    us: l.us.iter().map(|_| take(ids)).collect(),
                    b: take(ids),
                })
                .collect(),
            proj: self.proj.bind_ids(ids),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        features: TensorId,
        bound: &BoundHornn,
    ) -> Result<TensorId> {
        if tape.shape(features)[1] != self.cfg.input_dim {
            return Err(Error::ShapeMismatch {
                op: "hornn_forward",
                lhs: tape.shape(features).to_vec(),
                rhs: vec![self.cfg.input_dim],
            });
        }
        let t_len = tape.shape(features)[0];
        let mut seq = features;
        for layer in &bound.layers {
            let mut states: Vec<TensorId> = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let x_t = tape.slice_rows(seq, t, t + 1)?;
                let mut pre = tape.matmul(x_t, layer.wx)?;
                for (u, &off) in layer.us.iter().zip(&self.cfg.recurrence_offsets) {
                    if t >= off {
                        let rec = tape.matmul(states[t - off], *u)?;
                        pre = tape.add(pre, rec)?;
                    }
                }
                let biased = tape.add(pre, layer.b)?;
                states.push(tape.relu(biased));
            }
            seq = tape.concat_rows(&states)?;
        }
        bound.proj.apply(tape, seq)
    }
}
