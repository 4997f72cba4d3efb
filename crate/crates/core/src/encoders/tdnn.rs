//! Time-delay network over frame sequences.
//!
//! Each layer splices the previous layer's output at a fixed set of temporal
//! offsets (replicating edge frames so the sequence length never changes),
//! applies a dense transform, and passes the result through ReLU. The final
//! layer's activation is the per-frame embedding fed to attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Affine, BoundAffine};
use crate::tensor::{Tape, Tensor, TensorId};

/// One layer: temporal context offsets and output width.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdnnLayerSpec {
    pub context_offsets: Vec<i64>,
    pub out_dim: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdnnConfig {
    pub input_dim: usize,
    pub layers: Vec<TdnnLayerSpec>,
    /// Width of the final layer, which is what attention consumes.
    pub projection_dim: usize,
}

impl TdnnConfig {
    /// The standard five-layer stack: contexts {−2..2}, {−2,0,2}, {−3,0,3},
    /// {0}, {0}, with `hidden_dim` for the first four layers and the final
    /// layer emitting `projection_dim`.
    pub fn standard(input_dim: usize, hidden_dim: usize, projection_dim: usize) -> Self {
        let contexts: [&[i64]; 5] = [
            &[-2, -1, 0, 1, 2],
            &[-2, 0, 2],
            &[-3, 0, 3],
            &[0],
            &[0],
        ];
        let layers = contexts
            .iter()
            .enumerate()
            .map(|(i, &offsets)| TdnnLayerSpec {
                context_offsets: offsets.to_vec(),
                out_dim: if i == 4 { projection_dim } else { hidden_dim },
            })
            .collect();
        TdnnConfig {
            input_dim,
            layers,
            projection_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.projection_dim == 0 {
            return Err(Error::Config("tdnn dims must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("tdnn needs at least one layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let offs = &layer.context_offsets;
            if offs.is_empty() || layer.out_dim == 0 {
                return Err(Error::Config(format!("tdnn layer {i} is empty")));
            }
            if offs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "tdnn layer {i} offsets must be strictly increasing, got {offs:?}"
                )));
            }
            let symmetric = offs
                .iter()
                .zip(offs.iter().rev())
                .all(|(&a, &b)| a == -b);
            if !offs.contains(&0) && !symmetric {
                return Err(Error::Config(format!(
                    "tdnn layer {i} offsets {offs:?} neither contain 0 nor are symmetric"
                )));
            }
        }
        let last = self.layers.last().unwrap();
        if last.out_dim != self.projection_dim {
            return Err(Error::Config(format!(
                "final tdnn layer emits {} but projection_dim is {}",
                last.out_dim, self.projection_dim
            )));
        }
        Ok(())
    }

    /// Number of trainable scalars the config implies.
    pub fn param_count(&self) -> usize {
        let mut in_dim = self.input_dim;
        let mut total = 0;
        for layer in &self.layers {
            total += in_dim * layer.context_offsets.len() * layer.out_dim + layer.out_dim;
            in_dim = layer.out_dim;
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct Tdnn {
    cfg: TdnnConfig,
    layers: Vec<Affine>,
}

pub struct BoundTdnn {
    layers: Vec<BoundAffine>,
}

impl BoundTdnn {
    /// Tape ids in the same order as [`Tdnn::named_params`].
    pub fn param_ids(&self) -> Vec<TensorId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

impl Tdnn {
    pub fn init<R: Rng>(rng: &mut R, cfg: TdnnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers.len());
        let mut in_dim = cfg.input_dim;
        for spec in &cfg.layers {
            layers.push(Affine::init(
                rng,
                in_dim * spec.context_offsets.len(),
                spec.out_dim,
            ));
            in_dim = spec.out_dim;
        }
        Ok(Tdnn { cfg, layers })
    }

    pub fn config(&self) -> &TdnnConfig {
        &self.cfg
    }

    pub fn input_dim(&self) -> usize {
        self.cfg.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.projection_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Affine::param_count).sum()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.w"), &layer.w));
            out.push((format!("layer{i}.b"), &layer.b));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.w"), &mut layer.w));
            out.push((format!("layer{i}.b"), &mut layer.b));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundTdnn {
        BoundTdnn {
            layers: self.layers.iter().map(|l| l.bind(tape)).collect(),
        }
    }

    /// Bind against leaves already on a tape, consumed from `ids` in
    /// [`Tdnn::named_params`] order.
    pub fn bind_ids<I: Iterator<Item = TensorId>>(&self, ids: &mut I) -> BoundTdnn {
        BoundTdnn {
            layers: self.layers.iter().map(|l| l.bind_ids(ids)).collect(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        features: TensorId,
        bound: &BoundTdnn,
    ) -> Result<TensorId> {
        if tape.shape(features)[1] != self.cfg.input_dim {
            return Err(Error::ShapeMismatch {
                op: "tdnn_forward",
                lhs: tape.shape(features).to_vec(),
                rhs: vec![self.cfg.input_dim],
            });
        }
        let mut x = features;
        for (spec, layer) in self.cfg.layers.iter().zip(&bound.layers) {
            let spliced = tape.splice_rows(x, &spec.context_offsets)?;
            x = layer.apply_relu(tape, spliced)?;
        }
        Ok(x)
    }
}
