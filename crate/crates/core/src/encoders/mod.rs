//! Frame-level embedding extractors.
//!
//! Two encoder families turn an acoustic feature sequence (`T×f`) into a
//! same-length sequence of speaker-discriminative frame vectors (`T×n`) for
//! the attention layer: a time-delay network that splices a fixed temporal
//! context around each frame, and a high-order recurrent network whose state
//! update looks back one and four steps.

mod hornn;
mod tdnn;

pub use hornn::{BoundHornn, Hornn, HornnConfig};
pub use tdnn::{BoundTdnn, Tdnn, TdnnConfig, TdnnLayerSpec};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

/// A trainable frame-level encoder of either family.
#[derive(Debug, Clone)]
pub enum Encoder {
    Tdnn(Tdnn),
    Hornn(Hornn),
}

/// Tape handles for one forward pass of an [`Encoder`].
pub enum BoundEncoder {
    Tdnn(BoundTdnn),
    Hornn(BoundHornn),
}

impl BoundEncoder {
    /// Tape ids in the same order as [`Encoder::named_params`].
    pub fn param_ids(&self) -> Vec<TensorId> {
        match self {
            BoundEncoder::Tdnn(t) => t.param_ids(),
            BoundEncoder::Hornn(h) => h.param_ids(),
        }
    }
}

impl Encoder {
    pub fn init_tdnn<R: Rng>(rng: &mut R, cfg: TdnnConfig) -> Result<Self> {
        Ok(Encoder::Tdnn(Tdnn::init(rng, cfg)?))
    }

    pub fn init_hornn<R: Rng>(rng: &mut R, cfg: HornnConfig) -> Result<Self> {
        Ok(Encoder::Hornn(Hornn::init(rng, cfg)?))
    }

    /// Output width of the per-frame vectors (the attention input dim).
    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Tdnn(t) => t.output_dim(),
            Encoder::Hornn(h) => h.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Tdnn(t) => t.input_dim(),
            Encoder::Hornn(h) => h.input_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Encoder::Tdnn(t) => t.param_count(),
            Encoder::Hornn(h) => h.param_count(),
        }
    }

    /// Trainable tensors with stable names, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Encoder::Tdnn(t) => t.named_params(),
            Encoder::Hornn(h) => h.named_params(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Encoder::Tdnn(t) => t.named_params_mut(),
            Encoder::Hornn(h) => h.named_params_mut(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        match self {
            Encoder::Tdnn(t) => BoundEncoder::Tdnn(t.bind(tape)),
            Encoder::Hornn(h) => BoundEncoder::Hornn(h.bind(tape)),
        }
    }

    /// Bind against leaves already on a tape, consumed from `ids` in
    /// [`Encoder::named_params`] order.
    pub fn bind_ids<I: Iterator<Item = TensorId>>(&self, ids: &mut I) -> BoundEncoder {
        match self {
            Encoder::Tdnn(t) => BoundEncoder::Tdnn(t.bind_ids(ids)),
            Encoder::Hornn(h) => BoundEncoder::Hornn(h.bind_ids(ids)),
        }
    }

    /// Encode a feature sequence already on the tape into a `T×n` sequence.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: TensorId,
        bound: &BoundEncoder,
    ) -> Result<TensorId> {
        match (self, bound) {
            (Encoder::Tdnn(t), BoundEncoder::Tdnn(b)) => t.forward(tape, features, b),
            (Encoder::Hornn(h), BoundEncoder::Hornn(b)) => h.forward(tape, features, b),
            _ => Err(Error::Config(
                "encoder bound to parameters of a different family".into(),
            )),
        }
    }

    /// Convenience eval-path forward over a detached feature tensor.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let feats = tape.constant(features);
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, feats, &bound)?;
        Ok(tape.tensor(out))
    }
}
