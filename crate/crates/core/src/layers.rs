//! Small trainable building blocks shared by the encoders and the combiner.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{glorot_uniform, Tape, Tensor, TensorId};

/// Dense layer `x·W + b` with `W` of shape `in_dim×out_dim` and a `1×out_dim`
/// bias row.
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    pub fn init<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Affine {
            w: glorot_uniform(rng, in_dim, out_dim).with_grad(),
            b: Tensor::zeros(vec![1, out_dim]).with_grad(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.b.numel()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundAffine {
        BoundAffine {
            w: tape.leaf(&self.w),
            b: tape.leaf(&self.b),
        }
    }

    /// Bind against leaves already on a tape, consumed from `ids` in
    /// `w, b` order.
    pub fn bind_ids<I: Iterator<Item = TensorId>>(&self, ids: &mut I) -> BoundAffine {
        BoundAffine {
            w: ids.next().expect("bind_ids: id list too short"),
            b: ids.next().expect("bind_ids: id list too short"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAffine {
    pub w: TensorId,
    pub b: TensorId,
}

impl BoundAffine {
    /// `x·W + b`, rows of `x` transformed independently.
    pub fn apply(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let xw = tape.matmul(x, self.w)?;
        tape.add(xw, self.b)
    }

    /// `relu(x·W + b)`.
    pub fn apply_relu(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let lin = self.apply(tape, x)?;
        Ok(tape.relu(lin))
    }
}
