//! Multi-head self-attentive pooling with a tunable diversity penalty.
//!
//! The layer turns a variable-length sequence of frame vectors `H` (`T×n`)
//! into a fixed set of `h` pooled rows. Annotation weights are computed as
//! `A = softmax_columns(tanh(H·W1)·W2)`, each column of `A` is a distribution
//! over frames, and the pooled output is `E = Aᵀ·H`.
//!
//! Head diversity is steered by a penalty `P = μ‖AᵀA − Λ‖²_F` where `Λ` is a
//! diagonal matrix of per-head targets. `λᵢ = 1` rewards spiky (near one-hot)
//! annotation vectors, `λᵢ = 1/T` rewards smooth (near uniform) ones, and the
//! classic identity-target penalty is the special case `λᵢ = 1` for all
//! heads.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform, Tape, Tensor, TensorId};

/// Weights of one self-attentive layer: `W1` is `n×d_a`, `W2` is `d_a×h`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w1: Tensor,
    pub w2: Tensor,
}

impl AttentionParams {
    /// Random initialization for an `n`-dim input, `d_a`-wide hidden layer,
    /// and `h` heads.
    pub fn init<R: Rng>(rng: &mut R, n: usize, d_a: usize, h: usize) -> Result<Self> {
        if n == 0 || d_a == 0 || h == 0 {
            return Err(Error::Config(format!(
                "attention dims must be positive, got n={n} d_a={d_a} h={h}"
            )));
        }
        Ok(AttentionParams {
            w1: glorot_uniform(rng, n, d_a).with_grad(),
            w2: glorot_uniform(rng, d_a, h).with_grad(),
        })
    }

    pub fn from_tensors(w1: Tensor, w2: Tensor) -> Result<Self> {
        if w1.shape().len() != 2 || w2.shape().len() != 2 || w1.shape()[1] != w2.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "attention_params",
                lhs: w1.shape().to_vec(),
                rhs: w2.shape().to_vec(),
            });
        }
        Ok(AttentionParams { w1, w2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn heads(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.w1.numel() + self.w2.numel()
    }

    /// Record the weights on a tape for one forward pass.
    pub fn bind(&self, tape: &mut Tape) -> BoundAttention {
        BoundAttention {
            w1: tape.leaf(&self.w1),
            w2: tape.leaf(&self.w2),
            heads: self.heads(),
        }
    }

    /// Bind against leaves already on a tape, consumed from `ids` in
    /// `w1, w2` order.
    pub fn bind_ids<I: Iterator<Item = TensorId>>(&self, ids: &mut I) -> BoundAttention {
        BoundAttention {
            w1: ids.next().expect("bind_ids: id list too short"),
            w2: ids.next().expect("bind_ids: id list too short"),
            heads: self.heads(),
        }
    }
}

/// Tape handles for one pass through an attention layer.
#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    pub w1: TensorId,
    pub w2: TensorId,
    heads: usize,
}

impl BoundAttention {
    pub fn heads(&self) -> usize {
        self.heads
    }
}

/// Penalty weight and per-head diagonal targets.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub mu: f64,
    pub lambdas: Vec<f64>,
}

impl PenaltyConfig {
    pub fn new(mu: f64, lambdas: Vec<f64>) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::Config(format!("penalty weight must be ≥ 0, got {mu}")));
        }
        if lambdas.is_empty() {
            return Err(Error::Config("penalty needs at least one λ".into()));
        }
        if let Some(&bad) = lambdas.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
            return Err(Error::Config(format!(
                "λ values must lie in (0, 1], got {bad}"
            )));
        }
        Ok(PenaltyConfig { mu, lambdas })
    }

    /// Identity-target penalty: every λ is 1.
    pub fn original(mu: f64, heads: usize) -> Result<Self> {
        PenaltyConfig::new(mu, vec![1.0; heads])
    }

    pub fn heads(&self) -> usize {
        self.lambdas.len()
    }
}

/// Annotation weights `A = softmax_columns(tanh(H·W1)·W2)`, shape `T×h`.
pub fn compute_annotations(
    tape: &mut Tape,
    h_mat: TensorId,
    atten: &BoundAttention,
) -> Result<TensorId> {
    let hw1 = tape.matmul(h_mat, atten.w1)?;
    let act = tape.tanh(hw1);
    let scores = tape.matmul(act, atten.w2)?;
    tape.softmax_columns(scores)
}

/// Pooled output `E = Aᵀ·H`, shape `h×n`: row `i` is the frame sequence
/// averaged under head `i`'s annotation weights.
pub fn apply_attention(tape: &mut Tape, a_mat: TensorId, h_mat: TensorId) -> Result<TensorId> {
    let at = tape.transpose(a_mat);
    tape.matmul(at, h_mat)
}

/// Diversity penalty `μ‖AᵀA − Λ‖²_F` with `Λ = diag(lambdas)`.
pub fn penalty_modified(
    tape: &mut Tape,
    a_mat: TensorId,
    penalty: &PenaltyConfig,
) -> Result<TensorId> {
    let h = tape.shape(a_mat)[1];
    if h != penalty.lambdas.len() {
        return Err(Error::Config(format!(
            "penalty has {} λ values for {h} heads",
            penalty.lambdas.len()
        )));
    }
    let at = tape.transpose(a_mat);
    let gram = tape.matmul(at, a_mat)?;
    let mut diag = vec![0.0; h * h];
    for (i, &l) in penalty.lambdas.iter().enumerate() {
        diag[i * h + i] = l;
    }
    let target = Tensor::new(vec![h, h], diag)?;
    let target_id = tape.constant(&target);
    let neg_target = tape.scale(target_id, -1.0);
    let diff = tape.add(gram, neg_target)?;
    let sq = tape.frobenius_sq(diff);
    Ok(tape.scale(sq, penalty.mu))
}

/// Identity-target penalty `μ‖AᵀA − I‖²_F`; exactly `penalty_modified` with
/// every λ set to 1.
pub fn penalty_original(tape: &mut Tape, a_mat: TensorId, mu: f64) -> Result<TensorId> {
    let h = tape.shape(a_mat)[1];
    penalty_modified(tape, a_mat, &PenaltyConfig::original(mu, h)?)
}

/// One full pooling pass over a frame matrix already on the tape: returns
/// the pooled `h×n` output and the scalar penalty.
pub fn self_atten(
    tape: &mut Tape,
    h_mat: TensorId,
    atten: &BoundAttention,
    penalty: &PenaltyConfig,
) -> Result<(TensorId, TensorId)> {
    let a_mat = compute_annotations(tape, h_mat, atten)?;
    let pooled = apply_attention(tape, a_mat, h_mat)?;
    let p = penalty_modified(tape, a_mat, penalty)?;
    Ok((pooled, p))
}

/// Validated column-stochastic annotation matrix, detached from any tape.
#[derive(Debug, Clone)]
pub struct AnnotationMatrix {
    a: Tensor,
}

impl AnnotationMatrix {
    /// Wrap a `T×h` matrix, checking that every entry lies in `[0, 1]` and
    /// every column sums to 1 within 1e-9. Softmax output stays strictly
    /// inside `(0, 1)` mathematically; the closed bounds tolerate underflow
    /// at extreme logits.
    pub fn from_tensor(a: Tensor) -> Result<Self> {
        if a.shape().len() != 2 {
            return Err(Error::Numeric(format!(
                "annotation matrix must be rank 2, got shape {:?}",
                a.shape()
            )));
        }
        let (t_len, h) = a.dims2();
        for j in 0..h {
            let mut sum = 0.0;
            for i in 0..t_len {
                let v = a.get2(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Numeric(format!(
                        "annotation weight {v} at ({i},{j}) outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!(
                    "annotation column {j} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(AnnotationMatrix { a })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.a
    }

    pub fn frames(&self) -> usize {
        self.a.dims2().0
    }

    pub fn heads(&self) -> usize {
        self.a.dims2().1
    }
}

/// Concentration summary of one head's annotation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadStats {
    /// Shannon entropy in nats; zero-probability terms contribute 0.
    pub entropy: f64,
    pub max_weight: f64,
}

/// Per-head entropy and maximum weight, in head order.
pub fn annotation_stats(a: &AnnotationMatrix) -> Vec<HeadStats> {
    let (t_len, h) = a.tensor().dims2();
    (0..h)
        .map(|j| {
            let mut entropy = 0.0;
            let mut max_weight = 0.0f64;
            for i in 0..t_len {
                let p = a.tensor().get2(i, j);
                if p > 0.0 {
                    entropy -= p * p.ln();
                }
                max_weight = max_weight.max(p);
            }
            HeadStats {
                entropy,
                max_weight,
            }
        })
        .collect()
}

/// Append one window's annotation weights as CSV rows of
/// `window_id,head,frame,weight`. Callers write the header once.
pub fn write_annotation_csv(
    w: &mut impl Write,
    window_id: usize,
    a: &AnnotationMatrix,
) -> std::io::Result<()> {
    let (t_len, h) = a.tensor().dims2();
    for head in 0..h {
        for frame in 0..t_len {
            writeln!(w, "{window_id},{head},{frame},{}", a.tensor().get2(frame, head))?;
        }
    }
    Ok(())
}

pub const ANNOTATION_CSV_HEADER: &str = "window_id,head,frame,weight";
