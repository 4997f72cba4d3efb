//! Combination of multiple encoder systems into a single c-vector.
//!
//! A window of acoustic features is encoded by `k` frame-level systems into
//! sequences `H_1..H_k`, pooled by self-attention, and merged by one of four
//! topologies:
//!
//! * `simultaneous`: all `H_i` are stacked into one `kT×n` matrix and a
//!   single attention layer pools across systems and frames at once.
//! * `consec1`: each system is pooled separately, each pooled `E_i` is
//!   flattened to one row, and a single-head second attention stage weighs
//!   the `k` rows.
//! * `consec2`: each system is pooled separately and every pooled head row
//!   enters a multi-head second attention stage, so systems may contribute
//!   different head counts.
//! * `consec_fc`: pooled outputs are flattened, concatenated, and merged by
//!   one dense ReLU layer with no second attention stage.
//!
//! A final affine bottleneck maps the merged representation to the embedding
//! consumed by clustering. With `k = 1` and the `simultaneous` topology the
//! model degenerates to a plain single-system d-vector extractor, which is
//! how the baseline systems are expressed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    apply_attention, compute_annotations, penalty_modified, AnnotationMatrix, AttentionParams,
    BoundAttention, PenaltyConfig,
};
use crate::encoders::{BoundEncoder, Encoder};
use crate::error::{Error, Result};
use crate::layers::{Affine, BoundAffine};
use crate::tensor::{glorot_uniform, Tape, Tensor, TensorId};

/// How the pooled systems are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Simultaneous,
    Consec1,
    Consec2,
    ConsecFc,
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Simultaneous => "simultaneous",
            Topology::Consec1 => "consec1",
            Topology::Consec2 => "consec2",
            Topology::ConsecFc => "consec_fc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simultaneous" => Ok(Topology::Simultaneous),
            "consec1" => Ok(Topology::Consec1),
            "consec2" => Ok(Topology::Consec2),
            "consec_fc" => Ok(Topology::ConsecFc),
            other => Err(Error::Config(format!(
                "unknown topology {other:?}; expected simultaneous, consec1, consec2, or consec_fc"
            ))),
        }
    }
}

/// Structure of the combination model above the encoders.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinerConfig {
    pub topology: Topology,
    /// Head count per stage-1 attention layer. One entry when the topology
    /// is `simultaneous` (a single shared layer), otherwise one per system.
    pub stage1_heads: Vec<usize>,
    /// Per-head diagonal targets for each stage-1 layer, aligned with
    /// `stage1_heads`.
    pub stage1_lambdas: Vec<Vec<f64>>,
    pub stage2_heads: usize,
    pub stage2_lambdas: Vec<f64>,
    /// Penalty weight shared by every attentive stage.
    pub mu: f64,
    /// Hidden width of every attention layer.
    pub attention_hidden: usize,
    /// Apply a per-system square ReLU transform to pooled outputs before the
    /// second stage.
    pub fc_transform_enabled: bool,
    /// Output width of the dense merge layer (consec_fc only).
    pub fc_width: usize,
    pub bottleneck_dim: usize,
}

/// The spiky/smooth split used as the default head pattern: roughly three
/// of every five heads push toward one-hot annotations (λ = 1) and the rest
/// toward smooth ones (λ = 0.2).
pub fn default_lambda_pattern(heads: usize) -> Vec<f64> {
    let spiky = (heads * 3 + 2) / 5;
    (0..heads)
        .map(|i| if i < spiky.max(1) { 1.0 } else { 0.2 })
        .collect()
}

impl CombinerConfig {
    /// Defaults for a topology over `k` systems with `n`-dim encoder output:
    /// 5 heads per attentive layer in the 3-spiky/2-smooth pattern,
    /// attention hidden width `n/2`, and a 128-wide bottleneck.
    pub fn defaults(topology: Topology, k: usize, n: usize) -> Self {
        let heads = 5;
        let stage1_count = match topology {
            Topology::Simultaneous => 1,
            _ => k,
        };
        let (stage2_heads, stage2_lambdas) = match topology {
            Topology::Consec1 => (1, vec![1.0 / k.max(1) as f64]),
            Topology::Consec2 => (heads, default_lambda_pattern(heads)),
            _ => (0, Vec::new()),
        };
        CombinerConfig {
            topology,
            stage1_heads: vec![heads; stage1_count],
            stage1_lambdas: vec![default_lambda_pattern(heads); stage1_count],
            stage2_heads,
            stage2_lambdas,
            mu: 0.1,
            attention_hidden: (n / 2).max(1),
            fc_transform_enabled: topology == Topology::Consec2,
            fc_width: heads * n,
            bottleneck_dim: 128,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::Config("combiner needs at least one system".into()));
        }
        let expected_stage1 = match self.topology {
            Topology::Simultaneous => 1,
            _ => k,
        };
        if self.stage1_heads.len() != expected_stage1 {
            return Err(Error::Config(format!(
                "{} topology over {k} systems needs {expected_stage1} stage-1 layers, got {}",
                self.topology.name(),
                self.stage1_heads.len()
            )));
        }
        if self.stage1_lambdas.len() != self.stage1_heads.len() {
            return Err(Error::Config(
                "stage1_lambdas must align with stage1_heads".into(),
            ));
        }
        for (h, l) in self.stage1_heads.iter().zip(&self.stage1_lambdas) {
            if *h == 0 {
                return Err(Error::Config("head counts must be positive".into()));
            }
            if l.len() != *h {
                return Err(Error::Config(format!(
                    "stage-1 layer with {h} heads has {} λ values",
                    l.len()
                )));
            }
        }
        match self.topology {
            Topology::Consec1 => {
                if self.stage1_heads.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::Config(
                        "consec1 requires the same head count in every system".into(),
                    ));
                }
                if self.stage2_heads != 1 {
                    return Err(Error::Config(
                        "consec1 uses a single second-stage head".into(),
                    ));
                }
            }
            Topology::Consec2 => {
                if self.stage2_heads == 0 {
                    return Err(Error::Config(
                        "consec2 needs at least one second-stage head".into(),
                    ));
                }
            }
            _ => {}
        }
        if matches!(self.topology, Topology::Consec1 | Topology::Consec2)
            && self.stage2_lambdas.len() != self.stage2_heads
        {
            return Err(Error::Config(format!(
                "stage-2 with {} heads has {} λ values",
                self.stage2_heads,
                self.stage2_lambdas.len()
            )));
        }
        if self.topology == Topology::ConsecFc && self.fc_width == 0 {
            return Err(Error::Config("consec_fc needs a positive fc_width".into()));
        }
        if self.bottleneck_dim == 0 || self.attention_hidden == 0 {
            return Err(Error::Config(
                "bottleneck and attention widths must be positive".into(),
            ));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config(format!("μ must be ≥ 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Final fixed-length embedding of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector {
    values: Vec<f64>,
}

impl CVector {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if let Some(bad) = t.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "embedding contains non-finite value {bad}"
            )));
        }
        Ok(CVector {
            values: t.data().to_vec(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// ── Combination primitives ──────────────────────────────────────────────

/// Stack `H_1..H_k` (each `T×n`) system-major into `kT×n` and pool with one
/// shared attention layer. Returns (pooled `h×n`, penalty, annotations).
pub fn combine_simultaneous(
    tape: &mut Tape,
    systems: &[TensorId],
    atten: &BoundAttention,
    penalty: &PenaltyConfig,
) -> Result<(TensorId, TensorId, TensorId)> {
    if systems.is_empty() {
        return Err(Error::Config("combine_simultaneous: no systems".into()));
    }
    let (t0, n0) = {
        let s = tape.shape(systems[0]);
        (s[0], s[1])
    };
    for &s in &systems[1..] {
        let sh = tape.shape(s);
        if sh != [t0, n0] {
            return Err(Error::ShapeMismatch {
                op: "combine_simultaneous",
                lhs: vec![t0, n0],
                rhs: sh.to_vec(),
            });
        }
    }
    let stacked = tape.concat_rows(systems)?;
    let a = compute_annotations(tape, stacked, atten)?;
    let pooled = apply_attention(tape, a, stacked)?;
    let p = penalty_modified(tape, a, penalty)?;
    Ok((pooled, p, a))
}

/// Flatten each pooled `E_i` (`h×n`) to a row and pool the `k` rows with a
/// single-head attention stage. Returns (combined `1×hn`, penalty,
/// annotations `k×1`).
pub fn combine_consec1(
    tape: &mut Tape,
    pooled: &[TensorId],
    atten: &BoundAttention,
    penalty: &PenaltyConfig,
) -> Result<(TensorId, TensorId, TensorId)> {
    if pooled.is_empty() {
        return Err(Error::Config("combine_consec1: no systems".into()));
    }
    let shape0 = tape.shape(pooled[0]).to_vec();
    let mut rows = Vec::with_capacity(pooled.len());
    for &e in pooled {
        let sh = tape.shape(e).to_vec();
        if sh != shape0 {
            return Err(Error::ShapeMismatch {
                op: "combine_consec1",
                lhs: shape0,
                rhs: sh,
            });
        }
        rows.push(tape.reshape(e, vec![1, sh[0] * sh[1]])?);
    }
    let stacked = tape.concat_rows(&rows)?;
    let a = compute_annotations(tape, stacked, atten)?;
    let combined = apply_attention(tape, a, stacked)?;
    let p = penalty_modified(tape, a, penalty)?;
    Ok((combined, p, a))
}

/// Stack every pooled head row from every system (`Σhᵢ×n`) and pool them
/// with a multi-head attention stage. Systems may contribute different head
/// counts. Returns (combined `h₂×n`, penalty, annotations).
pub fn combine_consec2(
    tape: &mut Tape,
    pooled: &[TensorId],
    atten: &BoundAttention,
    penalty: &PenaltyConfig,
) -> Result<(TensorId, TensorId, TensorId)> {
    if pooled.is_empty() {
        return Err(Error::Config("combine_consec2: no systems".into()));
    }
    let n0 = tape.shape(pooled[0])[1];
    for &e in &pooled[1..] {
        let sh = tape.shape(e);
        if sh[1] != n0 {
            return Err(Error::ShapeMismatch {
                op: "combine_consec2",
                lhs: tape.shape(pooled[0]).to_vec(),
                rhs: sh.to_vec(),
            });
        }
    }
    let stacked = tape.concat_rows(pooled)?;
    let a = compute_annotations(tape, stacked, atten)?;
    let combined = apply_attention(tape, a, stacked)?;
    let p = penalty_modified(tape, a, penalty)?;
    Ok((combined, p, a))
}

/// Per-system square transform of a pooled output: `relu(E·W)`.
pub fn fc_transform(tape: &mut Tape, pooled: TensorId, w: TensorId) -> Result<TensorId> {
    let prod = tape.matmul(pooled, w)?;
    Ok(tape.relu(prod))
}

/// Flatten and concatenate every pooled output into one row and merge it
/// with a dense ReLU layer. No attention stage and no penalty.
pub fn combine_consec_fc(
    tape: &mut Tape,
    pooled: &[TensorId],
    fc: &BoundAffine,
) -> Result<TensorId> {
    if pooled.is_empty() {
        return Err(Error::Config("combine_consec_fc: no systems".into()));
    }
    let mut flat = Vec::with_capacity(pooled.len());
    for &e in pooled {
        let sh = tape.shape(e).to_vec();
        flat.push(tape.reshape(e, vec![sh[0] * sh[1], 1])?);
    }
    let stacked = tape.concat_rows(&flat)?;
    let row = {
        let len = tape.shape(stacked)[0];
        tape.reshape(stacked, vec![1, len])?
    };
    fc.apply_relu(tape, row)
}

// ── Full model ──────────────────────────────────────────────────────────

/// Complete windowed embedding model: `k` encoders, attentive pooling, the
/// configured combination topology, and the bottleneck.
#[derive(Debug, Clone)]
pub struct CVectorModel {
    encoders: Vec<Encoder>,
    stage1: Vec<AttentionParams>,
    stage1_penalty: Vec<PenaltyConfig>,
    fc: Vec<Tensor>,
    stage2: Option<AttentionParams>,
    stage2_penalty: Option<PenaltyConfig>,
    consec_fc: Option<Affine>,
    bottleneck: Affine,
    cfg: CombinerConfig,
}

/// Tape handles for one forward pass of the full model.
pub struct BoundModel {
    encoders: Vec<BoundEncoder>,
    stage1: Vec<BoundAttention>,
    fc: Vec<TensorId>,
    stage2: Option<BoundAttention>,
    consec_fc: Option<BoundAffine>,
    bottleneck: BoundAffine,
}

/// Everything a forward pass exposes for training and inspection.
pub struct ModelOutput {
    /// `1×bottleneck_dim` embedding row.
    pub embedding: TensorId,
    /// Scalar sum of every attentive penalty in the topology.
    pub penalty: TensorId,
    /// Stage-1 annotation matrices, one per attentive layer.
    pub stage1_annotations: Vec<TensorId>,
    pub stage2_annotation: Option<TensorId>,
}

/// Detached embedding of one window plus its annotation weights.
pub struct WindowEmbedding {
    pub cvector: CVector,
    pub stage1_annotations: Vec<AnnotationMatrix>,
    pub stage2_annotation: Option<AnnotationMatrix>,
    pub penalty: f64,
}

impl CVectorModel {
    pub fn init<R: Rng>(rng: &mut R, encoders: Vec<Encoder>, cfg: CombinerConfig) -> Result<Self> {
        let k = encoders.len();
        cfg.validate(k)?;
        let n = encoders
            .first()
            .ok_or_else(|| Error::Config("model needs at least one encoder".into()))?
            .output_dim();
        if encoders.iter().any(|e| e.output_dim() != n) {
            return Err(Error::Config(
                "all encoders must share one output width".into(),
            ));
        }

        let mut stage1 = Vec::new();
        let mut stage1_penalty = Vec::new();
        for (h, lambdas) in cfg.stage1_heads.iter().zip(&cfg.stage1_lambdas) {
            stage1.push(AttentionParams::init(rng, n, cfg.attention_hidden, *h)?);
            stage1_penalty.push(PenaltyConfig::new(cfg.mu, lambdas.clone())?);
        }

        let uses_fc_transform = cfg.fc_transform_enabled
            && matches!(cfg.topology, Topology::Consec1 | Topology::Consec2);
        let fc = if uses_fc_transform {
            (0..k).map(|_| glorot_uniform(rng, n, n).with_grad()).collect()
        } else {
            Vec::new()
        };

        let (stage2, stage2_penalty) = match cfg.topology {
            Topology::Consec1 => {
                let h = cfg.stage1_heads[0];
                (
                    Some(AttentionParams::init(rng, h * n, cfg.attention_hidden, 1)?),
                    Some(PenaltyConfig::new(cfg.mu, cfg.stage2_lambdas.clone())?),
                )
            }
            Topology::Consec2 => (
                Some(AttentionParams::init(
                    rng,
                    n,
                    cfg.attention_hidden,
                    cfg.stage2_heads,
                )?),
                Some(PenaltyConfig::new(cfg.mu, cfg.stage2_lambdas.clone())?),
            ),
            _ => (None, None),
        };

        let consec_fc = if cfg.topology == Topology::ConsecFc {
            let in_dim: usize = cfg.stage1_heads.iter().map(|h| h * n).sum();
            Some(Affine::init(rng, in_dim, cfg.fc_width))
        } else {
            None
        };

        let bottleneck_in = match cfg.topology {
            Topology::Simultaneous | Topology::Consec1 => cfg.stage1_heads[0] * n,
            Topology::Consec2 => cfg.stage2_heads * n,
            Topology::ConsecFc => cfg.fc_width,
        };
        let bottleneck = Affine::init(rng, bottleneck_in, cfg.bottleneck_dim);

        Ok(CVectorModel {
            encoders,
            stage1,
            stage1_penalty,
            fc,
            stage2,
            stage2_penalty,
            consec_fc,
            bottleneck,
            cfg,
        })
    }

    pub fn config(&self) -> &CombinerConfig {
        &self.cfg
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    pub fn systems(&self) -> usize {
        self.encoders.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.bottleneck_dim
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Trainable tensors with stable names, in binding order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            for (name, t) in e.named_params() {
                out.push((format!("system{i}.{name}"), t));
            }
        }
        for (i, a) in self.stage1.iter().enumerate() {
            out.push((format!("stage1_{i}.w1"), &a.w1));
            out.push((format!("stage1_{i}.w2"), &a.w2));
        }
        for (i, w) in self.fc.iter().enumerate() {
            out.push((format!("fc{i}.w"), w));
        }
        if let Some(a) = &self.stage2 {
            out.push(("stage2.w1".to_string(), &a.w1));
            out.push(("stage2.w2".to_string(), &a.w2));
        }
        if let Some(fc) = &self.consec_fc {
            out.push(("consec_fc.w".to_string(), &fc.w));
            out.push(("consec_fc.b".to_string(), &fc.b));
        }
        out.push(("bottleneck.w".to_string(), &self.bottleneck.w));
        out.push(("bottleneck.b".to_string(), &self.bottleneck.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter_mut().enumerate() {
            for (name, t) in e.named_params_mut() {
                out.push((format!("system{i}.{name}"), t));
            }
        }
        for (i, a) in self.stage1.iter_mut().enumerate() {
            out.push((format!("stage1_{i}.w1"), &mut a.w1));
            out.push((format!("stage1_{i}.w2"), &mut a.w2));
        }
        for (i, w) in self.fc.iter_mut().enumerate() {
            out.push((format!("fc{i}.w"), w));
        }
        if let Some(a) = &mut self.stage2 {
            out.push(("stage2.w1".to_string(), &mut a.w1));
            out.push(("stage2.w2".to_string(), &mut a.w2));
        }
        if let Some(fc) = &mut self.consec_fc {
            out.push(("consec_fc.w".to_string(), &mut fc.w));
            out.push(("consec_fc.b".to_string(), &mut fc.b));
        }
        out.push(("bottleneck.w".to_string(), &mut self.bottleneck.w));
        out.push(("bottleneck.b".to_string(), &mut self.bottleneck.b));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let ids: Vec<TensorId> = self
            .named_params()
            .iter()
            .map(|(_, t)| tape.leaf(t))
            .collect();
        self.bind_ids(&ids)
            .expect("bind_ids consumes exactly the named parameters")
    }

    /// Bind against parameter leaves already on a tape, given in
    /// [`CVectorModel::named_params`] order.
    pub fn bind_ids(&self, ids: &[TensorId]) -> Result<BoundModel> {
        let expected = self.named_params().len();
        if ids.len() != expected {
            return Err(Error::Config(format!(
                "bind_ids: model has {expected} parameter tensors, got {}",
                ids.len()
            )));
        }
        let mut it = ids.iter().copied();
        let bound = BoundModel {
            encoders: self.encoders.iter().map(|e| e.bind_ids(&mut it)).collect(),
            stage1: self.stage1.iter().map(|a| a.bind_ids(&mut it)).collect(),
            fc: self.fc.iter().map(|_| it.next().expect("fc id")).collect(),
            stage2: self.stage2.as_ref().map(|a| a.bind_ids(&mut it)),
            consec_fc: self.consec_fc.as_ref().map(|f| f.bind_ids(&mut it)),
            bottleneck: self.bottleneck.bind_ids(&mut it),
        };
        debug_assert!(it.next().is_none());
        Ok(bound)
    }

    /// One differentiable pass from raw features to embedding and penalty.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: TensorId,
        bound: &BoundModel,
    ) -> Result<ModelOutput> {
        let sequences: Vec<TensorId> = self
            .encoders
            .iter()
            .zip(&bound.encoders)
            .map(|(e, b)| e.forward(tape, features, b))
            .collect::<Result<_>>()?;

        let mut penalties = Vec::new();
        let mut stage1_annotations = Vec::new();
        let mut stage2_annotation = None;

        let combined = match self.cfg.topology {
            Topology::Simultaneous => {
                let (pooled, p, a) = combine_simultaneous(
                    tape,
                    &sequences,
                    &bound.stage1[0],
                    &self.stage1_penalty[0],
                )?;
                penalties.push(p);
                stage1_annotations.push(a);
                let sh = tape.shape(pooled).to_vec();
                tape.reshape(pooled, vec![1, sh[0] * sh[1]])?
            }
            Topology::Consec1 | Topology::Consec2 => {
                let pooled = self.pool_per_system(
                    tape,
                    &sequences,
                    bound,
                    &mut penalties,
                    &mut stage1_annotations,
                )?;
                let atten = bound.stage2.as_ref().expect("stage2 bound for consec");
                let pcfg = self.stage2_penalty.as_ref().expect("stage2 penalty");
                let (combined, p, a) = if self.cfg.topology == Topology::Consec1 {
                    combine_consec1(tape, &pooled, atten, pcfg)?
                } else {
                    combine_consec2(tape, &pooled, atten, pcfg)?
                };
                penalties.push(p);
                stage2_annotation = Some(a);
                let sh = tape.shape(combined).to_vec();
                tape.reshape(combined, vec![1, sh[0] * sh[1]])?
            }
            Topology::ConsecFc => {
                let pooled = self.pool_per_system(
                    tape,
                    &sequences,
                    bound,
                    &mut penalties,
                    &mut stage1_annotations,
                )?;
                let fc = bound.consec_fc.as_ref().expect("consec_fc bound");
                combine_consec_fc(tape, &pooled, fc)?
            }
        };

        let embedding = bound.bottleneck.apply(tape, combined)?;
        let mut penalty = penalties[0];
        for &p in &penalties[1..] {
            penalty = tape.add(penalty, p)?;
        }
        Ok(ModelOutput {
            embedding,
            penalty,
            stage1_annotations,
            stage2_annotation,
        })
    }

    /// Stage-1 pooling of each system's sequence, with the optional square
    /// ReLU transform applied to the pooled outputs.
    fn pool_per_system(
        &self,
        tape: &mut Tape,
        sequences: &[TensorId],
        bound: &BoundModel,
        penalties: &mut Vec<TensorId>,
        annotations: &mut Vec<TensorId>,
    ) -> Result<Vec<TensorId>> {
        let mut pooled = Vec::with_capacity(sequences.len());
        for (i, &seq) in sequences.iter().enumerate() {
            let a = compute_annotations(tape, seq, &bound.stage1[i])?;
            let mut e = apply_attention(tape, a, seq)?;
            penalties.push(penalty_modified(tape, a, &self.stage1_penalty[i])?);
            annotations.push(a);
            if !bound.fc.is_empty() {
                e = fc_transform(tape, e, bound.fc[i])?;
            }
            pooled.push(e);
        }
        Ok(pooled)
    }

    /// Detached eval-path embedding of one feature window.
    pub fn embed_window(&self, features: &Tensor) -> Result<WindowEmbedding> {
        let mut tape = Tape::new();
        let feats = tape.constant(features);
        let bound = self.bind(&mut tape);
        let out = self.forward(&mut tape, feats, &bound)?;
        let stage1_annotations = out
            .stage1_annotations
            .iter()
            .map(|&a| AnnotationMatrix::from_tensor(tape.tensor(a)))
            .collect::<Result<_>>()?;
        let stage2_annotation = out
            .stage2_annotation
            .map(|a| AnnotationMatrix::from_tensor(tape.tensor(a)))
            .transpose()?;
        Ok(WindowEmbedding {
            cvector: CVector::from_tensor(&tape.tensor(out.embedding))?,
            stage1_annotations,
            stage2_annotation,
            penalty: tape.scalar_value(out.penalty),
        })
    }
}

impl BoundModel {
    /// Tape ids in the same order as [`CVectorModel::named_params`].
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        for e in &self.encoders {
            out.extend(e.param_ids());
        }
        for a in &self.stage1 {
            out.push(a.w1);
            out.push(a.w2);
        }
        out.extend_from_slice(&self.fc);
        if let Some(a) = &self.stage2 {
            out.push(a.w1);
            out.push(a.w2);
        }
        if let Some(f) = &self.consec_fc {
            out.push(f.w);
            out.push(f.b);
        }
        out.push(self.bottleneck.w);
        out.push(self.bottleneck.b);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::self_atten;
    use crate::encoders::TdnnConfig;
    use crate::tensor::grad_check_multi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    fn atten(rng: &mut ChaCha8Rng, n: usize, d_a: usize, h: usize) -> AttentionParams {
        AttentionParams::init(rng, n, d_a, h).unwrap()
    }

    #[test]
    fn simultaneous_with_one_system_equals_plain_pooling() {
        let mut r = rng(1);
        let h_mat = rand_matrix(&mut r, 7, 4);
        let params = atten(&mut r, 4, 3, 2);
        let cfg = PenaltyConfig::new(0.2, vec![1.0, 0.3]).unwrap();

        let mut tape = Tape::new();
        let h_id = tape.constant(&h_mat);
        let bound = params.bind(&mut tape);
        let (pooled, p, _a) = combine_simultaneous(&mut tape, &[h_id], &bound, &cfg).unwrap();
        let (plain_e, plain_p) = self_atten(&mut tape, h_id, &bound, &cfg).unwrap();

        assert_eq!(tape.value(pooled), tape.value(plain_e));
        assert_eq!(
            tape.scalar_value(p).to_bits(),
            tape.scalar_value(plain_p).to_bits()
        );
    }

    #[test]
    fn simultaneous_duplicate_system_with_uniform_weights_is_column_mean() {
        let mut r = rng(2);
        let h_mat = rand_matrix(&mut r, 5, 3);
        // zero W2 forces uniform annotations over all 2T rows
        let params = AttentionParams::from_tensors(
            glorot_uniform(&mut r, 3, 2),
            Tensor::zeros(vec![2, 1]),
        )
        .unwrap();
        let cfg = PenaltyConfig::new(0.0, vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let h_id = tape.constant(&h_mat);
        let bound = params.bind(&mut tape);
        let (pooled, _p, a) =
            combine_simultaneous(&mut tape, &[h_id, h_id], &bound, &cfg).unwrap();
        assert_eq!(tape.shape(a), &[10, 1]);
        for c in 0..3 {
            let mean: f64 = (0..5).map(|t| h_mat.get2(t, c)).sum::<f64>() / 5.0;
            assert!((tape.value(pooled)[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn simultaneous_shapes_at_paper_scale() {
        let mut r = rng(3);
        let h1 = rand_matrix(&mut r, 200, 128);
        let h2 = rand_matrix(&mut r, 200, 128);
        let params = atten(&mut r, 128, 64, 5);
        let cfg = PenaltyConfig::original(0.1, 5).unwrap();
        let mut tape = Tape::new();
        let a_id = tape.constant(&h1);
        let b_id = tape.constant(&h2);
        let bound = params.bind(&mut tape);
        let (pooled, _p, a) =
            combine_simultaneous(&mut tape, &[a_id, b_id], &bound, &cfg).unwrap();
        assert_eq!(tape.shape(a), &[400, 5]);
        assert_eq!(tape.shape(pooled), &[5, 128]);
    }

    #[test]
    fn simultaneous_rejects_mismatched_systems() {
        let mut r = rng(4);
        let h1 = rand_matrix(&mut r, 5, 3);
        let h2 = rand_matrix(&mut r, 4, 3);
        let params = atten(&mut r, 3, 2, 1);
        let cfg = PenaltyConfig::original(0.1, 1).unwrap();
        let mut tape = Tape::new();
        let a_id = tape.constant(&h1);
        let b_id = tape.constant(&h2);
        let bound = params.bind(&mut tape);
        assert!(combine_simultaneous(&mut tape, &[a_id, b_id], &bound, &cfg).is_err());
    }

    #[test]
    fn consec1_single_system_passes_through() {
        let mut r = rng(5);
        let e1 = rand_matrix(&mut r, 2, 3);
        let params = atten(&mut r, 6, 4, 1);
        let cfg = PenaltyConfig::new(0.1, vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let e_id = tape.constant(&e1);
        let bound = params.bind(&mut tape);
        let (combined, _p, a) = combine_consec1(&mut tape, &[e_id], &bound, &cfg).unwrap();
        assert_eq!(tape.value(a), &[1.0]);
        assert_eq!(tape.shape(combined), &[1, 6]);
        assert_eq!(tape.value(combined), e1.data());
    }

    #[test]
    fn consec1_identical_systems_reproduce_the_input() {
        let mut r = rng(6);
        let e1 = rand_matrix(&mut r, 2, 3);
        let params = atten(&mut r, 6, 4, 1);
        let cfg = PenaltyConfig::new(0.1, vec![0.5]).unwrap();
        let mut tape = Tape::new();
        let e_id = tape.constant(&e1);
        let bound = params.bind(&mut tape);
        let (combined, _p, _a) =
            combine_consec1(&mut tape, &[e_id, e_id], &bound, &cfg).unwrap();
        for (got, want) in tape.value(combined).iter().zip(e1.data()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn consec1_matches_weighted_sum_oracle() {
        let mut r = rng(7);
        let es: Vec<Tensor> = (0..3).map(|_| rand_matrix(&mut r, 2, 4)).collect();
        let params = atten(&mut r, 8, 3, 1);
        let cfg = PenaltyConfig::new(0.1, vec![0.4]).unwrap();
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = es.iter().map(|e| tape.constant(e)).collect();
        let bound = params.bind(&mut tape);
        let (combined, _p, a) = combine_consec1(&mut tape, &ids, &bound, &cfg).unwrap();

        let weights = tape.value(a).to_vec();
        assert_eq!(weights.len(), 3);
        for j in 0..8 {
            let want: f64 = (0..3).map(|i| weights[i] * es[i].data()[j]).sum();
            assert!((tape.value(combined)[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn consec2_single_head_vector_repeats() {
        let mut r = rng(8);
        let e1 = rand_matrix(&mut r, 1, 4);
        let params = atten(&mut r, 4, 3, 5);
        let cfg = PenaltyConfig::original(0.1, 5).unwrap();
        let mut tape = Tape::new();
        let e_id = tape.constant(&e1);
        let bound = params.bind(&mut tape);
        let (combined, _p, _a) = combine_consec2(&mut tape, &[e_id], &bound, &cfg).unwrap();
        assert_eq!(tape.shape(combined), &[5, 4]);
        for head in 0..5 {
            for c in 0..4 {
                assert_eq!(tape.tensor(combined).get2(head, c), e1.get2(0, c));
            }
        }
    }

    #[test]
    fn consec2_uniform_weights_give_mean_head() {
        let mut r = rng(9);
        let e1 = rand_matrix(&mut r, 3, 4);
        let e2 = rand_matrix(&mut r, 2, 4);
        let params = AttentionParams::from_tensors(
            glorot_uniform(&mut r, 4, 3),
            Tensor::zeros(vec![3, 2]),
        )
        .unwrap();
        let cfg = PenaltyConfig::new(0.0, vec![1.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let a_id = tape.constant(&e1);
        let b_id = tape.constant(&e2);
        let bound = params.bind(&mut tape);
        let (combined, _p, _a) =
            combine_consec2(&mut tape, &[a_id, b_id], &bound, &cfg).unwrap();
        for c in 0..4 {
            let mean = ((0..3).map(|t| e1.get2(t, c)).sum::<f64>()
                + (0..2).map(|t| e2.get2(t, c)).sum::<f64>())
                / 5.0;
            for head in 0..2 {
                assert!((tape.tensor(combined).get2(head, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consec2_accepts_unequal_head_counts_and_keeps_shapes() {
        let mut r = rng(10);
        let e1 = rand_matrix(&mut r, 5, 128);
        let e2 = rand_matrix(&mut r, 5, 128);
        let params = atten(&mut r, 128, 64, 5);
        let cfg = PenaltyConfig::original(0.1, 5).unwrap();
        let mut tape = Tape::new();
        let a_id = tape.constant(&e1);
        let b_id = tape.constant(&e2);
        let bound = params.bind(&mut tape);
        let (combined, _p, a) =
            combine_consec2(&mut tape, &[a_id, b_id], &bound, &cfg).unwrap();
        assert_eq!(tape.shape(a), &[10, 5]);
        assert_eq!(tape.shape(combined), &[5, 128]);

        let e3 = rand_matrix(&mut r, 3, 128);
        let c_id = tape.constant(&e3);
        let (combined, _p, a) =
            combine_consec2(&mut tape, &[a_id, c_id], &bound, &cfg).unwrap();
        assert_eq!(tape.shape(a), &[8, 5]);
        assert_eq!(tape.shape(combined), &[5, 128]);
    }

    #[test]
    fn fc_transform_identity_and_zero() {
        let e = Tensor::matrix(2, 3, vec![0.5, 0.0, 1.2, 0.3, 2.0, 0.7]).unwrap();
        let eye = Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mut tape = Tape::new();
        let e_id = tape.constant(&e);
        let w_id = tape.constant(&eye);
        let out = fc_transform(&mut tape, e_id, w_id).unwrap();
        assert_eq!(tape.value(out), e.data());

        let zero = tape.constant(&Tensor::zeros(vec![3, 3]));
        let out = fc_transform(&mut tape, e_id, zero).unwrap();
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fc_transform_matches_matmul_clamp_oracle() {
        let mut r = rng(11);
        let e = rand_matrix(&mut r, 3, 4);
        let w = rand_matrix(&mut r, 4, 4);
        let mut tape = Tape::new();
        let e_id = tape.constant(&e);
        let w_id = tape.constant(&w);
        let out_id = fc_transform(&mut tape, e_id, w_id).unwrap();
        let out = tape.tensor(out_id);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..4).map(|c| e.get2(i, c) * w.get2(c, j)).sum();
                assert!((out.get2(i, j) - want.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consec_fc_identity_on_single_system() {
        let e = Tensor::matrix(2, 2, vec![0.5, 0.1, 0.9, 0.4]).unwrap();
        let eye = Tensor::matrix(4, 4, {
            let mut d = vec![0.0; 16];
            for i in 0..4 {
                d[i * 4 + i] = 1.0;
            }
            d
        })
        .unwrap();
        let fc = Affine {
            w: eye,
            b: Tensor::zeros(vec![1, 4]),
        };
        let mut tape = Tape::new();
        let e_id = tape.constant(&e);
        let bound = fc.bind(&mut tape);
        let out = combine_consec_fc(&mut tape, &[e_id], &bound).unwrap();
        assert_eq!(tape.value(out), e.data());
    }

    #[test]
    fn consec_fc_output_width_is_the_configured_one() {
        let mut r = rng(12);
        for k in 1..=3usize {
            let es: Vec<Tensor> = (0..k).map(|_| rand_matrix(&mut r, 2, 3)).collect();
            let fc = Affine::init(&mut r, k * 6, 7);
            let mut tape = Tape::new();
            let ids: Vec<TensorId> = es.iter().map(|e| tape.constant(e)).collect();
            let bound = fc.bind(&mut tape);
            let out = combine_consec_fc(&mut tape, &ids, &bound).unwrap();
            assert_eq!(tape.shape(out), &[1, 7]);
        }
    }

    #[test]
    fn consec_fc_matches_concat_matmul_oracle() {
        let mut r = rng(13);
        let e1 = rand_matrix(&mut r, 2, 3);
        let e2 = rand_matrix(&mut r, 2, 3);
        let fc = Affine::init(&mut r, 12, 5);
        let mut tape = Tape::new();
        let a_id = tape.constant(&e1);
        let b_id = tape.constant(&e2);
        let bound = fc.bind(&mut tape);
        let out_id = combine_consec_fc(&mut tape, &[a_id, b_id], &bound).unwrap();
        let out = tape.value(out_id);

        let concat: Vec<f64> = e1.data().iter().chain(e2.data()).copied().collect();
        for j in 0..5 {
            let mut want = fc.b.data()[j];
            for (c, v) in concat.iter().enumerate() {
                want += v * fc.w.get2(c, j);
            }
            assert!((out[j] - want.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_combinations_stay_in_per_coordinate_input_range() {
        // every output row of an attentive combination is a convex
        // combination of input rows, so each coordinate is bounded by the
        // per-column min and max of the inputs
        let mut r = rng(14);
        for _ in 0..20 {
            let t_len = r.random_range(2..8);
            let h1 = rand_matrix(&mut r, t_len, 4);
            let h2 = rand_matrix(&mut r, t_len, 4);
            let params = atten(&mut r, 4, 3, 3);
            let cfg = PenaltyConfig::original(0.1, 3).unwrap();
            let mut tape = Tape::new();
            let a_id = tape.constant(&h1);
            let b_id = tape.constant(&h2);
            let bound = params.bind(&mut tape);
            let (pooled, _p, _a) =
                combine_simultaneous(&mut tape, &[a_id, b_id], &bound, &cfg).unwrap();
            let pooled = tape.tensor(pooled);
            for c in 0..4 {
                let lo = (0..t_len)
                    .flat_map(|t| [h1.get2(t, c), h2.get2(t, c)])
                    .fold(f64::INFINITY, f64::min);
                let hi = (0..t_len)
                    .flat_map(|t| [h1.get2(t, c), h2.get2(t, c)])
                    .fold(f64::NEG_INFINITY, f64::max);
                for head in 0..3 {
                    let v = pooled.get2(head, c);
                    assert!(
                        v >= lo - 1e-12 && v <= hi + 1e-12,
                        "head {head} col {c}: {v} outside [{lo}, {hi}]"
                    );
                }
            }
        }
    }

    fn tiny_model(r: &mut ChaCha8Rng, topology: Topology, k: usize) -> CVectorModel {
        let encoders: Vec<Encoder> = (0..k)
            .map(|i| {
                if i % 2 == 0 {
                    Encoder::init_tdnn(
                        r,
                        TdnnConfig {
                            input_dim: 3,
                            layers: vec![crate::encoders::TdnnLayerSpec {
                                context_offsets: vec![-1, 0, 1],
                                out_dim: 4,
                            }],
                            projection_dim: 4,
                        },
                    )
                    .unwrap()
                } else {
                    Encoder::init_hornn(
                        r,
                        crate::encoders::HornnConfig {
                            input_dim: 3,
                            num_layers: 1,
                            state_dim: 4,
                            projection_dim: 4,
                            recurrence_offsets: vec![1],
                        },
                    )
                    .unwrap()
                }
            })
            .collect();
        let mut cfg = CombinerConfig::defaults(topology, k, 4);
        cfg.stage1_heads = match topology {
            Topology::Simultaneous => vec![2],
            _ => vec![2; k],
        };
        cfg.stage1_lambdas = cfg
            .stage1_heads
            .iter()
            .map(|&h| default_lambda_pattern(h))
            .collect();
        if topology == Topology::Consec2 {
            cfg.stage2_heads = 2;
            cfg.stage2_lambdas = default_lambda_pattern(2);
        }
        cfg.attention_hidden = 3;
        cfg.fc_width = 8;
        cfg.bottleneck_dim = 5;
        CVectorModel::init(r, encoders, cfg).unwrap()
    }

    #[test]
    fn model_output_shapes_for_every_topology() {
        let mut r = rng(15);
        for topology in [
            Topology::Simultaneous,
            Topology::Consec1,
            Topology::Consec2,
            Topology::ConsecFc,
        ] {
            for k in 1..=2usize {
                let model = tiny_model(&mut r, topology, k);
                let feats = rand_matrix(&mut r, 6, 3);
                let emb = model.embed_window(&feats).unwrap();
                assert_eq!(
                    emb.cvector.dim(),
                    5,
                    "{} k={k} wrong embedding dim",
                    topology.name()
                );
                assert!(emb.penalty >= 0.0);
                let expected_stage1 = match topology {
                    Topology::Simultaneous => 1,
                    _ => k,
                };
                assert_eq!(emb.stage1_annotations.len(), expected_stage1);
                match topology {
                    Topology::Simultaneous => {
                        assert_eq!(emb.stage1_annotations[0].frames(), 6 * k);
                        assert!(emb.stage2_annotation.is_none());
                    }
                    Topology::Consec1 => {
                        let a2 = emb.stage2_annotation.as_ref().unwrap();
                        assert_eq!((a2.frames(), a2.heads()), (k, 1));
                    }
                    Topology::Consec2 => {
                        let a2 = emb.stage2_annotation.as_ref().unwrap();
                        assert_eq!((a2.frames(), a2.heads()), (2 * k, 2));
                    }
                    Topology::ConsecFc => assert!(emb.stage2_annotation.is_none()),
                }
            }
        }
    }

    #[test]
    fn single_system_consec1_equals_simultaneous_baseline() {
        // with k=1 both reduce to bottleneck(flatten(E)) over the same
        // stage-1 pooling, so the embeddings must agree exactly when the
        // weights agree
        let mut r = rng(16);
        let sim = tiny_model(&mut r, Topology::Simultaneous, 1);
        let mut con = tiny_model(&mut r, Topology::Consec1, 1);
        // copy shared weights: encoder, stage-1 attention, bottleneck
        let src: Vec<Tensor> = sim.named_params().iter().map(|(_, t)| (*t).clone()).collect();
        let src_names: Vec<String> = sim.named_params().iter().map(|(n, _)| n.clone()).collect();
        for (name, t) in con.named_params_mut() {
            if let Some(pos) = src_names.iter().position(|n| *n == name) {
                *t = src[pos].clone();
            }
        }
        let feats = rand_matrix(&mut r, 6, 3);
        let a = sim.embed_window(&feats).unwrap();
        let b = con.embed_window(&feats).unwrap();
        for (x, y) in a.cvector.values().iter().zip(b.cvector.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn model_penalty_sums_every_stage() {
        let mut r = rng(17);
        let model = tiny_model(&mut r, Topology::Consec2, 2);
        let feats = rand_matrix(&mut r, 6, 3);
        let mut tape = Tape::new();
        let f_id = tape.constant(&feats);
        let bound = model.bind(&mut tape);
        let out = model.forward(&mut tape, f_id, &bound).unwrap();

        let mut total = 0.0;
        for &a in &out.stage1_annotations {
            let a_t = tape.tensor(a);
            let mut t2 = Tape::new();
            let a_id = t2.constant(&a_t);
            let p = penalty_modified(&mut t2, a_id, &model.stage1_penalty[0]).unwrap();
            total += t2.scalar_value(p);
        }
        let a2 = tape.tensor(out.stage2_annotation.unwrap());
        let mut t2 = Tape::new();
        let a_id = t2.constant(&a2);
        let p = penalty_modified(&mut t2, a_id, model.stage2_penalty.as_ref().unwrap()).unwrap();
        total += t2.scalar_value(p);

        assert!((tape.scalar_value(out.penalty) - total).abs() < 1e-12);
    }

    #[test]
    fn full_model_gradients_pass_finite_difference_check() {
        let mut r = rng(18);
        for topology in [
            Topology::Simultaneous,
            Topology::Consec1,
            Topology::Consec2,
            Topology::ConsecFc,
        ] {
            let model = tiny_model(&mut r, topology, 2);
            let feats = rand_matrix(&mut r, 5, 3);
            let params: Vec<Tensor> = model
                .named_params()
                .into_iter()
                .map(|(_, t)| t.clone())
                .collect();
            let err = grad_check_multi(
                |tape, ids| {
                    let f_id = tape.constant(&feats);
                    let bound = model.bind_ids(ids)?;
                    let out = model.forward(tape, f_id, &bound)?;
                    let e_sq = tape.frobenius_sq(out.embedding);
                    tape.add(e_sq, out.penalty)
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{} grad error {err}", topology.name());
        }
    }

    #[test]
    fn bottleneck_is_affine() {
        let mut r = rng(19);
        let fc = Affine::init(&mut r, 6, 4);
        let a = Tensor::row((0..6).map(|_| r.random_range(-1.0..1.0)).collect());
        let b = Tensor::row((0..6).map(|_| r.random_range(-1.0..1.0)).collect());
        let sum = Tensor::row(a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect());

        let apply = |x: &Tensor| -> Vec<f64> {
            let mut tape = Tape::new();
            let x_id = tape.constant(x);
            let bound = fc.bind(&mut tape);
            let out = bound.apply(&mut tape, x_id).unwrap();
            tape.value(out).to_vec()
        };
        let (fa, fb, fsum) = (apply(&a), apply(&b), apply(&sum));
        for j in 0..4 {
            let want = fa[j] + fb[j] - fc.b.data()[j];
            assert!((fsum[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bottleneck_shapes_at_paper_scale() {
        let mut r = rng(20);
        let fc = Affine::init(&mut r, 640, 128);
        let combined = rand_matrix(&mut r, 5, 128);
        let mut tape = Tape::new();
        let c_id = tape.constant(&combined);
        let flat = tape.reshape(c_id, vec![1, 640]).unwrap();
        let bound = fc.bind(&mut tape);
        let out = bound.apply(&mut tape, flat).unwrap();
        assert_eq!(tape.shape(out), &[1, 128]);
    }

    #[test]
    fn config_validation_rules() {
        let base = CombinerConfig::defaults(Topology::Consec1, 2, 8);
        base.validate(2).unwrap();

        let mut c = base.clone();
        c.stage1_heads = vec![5, 4];
        c.stage1_lambdas = vec![default_lambda_pattern(5), default_lambda_pattern(4)];
        assert!(c.validate(2).is_err(), "consec1 unequal heads");

        let mut c = CombinerConfig::defaults(Topology::Consec2, 2, 8);
        c.stage1_heads = vec![5, 4];
        c.stage1_lambdas = vec![default_lambda_pattern(5), default_lambda_pattern(4)];
        c.validate(2).unwrap();

        let mut c = base.clone();
        c.stage2_lambdas = vec![0.5, 0.5];
        assert!(c.validate(2).is_err(), "stage-2 λ count mismatch");

        let mut c = CombinerConfig::defaults(Topology::Simultaneous, 2, 8);
        c.stage1_heads = vec![5, 5];
        c.stage1_lambdas = vec![default_lambda_pattern(5); 2];
        assert!(c.validate(2).is_err(), "simultaneous wants one layer");

        assert!(base.validate(0).is_err());
    }

    #[test]
    fn default_lambda_pattern_scales() {
        assert_eq!(default_lambda_pattern(5), vec![1.0, 1.0, 1.0, 0.2, 0.2]);
        assert_eq!(default_lambda_pattern(1), vec![1.0]);
        assert_eq!(default_lambda_pattern(2), vec![1.0, 0.2]);
    }

    #[test]
    fn cvector_rejects_non_finite() {
        let t = Tensor::row(vec![1.0, f64::INFINITY]);
        assert!(CVector::from_tensor(&t).is_err());
        let ok = CVector::from_tensor(&Tensor::row(vec![3.0, 4.0])).unwrap();
        assert_eq!(ok.norm(), 5.0);
    }
}
