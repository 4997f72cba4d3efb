//! Window sampling, the angular-softmax speaker classification objective,
//! frame-level pretraining, and joint training of the full model.
//!
//! Training slides a fixed-length window over each labeled recording,
//! discards windows that span a speaker change, and optimizes cross entropy
//! over speaker identities plus the attention penalties. Class scores are
//! cosine-based: the logit for speaker `j` is the projection of the
//! embedding onto speaker `j`'s unit-normalized weight column, so only the
//! angle between embedding and class direction carries class evidence.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::attention::annotation_stats;
use crate::combiner::CVectorModel;
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::tensor::{glorot_uniform, Tape, Tensor, TensorId};

/// Windowing and optimization settings shared by pretraining and joint
/// training.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub window_frames: usize,
    pub window_shift: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_frames: 200,
            window_shift: 100,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            pretrain_epochs: 3,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_frames == 0 {
            return Err(Error::Config("window_frames must be positive".into()));
        }
        if self.window_shift == 0 || self.window_shift > self.window_frames {
            return Err(Error::Config(format!(
                "window_shift must be in 1..={}, got {}",
                self.window_frames, self.window_shift
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One recording: a `T×f` feature matrix and the speaker of every frame.
#[derive(Debug, Clone)]
pub struct LabeledSequence {
    features: Tensor,
    speaker_ids: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(features: Tensor, speaker_ids: Vec<usize>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Data(format!(
                "sequence features must be rank 2, got shape {:?}",
                features.shape()
            )));
        }
        if features.shape()[0] != speaker_ids.len() {
            return Err(Error::Data(format!(
                "{} feature frames but {} frame labels",
                features.shape()[0],
                speaker_ids.len()
            )));
        }
        Ok(LabeledSequence {
            features,
            speaker_ids,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn speaker_ids(&self) -> &[usize] {
        &self.speaker_ids
    }

    pub fn frames(&self) -> usize {
        self.speaker_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// One speaker-homogeneous training window.
#[derive(Debug, Clone)]
pub struct LabeledWindow {
    pub features: Tensor,
    pub speaker_id: usize,
}

/// Slide a window over a labeled recording and keep every position whose
/// frames all belong to one speaker. A recording shorter than one window
/// yields no windows.
pub fn make_training_windows(
    seq: &LabeledSequence,
    window_frames: usize,
    window_shift: usize,
) -> Vec<LabeledWindow> {
    let f = seq.feature_dim();
    let mut out = Vec::new();
    for (start, end) in window_spans(seq.frames(), window_frames, window_shift) {
        let speaker = seq.speaker_ids[start];
        if seq.speaker_ids[start..end].iter().any(|&s| s != speaker) {
            continue;
        }
        let data = seq.features.data()[start * f..end * f].to_vec();
        out.push(LabeledWindow {
            features: Tensor::new(vec![window_frames, f], data).expect("window slice"),
            speaker_id: speaker,
        });
    }
    out
}

/// Window positions `[start, end)` at the given stride, regardless of
/// speaker changes. This is the extraction-time window layout.
pub fn window_spans(
    total_frames: usize,
    window_frames: usize,
    window_shift: usize,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if window_frames == 0 || window_shift == 0 || total_frames < window_frames {
        return out;
    }
    let mut start = 0;
    while start + window_frames <= total_frames {
        out.push((start, start + window_frames));
        start += window_shift;
    }
    out
}

/// Number of distinct speakers in a corpus, requiring contiguous ids
/// `0..count`.
pub fn corpus_speakers(corpus: &[LabeledSequence]) -> Result<usize> {
    let mut seen: Vec<bool> = Vec::new();
    for seq in corpus {
        for &s in seq.speaker_ids() {
            if s >= seen.len() {
                seen.resize(s + 1, false);
            }
            seen[s] = true;
        }
    }
    if seen.is_empty() {
        return Err(Error::Data("corpus has no labeled frames".into()));
    }
    if let Some(gap) = seen.iter().position(|&s| !s) {
        return Err(Error::Data(format!(
            "speaker ids must be contiguous from 0; id {gap} is unused"
        )));
    }
    Ok(seen.len())
}

// ── Classification head ─────────────────────────────────────────────────

/// Bias-free classifier whose logits are cosine scores scaled by the
/// embedding norm: `logit_j = e·w_j / ‖w_j‖`.
#[derive(Debug, Clone)]
pub struct AsoftmaxHead {
    pub w: Tensor,
}

impl AsoftmaxHead {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::Config(format!(
                "classifier needs positive dimensions, got {dim}×{classes}"
            )));
        }
        Ok(AsoftmaxHead {
            w: glorot_uniform(rng, dim, classes).with_grad(),
        })
    }

    pub fn dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.w.shape()[1]
    }

    /// Detached logits for one embedding.
    pub fn logits_for(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        let (dim, classes) = (self.dim(), self.classes());
        if embedding.len() != dim {
            return Err(Error::ShapeMismatch {
                op: "asoftmax_logits",
                lhs: vec![1, embedding.len()],
                rhs: vec![dim, classes],
            });
        }
        let w = self.w.data();
        (0..classes)
            .map(|j| {
                let mut dot = 0.0;
                let mut norm_sq = 0.0;
                for i in 0..dim {
                    dot += embedding[i] * w[i * classes + j];
                    norm_sq += w[i * classes + j] * w[i * classes + j];
                }
                if norm_sq == 0.0 {
                    return Err(Error::Numeric(format!(
                        "class weight column {j} has zero norm"
                    )));
                }
                Ok(dot / norm_sq.sqrt())
            })
            .collect()
    }

    /// Class with the highest logit.
    pub fn classify(&self, embedding: &[f64]) -> Result<usize> {
        let logits = self.logits_for(embedding)?;
        Ok(argmax(&logits))
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Differentiable cosine logits for a `B×dim` batch of embeddings against a
/// `dim×classes` weight matrix: each weight column is normalized to unit
/// length, so column scale carries no class evidence.
pub fn asoftmax_logits(tape: &mut Tape, embeddings: TensorId, w: TensorId) -> Result<TensorId> {
    let w_sq = tape.mul(w, w)?;
    let norm_sq = tape.col_sums(w_sq);
    if let Some(j) = tape.value(norm_sq).iter().position(|&v| v == 0.0) {
        return Err(Error::Numeric(format!(
            "class weight column {j} has zero norm"
        )));
    }
    let norms = tape.sqrt(norm_sq);
    let scores = tape.matmul(embeddings, w)?;
    tape.div(scores, norms)
}

/// Mean cross entropy of the labeled rows plus the sum of all penalty
/// scalars.
pub fn total_loss(
    tape: &mut Tape,
    logits: TensorId,
    labels: &[usize],
    penalties: &[TensorId],
) -> Result<TensorId> {
    let mut loss = tape.cross_entropy_rows(logits, labels)?;
    for &p in penalties {
        loss = tape.add(loss, p)?;
    }
    Ok(loss)
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Adaptive-moment gradient descent with bias-corrected first and second
/// moment estimates.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. Parameter order must stay fixed across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Config(format!(
                "optimizer got {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::Config(
                "optimizer parameter count changed between steps".into(),
            ));
        }
        self.steps += 1;
        let bias1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bias2 = 1.0 - self.beta2.powi(self.steps as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            if p.numel() != g.len() {
                return Err(Error::Config(format!(
                    "parameter has {} values but gradient has {}",
                    p.numel(),
                    g.len()
                )));
            }
            let data = p.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

// ── Training loops ──────────────────────────────────────────────────────

/// One row of the loss trace emitted per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

pub const LOSS_TRACE_HEADER: &str = "epoch,train_loss,val_acc";

pub fn write_loss_trace<W: std::io::Write>(out: &mut W, trace: &[EpochStats]) -> std::io::Result<()> {
    writeln!(out, "{LOSS_TRACE_HEADER}")?;
    for row in trace {
        writeln!(out, "{},{},{}", row.epoch, row.train_loss, row.val_acc)?;
    }
    Ok(())
}

/// Result of frame-level pretraining: the per-epoch loss curve and the
/// temporary frame classifier, which does not become part of any model.
pub struct PretrainOutcome {
    pub losses: Vec<f64>,
    pub head: AsoftmaxHead,
}

/// Train one encoder to classify the speaker of every individual frame,
/// using a temporary cosine classifier on the frame outputs. This
/// initializes encoder weights before joint training.
pub fn pretrain_frame_level(
    encoder: &mut Encoder,
    corpus: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let speakers = corpus_speakers(corpus)?;
    if speakers < 2 {
        return Err(Error::Config(
            "pretraining needs at least two speakers".into(),
        ));
    }
    let windows = all_training_windows(corpus, cfg);
    if windows.is_empty() {
        return Err(Error::Data(
            "no speaker-homogeneous training windows in the corpus".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = AsoftmaxHead::init(&mut rng, encoder.output_dim(), speakers)?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);

    for _ in 0..cfg.pretrain_epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = encoder.bind(&mut tape);
            let head_id = tape.leaf(&head.w);
            let mut outputs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::new();
            for &i in chunk {
                let w = &windows[i];
                let feats = tape.constant(&w.features);
                outputs.push(encoder.forward(&mut tape, feats, &bound)?);
                labels.extend(std::iter::repeat(w.speaker_id).take(cfg.window_frames));
            }
            let stacked = tape.concat_rows(&outputs)?;
            let logits = asoftmax_logits(&mut tape, stacked, head_id)?;
            let loss = total_loss(&mut tape, logits, &labels, &[])?;
            tape.backward(loss)?;

            let mut grads: Vec<Vec<f64>> = bound
                .param_ids()
                .iter()
                .map(|&id| tape.grad(id).map(|g| g.to_vec()))
                .collect::<Result<_>>()?;
            grads.push(tape.grad(head_id)?.to_vec());
            total += tape.scalar_value(loss);
            batches += 1;
            drop(tape);

            let mut params: Vec<&mut Tensor> = encoder
                .named_params_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            params.push(&mut head.w);
            opt.step(&mut params, &grads)?;
        }
        losses.push(total / batches as f64);
    }
    Ok(PretrainOutcome { losses, head })
}

/// Fraction of individual frames whose encoder output the head assigns to
/// the right speaker.
pub fn frame_accuracy(
    encoder: &Encoder,
    head: &AsoftmaxHead,
    windows: &[LabeledWindow],
) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for w in windows {
        let h = encoder.encode(&w.features)?;
        let (frames, n) = (h.shape()[0], h.shape()[1]);
        for t in 0..frames {
            let row = &h.data()[t * n..(t + 1) * n];
            if head.classify(row)? == w.speaker_id {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("no frames to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Fraction of windows whose embedding the head assigns to the right
/// speaker.
pub fn window_accuracy(
    model: &CVectorModel,
    head: &AsoftmaxHead,
    windows: &[LabeledWindow],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to score".into()));
    }
    let mut correct = 0usize;
    for w in windows {
        let emb = model.embed_window(&w.features)?;
        if head.classify(emb.cvector.values())? == w.speaker_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / windows.len() as f64)
}

/// Trained classifier head and the per-epoch loss trace.
#[derive(Debug)]
pub struct TrainOutcome {
    pub head: AsoftmaxHead,
    pub trace: Vec<EpochStats>,
}

/// Jointly train the full model on speaker classification. Recordings are
/// split 90/10 into train and validation sets; the trace reports mean batch
/// loss and validation window accuracy per epoch. Deterministic for a given
/// seed.
pub fn train(
    model: &mut CVectorModel,
    corpus: &[LabeledSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let speakers = corpus_speakers(corpus)?;
    if speakers < 2 {
        return Err(Error::Config(
            "training needs at least two speakers".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let val_count = if corpus.len() >= 2 {
        (corpus.len() / 10).max(1)
    } else {
        0
    };
    let (val_recs, train_recs) = order.split_at(val_count);
    let train_windows: Vec<LabeledWindow> = train_recs
        .iter()
        .flat_map(|&i| make_training_windows(&corpus[i], cfg.window_frames, cfg.window_shift))
        .collect();
    let val_windows: Vec<LabeledWindow> = val_recs
        .iter()
        .flat_map(|&i| make_training_windows(&corpus[i], cfg.window_frames, cfg.window_shift))
        .collect();
    if train_windows.is_empty() {
        return Err(Error::Data(
            "no speaker-homogeneous training windows in the corpus".into(),
        ));
    }

    let mut head = AsoftmaxHead::init(&mut rng, model.embedding_dim(), speakers)?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut idx: Vec<usize> = (0..train_windows.len()).collect();
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledWindow> = chunk.iter().map(|&i| &train_windows[i]).collect();
            total += train_batch(model, &mut head, &mut opt, &batch)?;
            batches += 1;
        }
        let eval_set = if val_windows.is_empty() {
            &train_windows
        } else {
            &val_windows
        };
        trace.push(EpochStats {
            epoch: epoch + 1,
            train_loss: total / batches as f64,
            val_acc: window_accuracy(model, &head, eval_set)?,
        });
    }
    Ok(TrainOutcome { head, trace })
}

fn train_batch(
    model: &mut CVectorModel,
    head: &mut AsoftmaxHead,
    opt: &mut Adam,
    batch: &[&LabeledWindow],
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let head_id = tape.leaf(&head.w);

    let mut embeddings = Vec::with_capacity(batch.len());
    let mut penalties = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    for w in batch {
        let feats = tape.constant(&w.features);
        let out = model.forward(&mut tape, feats, &bound)?;
        embeddings.push(out.embedding);
        penalties.push(out.penalty);
        labels.push(w.speaker_id);
    }
    let stacked = tape.concat_rows(&embeddings)?;
    let logits = asoftmax_logits(&mut tape, stacked, head_id)?;
    let mut penalty_sum = penalties[0];
    for &p in &penalties[1..] {
        penalty_sum = tape.add(penalty_sum, p)?;
    }
    let penalty_mean = tape.scale(penalty_sum, 1.0 / batch.len() as f64);
    let loss = total_loss(&mut tape, logits, &labels, &[penalty_mean])?;
    tape.backward(loss)?;

    let mut grads: Vec<Vec<f64>> = bound
        .param_ids()
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()))
        .collect::<Result<_>>()?;
    grads.push(tape.grad(head_id)?.to_vec());
    let loss_value = tape.scalar_value(loss);
    drop(tape);

    let mut params: Vec<&mut Tensor> = model
        .named_params_mut()
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    params.push(&mut head.w);
    opt.step(&mut params, &grads)?;
    Ok(loss_value)
}

fn all_training_windows(corpus: &[LabeledSequence], cfg: &TrainConfig) -> Vec<LabeledWindow> {
    corpus
        .iter()
        .flat_map(|seq| make_training_windows(seq, cfg.window_frames, cfg.window_shift))
        .collect()
}

/// Mean annotation entropy per stage-1 head across a set of windows, in
/// nats. Summarizes how concentrated the learned attention weights are.
pub fn annotation_entropy_profile(
    model: &CVectorModel,
    windows: &[LabeledWindow],
) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to profile".into()));
    }
    let mut sums: Vec<f64> = Vec::new();
    for w in windows {
        let emb = model.embed_window(&w.features)?;
        let mut head_idx = 0usize;
        for a in &emb.stage1_annotations {
            for stats in annotation_stats(a) {
                if head_idx >= sums.len() {
                    sums.resize(head_idx + 1, 0.0);
                }
                sums[head_idx] += stats.entropy;
                head_idx += 1;
            }
        }
    }
    Ok(sums.iter().map(|s| s / windows.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combiner::{CombinerConfig, Topology};
    use crate::encoders::{HornnConfig, TdnnConfig, TdnnLayerSpec};
    use crate::tensor::grad_check_multi;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn constant_sequence(frames: usize, f: usize, speaker: usize, fill: f64) -> LabeledSequence {
        LabeledSequence::new(
            Tensor::new(vec![frames, f], vec![fill; frames * f]).unwrap(),
            vec![speaker; frames],
        )
        .unwrap()
    }

    /// Recording whose frame `t` has every feature equal to `t`, with one
    /// speaker change at `change`.
    fn ramp_sequence(frames: usize, f: usize, change: usize) -> LabeledSequence {
        let data: Vec<f64> = (0..frames)
            .flat_map(|t| std::iter::repeat(t as f64).take(f))
            .collect();
        let labels = (0..frames).map(|t| usize::from(t >= change)).collect();
        LabeledSequence::new(Tensor::new(vec![frames, f], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn windows_tile_a_single_speaker_recording() {
        let seq = ramp_sequence(400, 2, 400);
        let windows = make_training_windows(&seq, 200, 100);
        assert_eq!(windows.len(), 3);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.features.shape(), &[200, 2]);
            assert_eq!(w.features.get2(0, 0), (i * 100) as f64);
            assert_eq!(w.speaker_id, 0);
        }
    }

    #[test]
    fn exact_length_recording_gives_one_window() {
        let seq = ramp_sequence(200, 2, 200);
        assert_eq!(make_training_windows(&seq, 200, 100).len(), 1);
        let short = ramp_sequence(199, 2, 199);
        assert!(make_training_windows(&short, 200, 100).is_empty());
    }

    #[test]
    fn windows_spanning_a_speaker_change_are_dropped() {
        let seq = ramp_sequence(400, 2, 250);
        let windows = make_training_windows(&seq, 200, 100);
        // offsets 100 and 200 cross frame 250, only offset 0 survives
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].features.get2(0, 0), 0.0);
        assert_eq!(windows[0].speaker_id, 0);

        // windows starting inside the second speaker region reappear once
        // the recording is long enough
        let seq = ramp_sequence(500, 2, 250);
        let windows = make_training_windows(&seq, 200, 100);
        let speakers: Vec<usize> = windows.iter().map(|w| w.speaker_id).collect();
        assert_eq!(speakers, vec![0, 1]);
    }

    #[test]
    fn extraction_spans_ignore_speaker_changes() {
        assert_eq!(
            window_spans(400, 200, 100),
            vec![(0, 200), (100, 300), (200, 400)]
        );
        assert_eq!(window_spans(199, 200, 100), Vec::<(usize, usize)>::new());
        assert_eq!(window_spans(200, 200, 100), vec![(0, 200)]);
    }

    #[test]
    fn corpus_speaker_count_requires_contiguous_ids() {
        let a = constant_sequence(5, 2, 0, 1.0);
        let b = constant_sequence(5, 2, 2, 1.0);
        assert!(corpus_speakers(&[a.clone(), b]).is_err());
        let c = constant_sequence(5, 2, 1, 1.0);
        assert_eq!(corpus_speakers(&[a, c]).unwrap(), 2);
        assert!(corpus_speakers(&[]).is_err());
    }

    #[test]
    fn aligned_and_orthogonal_classes_get_norm_and_zero_logits() {
        // class 0 along x, class 1 along y, embedding 3·x
        let head = AsoftmaxHead {
            w: Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 5.0]).unwrap(),
        };
        let logits = head.logits_for(&[3.0, 0.0]).unwrap();
        assert!((logits[0] - 3.0).abs() < 1e-12);
        assert_eq!(logits[1], 0.0);
    }

    #[test]
    fn column_scale_does_not_change_logits() {
        let mut r = rng(31);
        let w = glorot_uniform(&mut r, 6, 4);
        let e: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let head = AsoftmaxHead { w: w.clone() };
        let base = head.logits_for(&e).unwrap();

        let mut scaled = w.clone();
        for i in 0..6 {
            scaled.data_mut()[i * 4 + 2] *= 10.0;
        }
        let head10 = AsoftmaxHead { w: scaled };
        let after = head10.logits_for(&e).unwrap();
        for (x, y) in base.iter().zip(&after) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_matches_cosine_similarity_oracle() {
        let mut r = rng(32);
        for _ in 0..100 {
            let w = glorot_uniform(&mut r, 5, 7);
            let e: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            let head = AsoftmaxHead { w: w.clone() };

            let e_norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for j in 0..7 {
                let mut dot = 0.0;
                let mut nsq = 0.0;
                for i in 0..5 {
                    dot += e[i] * w.get2(i, j);
                    nsq += w.get2(i, j) * w.get2(i, j);
                }
                let cos = dot / (e_norm * nsq.sqrt());
                if cos > best_cos {
                    best_cos = cos;
                    best = j;
                }
            }
            assert_eq!(head.classify(&e).unwrap(), best);
        }
    }

    #[test]
    fn argmax_is_scale_invariant_in_both_arguments() {
        let mut r = rng(33);
        for _ in 0..50 {
            let w = glorot_uniform(&mut r, 4, 5);
            let e: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let head = AsoftmaxHead { w };
            let base = head.classify(&e).unwrap();

            let e_scaled: Vec<f64> = e.iter().map(|v| v * 37.0).collect();
            assert_eq!(head.classify(&e_scaled).unwrap(), base);

            let col = r.random_range(0..5);
            let mut scaled = head.w.clone();
            for i in 0..4 {
                scaled.data_mut()[i * 5 + col] *= 0.001;
            }
            let shrunk = AsoftmaxHead { w: scaled };
            assert_eq!(shrunk.classify(&e).unwrap(), base);
        }
    }

    #[test]
    fn tape_logits_match_detached_logits() {
        let mut r = rng(34);
        let w = glorot_uniform(&mut r, 5, 3);
        let head = AsoftmaxHead { w: w.clone() };
        let e: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let e_id = tape.constant(&Tensor::row(e.clone()));
        let w_id = tape.constant(&w);
        let logits = asoftmax_logits(&mut tape, e_id, w_id).unwrap();
        for (x, y) in tape.value(logits).iter().zip(head.logits_for(&e).unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_norm_column_is_rejected() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let head = AsoftmaxHead { w: w.clone() };
        assert!(head.logits_for(&[1.0, 1.0]).is_err());

        let mut tape = Tape::new();
        let e_id = tape.constant(&Tensor::row(vec![1.0, 1.0]));
        let w_id = tape.constant(&w);
        let err = asoftmax_logits(&mut tape, e_id, w_id).unwrap_err();
        assert!(err.to_string().contains("column 1"));
    }

    #[test]
    fn uniform_logits_lose_ln_n() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::row(vec![0.7; 7]));
        let loss = total_loss(&mut tape, logits, &[3], &[]).unwrap();
        assert!((tape.scalar_value(loss) - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_lose_almost_nothing() {
        let mut tape = Tape::new();
        let mut row = vec![0.0; 5];
        row[2] = 30.0;
        let logits = tape.constant(&Tensor::row(row));
        let loss = total_loss(&mut tape, logits, &[2], &[]).unwrap();
        assert!(tape.scalar_value(loss) < 1e-10);
    }

    #[test]
    fn loss_decomposes_into_cross_entropy_plus_penalties() {
        let mut r = rng(35);
        let logits_row: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::row(logits_row.clone()));
        let plain = total_loss(&mut tape, logits, &[1], &[]).unwrap();
        let p1 = tape.constant(&Tensor::scalar(0.25));
        let p2 = tape.constant(&Tensor::scalar(1.5));
        let full = total_loss(&mut tape, logits, &[1], &[p1, p2]).unwrap();

        let max = logits_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits_row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let want_ce = lse - logits_row[1];
        assert!((tape.scalar_value(plain) - want_ce).abs() < 1e-12);
        assert!((tape.scalar_value(full) - (want_ce + 1.75)).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut tape = Tape::new();
        let logits = tape.constant(&Tensor::row(vec![0.0, 1.0]));
        assert!(total_loss(&mut tape, logits, &[2], &[]).is_err());
    }

    #[test]
    fn adam_with_zero_rate_leaves_parameters_untouched() {
        let mut p = Tensor::row(vec![1.0, -2.0, 0.5]).with_grad();
        let before = p.data().to_vec();
        let mut opt = Adam::new(0.0);
        for _ in 0..3 {
            opt.step(&mut [&mut p], &[vec![0.3, -0.7, 2.0]]).unwrap();
        }
        for (x, y) in p.data().iter().zip(&before) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        // bias correction makes the first update ≈ lr · sign(gradient)
        let mut p = Tensor::row(vec![1.0, 1.0]).with_grad();
        let mut opt = Adam::new(0.01);
        opt.step(&mut [&mut p], &[vec![0.4, -0.002]]).unwrap();
        assert!((p.data()[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((p.data()[1] - (1.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_rejects_mismatched_inputs() {
        let mut p = Tensor::row(vec![1.0]).with_grad();
        let mut opt = Adam::new(0.1);
        assert!(opt.step(&mut [&mut p], &[]).is_err());
        assert!(opt.step(&mut [&mut p], &[vec![0.1, 0.2]]).is_err());
    }

    fn tiny_corpus(
        r: &mut ChaCha8Rng,
        speakers: usize,
        recordings_per_speaker: usize,
        frames: usize,
        f: usize,
    ) -> Vec<LabeledSequence> {
        // well-separated speakers: distinct orthant corners plus small noise
        let mut corpus = Vec::new();
        for s in 0..speakers {
            for _ in 0..recordings_per_speaker {
                let data: Vec<f64> = (0..frames * f)
                    .map(|i| {
                        let dim = i % f;
                        let sign = if (s >> (dim % 4)) & 1 == 1 { 1.0 } else { -1.0 };
                        sign + r.random_range(-0.2..0.2)
                    })
                    .collect();
                corpus.push(
                    LabeledSequence::new(
                        Tensor::new(vec![frames, f], data).unwrap(),
                        vec![s; frames],
                    )
                    .unwrap(),
                );
            }
        }
        corpus
    }

    fn tiny_tdnn(r: &mut ChaCha8Rng, f: usize, n: usize) -> Encoder {
        Encoder::init_tdnn(
            r,
            TdnnConfig {
                input_dim: f,
                layers: vec![
                    TdnnLayerSpec {
                        context_offsets: vec![-1, 0, 1],
                        out_dim: n,
                    },
                    TdnnLayerSpec {
                        context_offsets: vec![0],
                        out_dim: n,
                    },
                ],
                projection_dim: n,
            },
        )
        .unwrap()
    }

    fn tiny_hornn(r: &mut ChaCha8Rng, f: usize, n: usize) -> Encoder {
        Encoder::init_hornn(
            r,
            HornnConfig {
                input_dim: f,
                num_layers: 1,
                state_dim: n,
                projection_dim: n,
                recurrence_offsets: vec![1, 2],
            },
        )
        .unwrap()
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            window_frames: 8,
            window_shift: 4,
            learning_rate: 5e-3,
            batch_size: 8,
            epochs: 2,
            pretrain_epochs: 2,
            seed: 7,
        }
    }

    #[test]
    fn full_objective_gradient_passes_finite_difference_check() {
        let mut r = rng(36);
        let encoders = vec![tiny_tdnn(&mut r, 3, 8), tiny_hornn(&mut r, 3, 8)];
        let mut cfg = CombinerConfig::defaults(Topology::Consec2, 2, 8);
        cfg.stage1_heads = vec![2, 2];
        cfg.stage1_lambdas = vec![vec![1.0, 0.2]; 2];
        cfg.stage2_heads = 2;
        cfg.stage2_lambdas = vec![1.0, 0.2];
        cfg.attention_hidden = 4;
        cfg.bottleneck_dim = 6;
        let model = CVectorModel::init(&mut r, encoders, cfg).unwrap();
        let head = AsoftmaxHead::init(&mut r, 6, 3).unwrap();

        let w1 = Tensor::new(
            vec![6, 3],
            (0..18).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let w2 = Tensor::new(
            vec![6, 3],
            (0..18).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels = [0usize, 2];

        let mut params: Vec<Tensor> = model
            .named_params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        params.push(head.w.clone());

        let err = grad_check_multi(
            |tape, ids| {
                let (model_ids, head_id) = ids.split_at(ids.len() - 1);
                let bound = model.bind_ids(model_ids)?;
                let f1 = tape.constant(&w1);
                let f2 = tape.constant(&w2);
                let out1 = model.forward(tape, f1, &bound)?;
                let out2 = model.forward(tape, f2, &bound)?;
                let batch = tape.concat_rows(&[out1.embedding, out2.embedding])?;
                let logits = asoftmax_logits(tape, batch, head_id[0])?;
                let p = tape.add(out1.penalty, out2.penalty)?;
                let p_mean = tape.scale(p, 0.5);
                total_loss(tape, logits, &labels, &[p_mean])
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "objective grad error {err}");
    }

    #[test]
    fn pretraining_separates_two_speakers() {
        let mut r = rng(37);
        let corpus = tiny_corpus(&mut r, 2, 2, 24, 3);
        let mut encoder = tiny_tdnn(&mut r, 3, 8);
        let mut cfg = tiny_train_config();
        cfg.pretrain_epochs = 6;
        cfg.learning_rate = 2e-2;
        let out = pretrain_frame_level(&mut encoder, &corpus, &cfg).unwrap();
        assert_eq!(out.losses.len(), 6);

        // loss should come down all but at most one step on separable data
        let drops = out
            .losses
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-9)
            .count();
        assert!(drops >= out.losses.len() - 2, "losses {:?}", out.losses);

        let windows = all_training_windows(&corpus, &cfg);
        let acc = frame_accuracy(&encoder, &out.head, &windows).unwrap();
        assert!(acc > 0.9, "frame accuracy {acc}");
    }

    #[test]
    fn zero_epochs_leave_the_encoder_unchanged() {
        let mut r = rng(38);
        let corpus = tiny_corpus(&mut r, 2, 1, 16, 3);
        let mut encoder = tiny_hornn(&mut r, 3, 6);
        let before: Vec<Vec<f64>> = encoder
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        let mut cfg = tiny_train_config();
        cfg.pretrain_epochs = 0;
        let out = pretrain_frame_level(&mut encoder, &corpus, &cfg).unwrap();
        assert!(out.losses.is_empty());
        for ((_, t), b) in encoder.named_params().iter().zip(&before) {
            assert_eq!(t.data(), b.as_slice());
        }
    }

    fn tiny_model(r: &mut ChaCha8Rng) -> CVectorModel {
        let encoders = vec![tiny_tdnn(r, 3, 8)];
        let mut cfg = CombinerConfig::defaults(Topology::Simultaneous, 1, 8);
        cfg.stage1_heads = vec![2];
        cfg.stage1_lambdas = vec![vec![1.0, 0.2]];
        cfg.attention_hidden = 4;
        cfg.bottleneck_dim = 6;
        CVectorModel::init(r, encoders, cfg).unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut r = rng(39);
        let corpus = tiny_corpus(&mut r, 2, 6, 16, 3);
        let mut model = tiny_model(&mut r);
        let before: Vec<Vec<f64>> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        let mut cfg = tiny_train_config();
        cfg.learning_rate = 0.0;
        train(&mut model, &corpus, &cfg).unwrap();
        for ((_, t), b) in model.named_params().iter().zip(&before) {
            for (x, y) in t.data().iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_same_model_bit_for_bit() {
        let mut r = rng(40);
        let corpus = tiny_corpus(&mut r, 2, 6, 16, 3);
        let cfg = tiny_train_config();

        let run = |corpus: &[LabeledSequence]| {
            let mut r = rng(41);
            let mut model = tiny_model(&mut r);
            let outcome = train(&mut model, corpus, &cfg).unwrap();
            let params: Vec<Vec<u64>> = model
                .named_params()
                .iter()
                .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
                .collect();
            (params, outcome.trace)
        };
        let (p1, t1) = run(&corpus);
        let (p2, t2) = run(&corpus);
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn single_speaker_corpus_is_rejected() {
        let mut r = rng(42);
        let corpus = tiny_corpus(&mut r, 1, 3, 16, 3);
        let mut model = tiny_model(&mut r);
        let err = train(&mut model, &corpus, &tiny_train_config()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn training_learns_a_separable_corpus() {
        let mut r = rng(43);
        let corpus = tiny_corpus(&mut r, 3, 8, 16, 3);
        let mut model = tiny_model(&mut r);
        let mut cfg = tiny_train_config();
        cfg.epochs = 8;
        cfg.learning_rate = 1e-2;
        let outcome = train(&mut model, &corpus, &cfg).unwrap();
        assert_eq!(outcome.trace.len(), 8);
        let last = outcome.trace.last().unwrap();
        assert!(
            last.val_acc >= 0.8,
            "validation accuracy {} after {:?}",
            last.val_acc,
            outcome.trace
        );
        assert!(last.train_loss < outcome.trace[0].train_loss);
    }

    /// Corpus whose frames carry a strong per-frame pattern on top of the
    /// speaker offset, so attention has something to concentrate on.
    fn frame_patterned_corpus(
        r: &mut ChaCha8Rng,
        speakers: usize,
        recordings_per_speaker: usize,
        frames: usize,
        f: usize,
    ) -> Vec<LabeledSequence> {
        let mut corpus = Vec::new();
        for s in 0..speakers {
            for _ in 0..recordings_per_speaker {
                let data: Vec<f64> = (0..frames)
                    .flat_map(|t| {
                        (0..f).map(move |dim| {
                            let sign = if (s >> (dim % 4)) & 1 == 1 { 1.0 } else { -1.0 };
                            let pattern = ((t * 3 + dim) % 8) as f64 / 4.0 - 0.875;
                            sign + pattern
                        })
                    })
                    .map(|v| v + r.random_range(-0.05..0.05))
                    .collect();
                corpus.push(
                    LabeledSequence::new(
                        Tensor::new(vec![frames, f], data).unwrap(),
                        vec![s; frames],
                    )
                    .unwrap(),
                );
            }
        }
        corpus
    }

    #[test]
    fn penalty_weight_shapes_annotation_entropy() {
        let mut r = rng(44);
        let corpus = frame_patterned_corpus(&mut r, 2, 6, 16, 3);
        let mut cfg = tiny_train_config();
        cfg.epochs = 12;
        cfg.learning_rate = 2e-2;

        let profile_with_mu = |mu: f64| {
            let mut r = rng(45);
            let encoders = vec![tiny_tdnn(&mut r, 3, 8)];
            let mut mcfg = CombinerConfig::defaults(Topology::Simultaneous, 1, 8);
            mcfg.stage1_heads = vec![2];
            mcfg.stage1_lambdas = vec![vec![1.0, 1.0]];
            mcfg.attention_hidden = 4;
            mcfg.bottleneck_dim = 6;
            mcfg.mu = mu;
            let mut model = CVectorModel::init(&mut r, encoders, mcfg).unwrap();
            train(&mut model, &corpus, &cfg).unwrap();
            let windows = all_training_windows(&corpus, &cfg);
            annotation_entropy_profile(&model, &windows).unwrap()
        };

        let relaxed = profile_with_mu(0.0);
        let pinched = profile_with_mu(10.0);
        let mean_abs_diff: f64 = relaxed
            .iter()
            .zip(&pinched)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / relaxed.len() as f64;
        assert!(
            mean_abs_diff > 0.1,
            "entropy profiles too close: {relaxed:?} vs {pinched:?}"
        );
    }

    #[test]
    fn loss_trace_serializes_as_csv() {
        let trace = vec![
            EpochStats {
                epoch: 1,
                train_loss: 1.25,
                val_acc: 0.5,
            },
            EpochStats {
                epoch: 2,
                train_loss: 0.75,
                val_acc: 0.875,
            },
        ];
        let mut buf = Vec::new();
        write_loss_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,train_loss,val_acc\n1,1.25,0.5\n2,0.75,0.875\n");
    }

    #[test]
    fn config_validation_rules() {
        TrainConfig::default().validate().unwrap();
        let mut c = TrainConfig::default();
        c.window_shift = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.window_shift = c.window_frames + 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.learning_rate = f64::NAN;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sequence_construction_checks_label_alignment() {
        let t = Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap();
        assert!(LabeledSequence::new(t.clone(), vec![0, 0]).is_err());
        assert!(LabeledSequence::new(Tensor::new(vec![3], vec![0.0; 3]).unwrap(), vec![0]).is_err());
        assert!(LabeledSequence::new(t, vec![0, 0, 1]).is_ok());
    }
}
