//! Deterministic synthetic multi-speaker corpus generator.
//!
//! Speakers are directions on the unit feature sphere, kept apart by a
//! minimum pairwise angle. Frames around a speaker's mean carry AR(1)
//! noise, so consecutive frames are correlated and differ in how far they
//! stray from the mean. Each recording is a sequence of speaker turns;
//! turn boundaries double as the reference diarisation.
//!
//! Recordings fall into three sets: train, dev (same speaker pool as
//! train, for threshold tuning), and eval (speakers never seen in
//! training).

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{Segment, SegmentList};
use crate::tensor::Tensor;
use crate::trainer::LabeledSequence;

/// Seconds per feature frame.
pub const FRAME_PERIOD_S: f64 = 0.01;

const MEAN_REJECTION_ATTEMPTS: usize = 20_000;

/// Corpus shape and noise parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_speakers: usize,
    /// Speakers reserved for the eval set, disjoint from training.
    pub eval_speakers: usize,
    pub feature_dim: usize,
    /// Minimum pairwise angle between speaker means, degrees.
    pub min_angle_degrees: f64,
    /// Inclusive range of speaker-turn lengths, frames.
    pub turn_frames: (usize, usize),
    pub turns_per_recording: usize,
    pub speakers_per_recording: usize,
    pub train_recordings: usize,
    pub dev_recordings: usize,
    pub eval_recordings: usize,
    /// Within-speaker noise scale.
    pub sigma: f64,
    /// AR(1) smoothing coefficient in `[0, 1)`.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_speakers: 20,
            eval_speakers: 4,
            feature_dim: 16,
            min_angle_degrees: 60.0,
            turn_frames: (250, 450),
            turns_per_recording: 8,
            speakers_per_recording: 4,
            train_recordings: 20,
            dev_recordings: 4,
            eval_recordings: 4,
            sigma: 0.05,
            rho: 0.9,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_speakers < 2 {
            return Err(Error::Config(format!(
                "need at least 2 training speakers, got {}",
                self.train_speakers
            )));
        }
        if self.eval_recordings > 0 && self.eval_speakers == 0 {
            return Err(Error::Config(
                "eval recordings requested but no eval speakers configured".into(),
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config(format!(
                "feature dimension must be at least 2, got {}",
                self.feature_dim
            )));
        }
        if !(0.0..180.0).contains(&self.min_angle_degrees) {
            return Err(Error::Config(format!(
                "minimum speaker angle must lie in [0, 180) degrees, got {}",
                self.min_angle_degrees
            )));
        }
        let (lo, hi) = self.turn_frames;
        if lo == 0 || hi < lo {
            return Err(Error::Config(format!(
                "turn length range must satisfy 1 <= lo <= hi, got {lo}..={hi}"
            )));
        }
        if self.turns_per_recording == 0 {
            return Err(Error::Config("recordings need at least one turn".into()));
        }
        if self.speakers_per_recording < 2 {
            return Err(Error::Config(
                "recordings need at least 2 speakers for diarisation to be meaningful".into(),
            ));
        }
        if self.turns_per_recording < self.speakers_per_recording {
            return Err(Error::Config(format!(
                "{} turns cannot give each of {} cast speakers a turn",
                self.turns_per_recording, self.speakers_per_recording
            )));
        }
        if self.speakers_per_recording > self.train_speakers {
            return Err(Error::Config(format!(
                "{} speakers per recording exceeds the {}-speaker training pool",
                self.speakers_per_recording, self.train_speakers
            )));
        }
        if self.train_recordings > 0
            && self.train_recordings * self.speakers_per_recording < self.train_speakers
        {
            return Err(Error::Config(format!(
                "{} training recordings with {} speakers each cannot cover all {} \
                 training speakers",
                self.train_recordings, self.speakers_per_recording, self.train_speakers
            )));
        }
        if self.eval_recordings > 0 && self.speakers_per_recording > self.eval_speakers {
            return Err(Error::Config(format!(
                "{} speakers per recording exceeds the {}-speaker eval pool",
                self.speakers_per_recording, self.eval_speakers
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!(
                "noise scale must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!(
                "smoothing coefficient must lie in [0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

/// One synthetic recording: features, per-frame speaker ids, and a name.
/// Labels index the corpus speaker table.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub recording_id: String,
    /// Frames as rows, `T×f`.
    pub features: Tensor,
    /// Per-frame speaker id, one per row of `features`.
    pub labels: Vec<usize>,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    /// View as trainer input.
    pub fn labeled_sequence(&self) -> Result<LabeledSequence> {
        LabeledSequence::new(self.features.clone(), self.labels.clone())
    }
}

/// Generated corpus: three recording sets, their reference diarisations,
/// and the speaker geometry behind them.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<FeatureSequence>,
    pub dev: Vec<FeatureSequence>,
    pub eval: Vec<FeatureSequence>,
    pub train_reference: SegmentList,
    pub dev_reference: SegmentList,
    pub eval_reference: SegmentList,
    /// Unit-norm speaker means; training speakers first, then eval.
    pub speaker_means: Vec<Vec<f64>>,
    pub train_speakers: usize,
}

impl SynthCorpus {
    pub fn speaker_name(&self, id: usize) -> String {
        format!("spk{id:03}")
    }
}

/// Generate a corpus. The same config always yields the same corpus.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let total_speakers = cfg.train_speakers + cfg.eval_speakers;
    let speaker_means = draw_speaker_means(
        total_speakers,
        cfg.feature_dim,
        cfg.min_angle_degrees,
        &mut rng,
    )?;

    let train_pool: Vec<usize> = (0..cfg.train_speakers).collect();
    let eval_pool: Vec<usize> = (cfg.train_speakers..total_speakers).collect();

    let mut corpus = SynthCorpus {
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
        train_reference: SegmentList::default(),
        dev_reference: SegmentList::default(),
        eval_reference: SegmentList::default(),
        speaker_means,
        train_speakers: cfg.train_speakers,
    };

    for (set, pool, count) in [
        ("train", &train_pool, cfg.train_recordings),
        ("dev", &train_pool, cfg.dev_recordings),
        ("eval", &eval_pool, cfg.eval_recordings),
    ] {
        let casts = if set == "train" {
            train_casts(pool, cfg.speakers_per_recording, count, &mut rng)
        } else {
            (0..count)
                .map(|_| random_cast(pool, cfg.speakers_per_recording, &mut rng))
                .collect()
        };
        for (idx, cast) in casts.iter().enumerate() {
            let recording_id = format!("{set}{idx:02}");
            let (sequence, reference) =
                generate_recording(cfg, &corpus.speaker_means, cast, &recording_id, &mut rng)?;
            let (seqs, refs) = match set {
                "train" => (&mut corpus.train, &mut corpus.train_reference),
                "dev" => (&mut corpus.dev, &mut corpus.dev_reference),
                _ => (&mut corpus.eval, &mut corpus.eval_reference),
            };
            seqs.push(sequence);
            refs.extend(reference);
        }
    }
    Ok(corpus)
}

/// Unit vectors with pairwise angle at least `min_angle_degrees`, by
/// rejection sampling.
fn draw_speaker_means(
    count: usize,
    dim: usize,
    min_angle_degrees: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal is well-formed");
    let max_cos = (min_angle_degrees.to_radians()).cos();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while means.len() < count {
        attempts += 1;
        if attempts > MEAN_REJECTION_ATTEMPTS {
            return Err(Error::Config(format!(
                "could not place {count} speakers at pairwise angle >= {min_angle_degrees}° \
                 in {dim} dimensions after {MEAN_REJECTION_ATTEMPTS} attempts"
            )));
        }
        let raw: Vec<f64> = (0..dim).map(|_| unit_normal.sample(rng)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let candidate: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let too_close = means.iter().any(|m| {
            let cos: f64 = m.iter().zip(&candidate).map(|(a, b)| a * b).sum();
            cos > max_cos
        });
        if !too_close {
            means.push(candidate);
        }
    }
    Ok(means)
}

fn random_cast(pool: &[usize], per_recording: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, pool.len(), per_recording)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Casts for the training recordings. The earliest recordings walk a
/// shuffled copy of the pool so every training speaker appears somewhere;
/// once the walk is exhausted, casting is free. The trainer rejects a
/// corpus whose label set has gaps, so coverage must hold by construction.
fn train_casts(
    pool: &[usize],
    per_recording: usize,
    recordings: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order = pool.to_vec();
    order.shuffle(rng);
    let mut casts = Vec::with_capacity(recordings);
    let mut cursor = 0usize;
    for _ in 0..recordings {
        if cursor >= order.len() {
            casts.push(random_cast(pool, per_recording, rng));
            continue;
        }
        let take = per_recording.min(order.len() - cursor);
        let mut cast = order[cursor..cursor + take].to_vec();
        cursor += take;
        if cast.len() < per_recording {
            let others: Vec<usize> = pool
                .iter()
                .copied()
                .filter(|s| !cast.contains(s))
                .collect();
            cast.extend(
                sample(rng, others.len(), per_recording - cast.len())
                    .into_iter()
                    .map(|i| others[i]),
            );
        }
        casts.push(cast);
    }
    casts
}

fn generate_recording(
    cfg: &SynthConfig,
    means: &[Vec<f64>],
    cast: &[usize],
    recording_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(FeatureSequence, SegmentList)> {
    let noise = Normal::new(0.0, cfg.sigma)
        .map_err(|e| Error::Config(format!("invalid noise scale {}: {e}", cfg.sigma)))?;
    let innovation_scale = (1.0 - cfg.rho * cfg.rho).sqrt();

    // the opening turns walk a shuffled cast so everyone speaks at least
    // once; later turns pick anyone except the previous speaker
    let mut slot_order: Vec<usize> = (0..cast.len()).collect();
    slot_order.shuffle(rng);
    while slot_order.len() < cfg.turns_per_recording {
        let prev = *slot_order.last().expect("cast is non-empty");
        let pick = rng.random_range(0..cast.len() - 1);
        slot_order.push(if pick >= prev { pick + 1 } else { pick });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut reference = SegmentList::default();
    let mut epsilon = vec![0.0; cfg.feature_dim];
    let mut frame = 0usize;

    for turn in 0..cfg.turns_per_recording {
        let speaker = cast[slot_order[turn]];
        let length = rng.random_range(cfg.turn_frames.0..=cfg.turn_frames.1);

        for t in 0..length {
            for e in epsilon.iter_mut() {
                let eta = noise.sample(rng);
                *e = if frame == 0 && t == 0 && turn == 0 {
                    eta
                } else {
                    cfg.rho * *e + innovation_scale * eta
                };
            }
            let raw: Vec<f64> = means[speaker]
                .iter()
                .zip(&epsilon)
                .map(|(m, e)| m + e)
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::Numeric(format!(
                    "frame {frame} of {recording_id} collapsed to the origin"
                )));
            }
            features.extend(raw.iter().map(|v| v / norm));
            labels.push(speaker);
            frame += 1;
        }

        let start_ms = (frame - length) as i64 * 10;
        let end_ms = frame as i64 * 10;
        reference.push(Segment::from_ms(
            recording_id,
            start_ms,
            end_ms,
            &format!("spk{speaker:03}"),
        )?);
    }

    let sequence = FeatureSequence {
        recording_id: recording_id.to_string(),
        features: Tensor::new(vec![frame, cfg.feature_dim], features)?,
        labels,
    };
    Ok((sequence, reference))
}
