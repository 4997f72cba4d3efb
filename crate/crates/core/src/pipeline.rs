//! Experiment plumbing between the core algorithms and the command line:
//! system construction and training, windowed embedding extraction,
//! per-recording clustering with dev-set threshold tuning, the comparison
//! report, annotation sweeps, and the on-disk corpus and embedding layouts.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    annotation_stats, penalty_modified, write_annotation_csv, AnnotationMatrix, PenaltyConfig,
    ANNOTATION_CSV_HEADER,
};
use crate::clustering::{cluster, ClusterConfig};
use crate::combiner::{CVectorModel, Topology};
use crate::config::{ClusteringSettings, ExperimentConfig};
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::scoring::{read_rttm, ser, windows_to_segments, write_rttm, SegmentList};
use crate::synthdata::{FeatureSequence, SynthCorpus, FRAME_PERIOD_S};
use crate::tensor::{read_fmat_file, write_fmat_file, Tape, Tensor};
use crate::trainer::{
    pretrain_frame_level, train, window_spans, EpochStats, LabeledSequence, TrainConfig,
};

/// Which model family a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// Single TDNN encoder under one attention layer (a d-vector).
    Tdnn,
    /// Single HORNN encoder under one attention layer (a d-vector).
    Hornn,
    /// Both encoders merged by the given topology (a c-vector).
    Cvector(Topology),
}

impl SystemKind {
    /// Parse `tdnn`, `hornn`, or `cvector:<topology>`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tdnn" => Ok(SystemKind::Tdnn),
            "hornn" => Ok(SystemKind::Hornn),
            _ => match name.strip_prefix("cvector:") {
                Some(t) => Ok(SystemKind::Cvector(Topology::parse(t)?)),
                None => Err(Error::Config(format!(
                    "unknown system {name:?}; expected tdnn, hornn, or cvector:<topology>"
                ))),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            SystemKind::Tdnn => "tdnn".into(),
            SystemKind::Hornn => "hornn".into(),
            SystemKind::Cvector(t) => format!("cvector:{}", t.name()),
        }
    }

    /// `name()` with the separator made filesystem-safe.
    pub fn file_stem(&self) -> String {
        self.name().replace(':', "_")
    }

    /// Merge topology and number of encoder systems.
    pub fn layout(&self) -> (Topology, usize) {
        match self {
            SystemKind::Tdnn | SystemKind::Hornn => (Topology::Simultaneous, 1),
            SystemKind::Cvector(t) => (*t, 2),
        }
    }

    fn build_encoders(&self, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Encoder>> {
        let f = cfg.corpus.feature_dim;
        let enc = &cfg.encoders;
        Ok(match self {
            SystemKind::Tdnn => vec![Encoder::init_tdnn(rng, enc.tdnn_config(f))?],
            SystemKind::Hornn => vec![Encoder::init_hornn(rng, enc.hornn_config(f))?],
            SystemKind::Cvector(_) => vec![
                Encoder::init_tdnn(rng, enc.tdnn_config(f))?,
                Encoder::init_hornn(rng, enc.hornn_config(f))?,
            ],
        })
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// A trained model together with its loss history.
pub struct TrainedSystem {
    pub kind: SystemKind,
    pub model: CVectorModel,
    /// Frame-level pretraining loss per epoch, one curve per encoder.
    pub pretrain_losses: Vec<Vec<f64>>,
    /// Joint training trace.
    pub trace: Vec<EpochStats>,
}

/// Build and train one system: each encoder is pretrained on frame-level
/// speaker classification, then the assembled model is trained jointly.
/// Deterministic for a given config.
pub fn train_system(
    kind: SystemKind,
    train_set: &[LabeledSequence],
    cfg: &ExperimentConfig,
) -> Result<TrainedSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let mut encoders = kind.build_encoders(cfg, &mut rng)?;
    let mut pretrain_losses = Vec::with_capacity(encoders.len());
    for encoder in &mut encoders {
        let outcome = pretrain_frame_level(encoder, train_set, &cfg.training)?;
        pretrain_losses.push(outcome.losses);
    }

    let (topology, k) = kind.layout();
    let n = encoders[0].output_dim();
    let combiner = cfg.combiner.build(topology, k, n)?;
    let mut model = CVectorModel::init(&mut rng, encoders, combiner)?;
    let outcome = train(&mut model, train_set, &cfg.training)?;
    Ok(TrainedSystem {
        kind,
        model,
        pretrain_losses,
        trace: outcome.trace,
    })
}

/// Sliding-window embeddings of one recording. Row `i` of `embeddings` is
/// the embedding of the window spanning `windows[i]` seconds.
#[derive(Debug, Clone)]
pub struct RecordingEmbeddings {
    pub recording_id: String,
    pub windows: Vec<(f64, f64)>,
    pub embeddings: Tensor,
}

/// Embed every recording with the training window layout. Recordings are
/// processed in parallel; output order matches input order.
pub fn extract_embeddings(
    model: &CVectorModel,
    recordings: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<Vec<RecordingEmbeddings>> {
    cfg.validate()?;
    recordings
        .par_iter()
        .map(|seq| extract_recording(model, seq, cfg))
        .collect()
}

/// Cut every recording into raw feature windows using the training layout,
/// concatenated in recording order. Used by annotation analysis, which needs
/// model inputs rather than embeddings.
pub fn feature_windows(
    recordings: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for seq in recordings {
        let spans = window_spans(seq.frames(), cfg.window_frames, cfg.window_shift);
        if spans.is_empty() {
            return Err(Error::Data(format!(
                "recording {} has {} frames, shorter than one {}-frame window",
                seq.recording_id,
                seq.frames(),
                cfg.window_frames
            )));
        }
        let f = seq.features.shape()[1];
        for &(start, end) in &spans {
            let data = seq.features.data()[start * f..end * f].to_vec();
            out.push(Tensor::new(vec![end - start, f], data)?);
        }
    }
    Ok(out)
}

fn extract_recording(
    model: &CVectorModel,
    seq: &FeatureSequence,
    cfg: &TrainConfig,
) -> Result<RecordingEmbeddings> {
    let spans = window_spans(seq.frames(), cfg.window_frames, cfg.window_shift);
    if spans.is_empty() {
        return Err(Error::Data(format!(
            "recording {} has {} frames, shorter than one {}-frame window",
            seq.recording_id,
            seq.frames(),
            cfg.window_frames
        )));
    }
    let f = seq.features.shape()[1];
    let d = model.embedding_dim();
    let mut rows = Vec::with_capacity(spans.len() * d);
    let mut windows = Vec::with_capacity(spans.len());
    for &(start, end) in &spans {
        let data = seq.features.data()[start * f..end * f].to_vec();
        let window = Tensor::new(vec![end - start, f], data)?;
        let emb = model.embed_window(&window)?;
        rows.extend_from_slice(emb.cvector.values());
        windows.push((
            start as f64 * FRAME_PERIOD_S,
            end as f64 * FRAME_PERIOD_S,
        ));
    }
    Ok(RecordingEmbeddings {
        recording_id: seq.recording_id.clone(),
        windows,
        embeddings: Tensor::new(vec![spans.len(), d], rows)?,
    })
}

/// Clustering settings expanded to a full [`ClusterConfig`].
pub fn base_cluster_config(settings: &ClusteringSettings) -> ClusterConfig {
    ClusterConfig {
        threshold_p: settings.default_threshold,
        k_max: settings.k_max,
        kmeans_restarts: settings.kmeans_restarts,
        kmeans_iters: settings.kmeans_iters,
        ..ClusterConfig::default()
    }
}

/// Cluster each recording independently and convert the window labels to
/// a hypothesis segment list. Recordings run in parallel; the output
/// keeps input order. Cluster labels become speakers `spk0`, `spk1`, ...
/// scoped to their recording.
pub fn cluster_recordings(
    embedded: &[RecordingEmbeddings],
    cfg: &ClusterConfig,
) -> Result<SegmentList> {
    let per_recording: Vec<SegmentList> = embedded
        .par_iter()
        .map(|rec| {
            let result = cluster(&rec.embeddings, cfg)?;
            let labels: Vec<String> =
                result.labels.iter().map(|l| format!("spk{l}")).collect();
            windows_to_segments(&rec.recording_id, &rec.windows, &labels)
        })
        .collect::<Result<_>>()?;
    let mut hypothesis = SegmentList::default();
    for list in per_recording {
        hypothesis.extend(list);
    }
    Ok(hypothesis)
}

/// Result of a dev-set threshold search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdTuning {
    pub chosen: f64,
    /// `(threshold, ser_percent)` per grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Grid-search the suppression threshold against reference SER. Ties
/// resolve to the smaller threshold.
pub fn tune_threshold(
    embedded: &[RecordingEmbeddings],
    reference: &SegmentList,
    base: &ClusterConfig,
    grid: &[f64],
    collar_s: f64,
) -> Result<ThresholdTuning> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid must not be empty".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &p in grid {
        let cfg = ClusterConfig {
            threshold_p: p,
            ..base.clone()
        };
        let hypothesis = cluster_recordings(embedded, &cfg)?;
        let report = ser(reference, &hypothesis, collar_s)?;
        curve.push((p, report.ser_percent));
    }
    let (mut chosen, mut best) = curve[0];
    for &(p, s) in &curve[1..] {
        if s < best || (s == best && p < chosen) {
            best = s;
            chosen = p;
        }
    }
    Ok(ThresholdTuning { chosen, curve })
}

/// One line of the comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemRow {
    pub system: String,
    pub param_count: usize,
    pub chosen_threshold: f64,
    pub dev_ser: f64,
    pub eval_ser: f64,
}

/// Dev and eval SER of every trained system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<SystemRow>,
}

impl ExperimentReport {
    pub fn text_table(&self) -> String {
        render_table(
            &self
                .rows
                .iter()
                .map(|r| {
                    (
                        r.system.clone(),
                        r.param_count.to_string(),
                        format!("{:.2}", r.dev_ser),
                        format!("{:.2}", r.eval_ser),
                        format!("{:.2}", r.chosen_threshold),
                    )
                })
                .collect::<Vec<_>>(),
        )
    }
}

/// Render five-column comparison rows (system, params, dev SER, eval SER,
/// threshold) under the standard header.
pub fn render_table(rows: &[(String, String, String, String, String)]) -> String {
    let header = (
        "System".to_string(),
        "#Params".to_string(),
        "Dev SER%".to_string(),
        "Eval SER%".to_string(),
        "Threshold".to_string(),
    );
    let all: Vec<&(String, String, String, String, String)> =
        std::iter::once(&header).chain(rows.iter()).collect();
    let width = |f: fn(&(String, String, String, String, String)) -> &String| {
        all.iter().map(|r| f(r).len()).max().unwrap_or(0)
    };
    let widths = [
        width(|r| &r.0),
        width(|r| &r.1),
        width(|r| &r.2),
        width(|r| &r.3),
        width(|r| &r.4),
    ];
    let mut out = String::new();
    for (i, row) in all.iter().enumerate() {
        let cells = [&row.0, &row.1, &row.2, &row.3, &row.4];
        let line: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Train every requested system on the corpus, tune its clustering
/// threshold on dev, and score dev and eval at the chosen threshold.
pub fn run_experiment(
    corpus: &SynthCorpus,
    cfg: &ExperimentConfig,
    systems: &[SystemKind],
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let train_set: Vec<LabeledSequence> = corpus
        .train
        .iter()
        .map(|s| s.labeled_sequence())
        .collect::<Result<_>>()?;
    let base = base_cluster_config(&cfg.clustering);

    let mut rows = Vec::with_capacity(systems.len());
    for &kind in systems {
        let trained = train_system(kind, &train_set, cfg)?;
        let dev = extract_embeddings(&trained.model, &corpus.dev, &cfg.training)?;
        let eval = extract_embeddings(&trained.model, &corpus.eval, &cfg.training)?;

        let tuning = tune_threshold(
            &dev,
            &corpus.dev_reference,
            &base,
            &cfg.clustering.threshold_grid,
            cfg.collar_s,
        )?;
        let dev_ser = tuning
            .curve
            .iter()
            .find(|(p, _)| *p == tuning.chosen)
            .map(|(_, s)| *s)
            .expect("chosen threshold comes from the curve");

        let tuned = ClusterConfig {
            threshold_p: tuning.chosen,
            ..base.clone()
        };
        let eval_hypothesis = cluster_recordings(&eval, &tuned)?;
        let eval_report = ser(&corpus.eval_reference, &eval_hypothesis, cfg.collar_s)?;

        rows.push(SystemRow {
            system: kind.name(),
            param_count: trained.model.param_count(),
            chosen_threshold: tuning.chosen,
            dev_ser,
            eval_ser: eval_report.ser_percent,
        });
    }
    Ok(ExperimentReport { rows })
}

pub const SWEEP_CSV_HEADER: &str = "lambda,head,mean_entropy,mean_max_weight";

/// Mean annotation concentration of one first-stage head across windows,
/// labeled with the head's diagonal target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub head: usize,
    pub mean_entropy: f64,
    pub mean_max_weight: f64,
}

/// Per-head mean entropy and max weight of the model's first attention
/// layer over the given windows.
pub fn annotation_sweep_rows(
    model: &CVectorModel,
    windows: &[Tensor],
) -> Result<Vec<SweepRow>> {
    if windows.is_empty() {
        return Err(Error::Data("no windows to sweep".into()));
    }
    let lambdas = model.config().stage1_lambdas[0].clone();
    let h = lambdas.len();
    let mut entropy = vec![0.0; h];
    let mut max_weight = vec![0.0; h];
    for window in windows {
        let emb = model.embed_window(window)?;
        for (j, stats) in annotation_stats(&emb.stage1_annotations[0]).iter().enumerate() {
            entropy[j] += stats.entropy;
            max_weight[j] += stats.max_weight;
        }
    }
    let count = windows.len() as f64;
    Ok((0..h)
        .map(|j| SweepRow {
            lambda: lambdas[j],
            head: j,
            mean_entropy: entropy[j] / count,
            mean_max_weight: max_weight[j] / count,
        })
        .collect())
}

pub fn write_sweep_csv(out: &mut impl Write, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.lambda, r.head, r.mean_entropy, r.mean_max_weight
        )?;
    }
    Ok(())
}

/// The penalty `μ‖AᵀA − λI‖²_F` of one fixed annotation matrix as a
/// function of a shared diagonal target λ.
pub fn penalty_curve(
    annotation: &AnnotationMatrix,
    mu: f64,
    lambdas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    lambdas
        .iter()
        .map(|&l| {
            let cfg = PenaltyConfig::new(mu, vec![l; annotation.heads()])?;
            let mut tape = Tape::new();
            let a = tape.constant(annotation.tensor());
            let p = penalty_modified(&mut tape, a, &cfg)?;
            Ok((l, tape.scalar_value(p)))
        })
        .collect()
}

/// Dump the first-stage annotations of every window as CSV rows of
/// `window_id,head,frame,weight`.
pub fn write_annotation_dump(
    out: &mut impl Write,
    model: &CVectorModel,
    windows: &[Tensor],
) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("annotation dump", e);
    writeln!(out, "{ANNOTATION_CSV_HEADER}").map_err(io_err)?;
    for (i, window) in windows.iter().enumerate() {
        let emb = model.embed_window(window)?;
        write_annotation_csv(out, i, &emb.stage1_annotations[0]).map_err(io_err)?;
    }
    Ok(())
}

const CORPUS_MANIFEST_VERSION: u32 = 1;
pub const CORPUS_MANIFEST: &str = "manifest.json";
const LABELS_CSV_HEADER: &str = "frame,speaker_id,speaker";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusManifest {
    version: u32,
    feature_dim: usize,
    frame_period_s: f64,
    train_speakers: usize,
    train: Vec<CorpusEntry>,
    dev: Vec<CorpusEntry>,
    eval: Vec<CorpusEntry>,
    references: ReferenceFiles,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusEntry {
    id: String,
    features: String,
    labels: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFiles {
    train: String,
    dev: String,
    eval: String,
}

/// A corpus read back from disk: the generated recordings without the
/// speaker geometry that produced them.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub train: Vec<FeatureSequence>,
    pub dev: Vec<FeatureSequence>,
    pub eval: Vec<FeatureSequence>,
    pub train_reference: SegmentList,
    pub dev_reference: SegmentList,
    pub eval_reference: SegmentList,
    pub feature_dim: usize,
    pub train_speakers: usize,
}

/// Write a corpus as one flat directory: per-recording feature FMAT and
/// frame-label CSV files, one reference RTTM per split, and a manifest.
pub fn write_corpus_dir(dir: &Path, corpus: &SynthCorpus) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let feature_dim = corpus
        .speaker_means
        .first()
        .map(|m| m.len())
        .ok_or_else(|| Error::Data("corpus has no speakers".into()))?;

    let mut manifest = CorpusManifest {
        version: CORPUS_MANIFEST_VERSION,
        feature_dim,
        frame_period_s: FRAME_PERIOD_S,
        train_speakers: corpus.train_speakers,
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
        references: ReferenceFiles {
            train: "train.rttm".into(),
            dev: "dev.rttm".into(),
            eval: "eval.rttm".into(),
        },
    };

    for (sequences, entries) in [
        (&corpus.train, &mut manifest.train),
        (&corpus.dev, &mut manifest.dev),
        (&corpus.eval, &mut manifest.eval),
    ] {
        for seq in sequences.iter() {
            let features = format!("{}.fmat", seq.recording_id);
            let labels = format!("{}.labels.csv", seq.recording_id);
            write_fmat_file(&dir.join(&features), &seq.features)?;
            let mut csv = String::from(LABELS_CSV_HEADER);
            csv.push('\n');
            for (frame, &speaker) in seq.labels.iter().enumerate() {
                csv.push_str(&format!("{frame},{speaker},spk{speaker:03}\n"));
            }
            let labels_path = dir.join(&labels);
            std::fs::write(&labels_path, csv)
                .map_err(|e| Error::io(labels_path.display().to_string(), e))?;
            entries.push(CorpusEntry {
                id: seq.recording_id.clone(),
                features,
                labels,
            });
        }
    }

    write_rttm(&corpus.train_reference, &dir.join("train.rttm"))?;
    write_rttm(&corpus.dev_reference, &dir.join("dev.rttm"))?;
    write_rttm(&corpus.eval_reference, &dir.join("eval.rttm"))?;

    let manifest_path = dir.join(CORPUS_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))
}

/// Read a corpus directory written by [`write_corpus_dir`].
pub fn read_corpus_dir(dir: &Path) -> Result<LoadedCorpus> {
    let manifest_path = dir.join(CORPUS_MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.version != CORPUS_MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "corpus manifest version {} is not supported (expected {CORPUS_MANIFEST_VERSION})",
            manifest.version
        )));
    }

    let load_split = |entries: &[CorpusEntry]| -> Result<Vec<FeatureSequence>> {
        entries
            .iter()
            .map(|entry| {
                let features = read_fmat_file(&dir.join(&entry.features))?;
                if features.shape().len() != 2 || features.shape()[1] != manifest.feature_dim {
                    return Err(Error::Data(format!(
                        "recording {}: feature file has shape {:?}, manifest says {} dims",
                        entry.id,
                        features.shape(),
                        manifest.feature_dim
                    )));
                }
                let labels = read_labels_csv(&dir.join(&entry.labels))?;
                if labels.len() != features.shape()[0] {
                    return Err(Error::Data(format!(
                        "recording {}: {} feature frames but {} frame labels",
                        entry.id,
                        features.shape()[0],
                        labels.len()
                    )));
                }
                Ok(FeatureSequence {
                    recording_id: entry.id.clone(),
                    features,
                    labels,
                })
            })
            .collect()
    };

    Ok(LoadedCorpus {
        train: load_split(&manifest.train)?,
        dev: load_split(&manifest.dev)?,
        eval: load_split(&manifest.eval)?,
        train_reference: read_rttm(&dir.join(&manifest.references.train))?,
        dev_reference: read_rttm(&dir.join(&manifest.references.dev))?,
        eval_reference: read_rttm(&dir.join(&manifest.references.eval))?,
        feature_dim: manifest.feature_dim,
        train_speakers: manifest.train_speakers,
    })
}

fn read_labels_csv(path: &Path) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == LABELS_CSV_HEADER => {}
        other => {
            return Err(parse_err(
                1,
                format!(
                    "expected header {LABELS_CSV_HEADER:?}, got {:?}",
                    other.map(|(_, l)| l).unwrap_or("")
                ),
            ))
        }
    }
    let mut labels = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(idx + 1, format!("expected 3 fields, got {}", fields.len())));
        }
        let speaker: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(idx + 1, format!("bad speaker id {:?}", fields[1])))?;
        labels.push(speaker);
    }
    Ok(labels)
}

const EMBEDDINGS_MANIFEST_VERSION: u32 = 1;
pub const EMBEDDINGS_MANIFEST: &str = "windows.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingsManifest {
    version: u32,
    system: String,
    recordings: Vec<EmbeddingsEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingsEntry {
    id: String,
    fmat: String,
    windows: Vec<(f64, f64)>,
}

/// Write extracted embeddings as one FMAT per recording plus a manifest
/// holding each window's time extent.
pub fn write_embeddings_dir(
    dir: &Path,
    system: &str,
    embedded: &[RecordingEmbeddings],
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut ids = BTreeSet::new();
    let mut manifest = EmbeddingsManifest {
        version: EMBEDDINGS_MANIFEST_VERSION,
        system: system.to_string(),
        recordings: Vec::with_capacity(embedded.len()),
    };
    for rec in embedded {
        if !ids.insert(&rec.recording_id) {
            return Err(Error::Data(format!(
                "duplicate recording id {}",
                rec.recording_id
            )));
        }
        let fmat = format!("{}.emb.fmat", rec.recording_id);
        write_fmat_file(&dir.join(&fmat), &rec.embeddings)?;
        manifest.recordings.push(EmbeddingsEntry {
            id: rec.recording_id.clone(),
            fmat,
            windows: rec.windows.clone(),
        });
    }
    let path = dir.join(EMBEDDINGS_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read an embeddings directory written by [`write_embeddings_dir`],
/// returning the system name and the per-recording embeddings.
pub fn read_embeddings_dir(dir: &Path) -> Result<(String, Vec<RecordingEmbeddings>)> {
    let path = dir.join(EMBEDDINGS_MANIFEST);
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: EmbeddingsManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.version != EMBEDDINGS_MANIFEST_VERSION {
        return Err(Error::Data(format!(
            "embeddings manifest version {} is not supported (expected {EMBEDDINGS_MANIFEST_VERSION})",
            manifest.version
        )));
    }
    let mut out = Vec::with_capacity(manifest.recordings.len());
    for entry in manifest.recordings {
        let embeddings = read_fmat_file(&dir.join(&entry.fmat))?;
        if embeddings.shape().len() != 2 || embeddings.shape()[0] != entry.windows.len() {
            return Err(Error::Data(format!(
                "recording {}: {} windows in the manifest but embedding shape {:?}",
                entry.id,
                entry.windows.len(),
                embeddings.shape()
            )));
        }
        out.push(RecordingEmbeddings {
            recording_id: entry.id,
            windows: entry.windows,
            embeddings,
        });
    }
    Ok((manifest.system, out))
}
