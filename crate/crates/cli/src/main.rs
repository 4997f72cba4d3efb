//! `cvector`: one executable for the whole diarisation pipeline.
//!
//! Subcommands chain through the filesystem: `synth` writes a corpus
//! directory, `train` turns it into a checkpoint, `extract` turns a
//! checkpoint plus a corpus split into an embeddings directory, `cluster`
//! turns embeddings into a hypothesis RTTM, `score` compares RTTM files,
//! and `report` gathers the per-system artifacts of a run directory into
//! one comparison table. `sweep-lambda` dumps annotation statistics for a
//! family of checkpoints trained at different diagonal targets.
//!
//! Every command is deterministic given its inputs: reruns produce
//! byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cvector_core::checkpoint::{load_checkpoint, save_checkpoint};
use cvector_core::combiner::CVectorModel;
use cvector_core::config::ExperimentConfig;
use cvector_core::pipeline::{
    annotation_sweep_rows, base_cluster_config, cluster_recordings, extract_embeddings,
    feature_windows, penalty_curve, read_corpus_dir, read_embeddings_dir, render_table,
    train_system, tune_threshold, write_annotation_dump, write_corpus_dir,
    write_embeddings_dir, write_sweep_csv, LoadedCorpus, SystemKind, ThresholdTuning,
};
use cvector_core::scoring::{read_rttm, ser, write_rttm, SegmentList, SerReport};
use cvector_core::synthdata::{generate_corpus, FeatureSequence};
use cvector_core::trainer::write_loss_trace;
use cvector_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "cvector",
    version,
    about = "Speaker diarisation with attentive embedding combination"
)]
struct Cli {
    /// Worker threads for per-recording extraction and clustering
    /// (default: one per CPU).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic diarisation corpus directory.
    Synth(SynthArgs),
    /// Train one system on a corpus and write its checkpoint.
    Train(TrainArgs),
    /// Embed the sliding windows of a corpus split with a trained model.
    Extract(ExtractArgs),
    /// Cluster embeddings into a hypothesis RTTM.
    Cluster(ClusterArgs),
    /// Score a hypothesis RTTM against a reference RTTM.
    Score(ScoreArgs),
    /// Dump annotation statistics for checkpoints trained at different
    /// diagonal targets.
    SweepLambda(SweepArgs),
    /// Aggregate the per-system artifacts of a run directory into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Experiment config JSON.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Corpus directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Corpus directory from `synth`.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// System to train: tdnn, hornn, or cvector:<topology> where topology
    /// is simultaneous, consec1, consec2, or consec_fc.
    #[arg(long, value_name = "NAME")]
    system: String,
    /// Directory for the checkpoint and its training traces.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Checkpoint from `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Corpus directory from `synth`.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Corpus split to embed: train, dev, or eval.
    #[arg(long, value_name = "SPLIT", default_value = "eval")]
    split: String,
    /// Embeddings directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Embeddings directory from `extract`.
    #[arg(long, value_name = "DIR")]
    embeddings: PathBuf,
    /// Hypothesis RTTM to write. In tune mode the chosen threshold and the
    /// search curve land next to it as a `.tune.json` sidecar.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Experiment config JSON for clustering settings (defaults apply
    /// without it).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Frozen suppression threshold to apply.
    #[arg(long, value_name = "P", conflicts_with = "tune")]
    threshold: Option<f64>,
    /// Grid-search the threshold against a reference split instead of
    /// applying a frozen one.
    #[arg(long, requires = "corpus")]
    tune: bool,
    /// Corpus directory holding the reference for tune mode.
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Reference split for tune mode.
    #[arg(long, value_name = "SPLIT", default_value = "dev")]
    split: String,
    /// Fixed cluster count, skipping the eigengap estimate.
    #[arg(long, value_name = "K")]
    k_override: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Reference RTTM.
    #[arg(long, value_name = "FILE")]
    reference: PathBuf,
    /// Hypothesis RTTM.
    #[arg(long, value_name = "FILE")]
    hypothesis: PathBuf,
    /// Collar in seconds excluded around reference boundaries.
    #[arg(long, value_name = "SECONDS", default_value_t = 0.25)]
    collar: f64,
    /// Write the full report JSON here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Checkpoint to include; repeat once per model of the family.
    #[arg(long = "checkpoint", value_name = "FILE", required = true)]
    checkpoints: Vec<PathBuf>,
    /// Corpus directory supplying the evaluation windows.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Corpus split to evaluate on.
    #[arg(long, value_name = "SPLIT", default_value = "eval")]
    split: String,
    /// Comma-separated diagonal targets for the analytic penalty curve
    /// (default: 0.05 to 1.0 in steps of 0.05).
    #[arg(long, value_name = "LIST")]
    lambdas: Option<String>,
    /// Directory for sweep.csv, penalty_curve.csv, and the annotation dumps.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding per-system checkpoints, tuning sidecars, and
    /// score reports.
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    /// Report JSON path (default: report.json inside the run directory).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = configure_jobs(jobs) {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    })
}

fn configure_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Score(args) => cmd_score(args),
        Command::SweepLambda(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    if dir_is_nonempty(&args.out)? {
        if !args.force {
            return Err(Error::Data(format!(
                "output directory {} is not empty; pass --force to replace it",
                args.out.display()
            )));
        }
        fs::remove_dir_all(&args.out)
            .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    }
    let corpus = generate_corpus(&cfg.corpus)?;
    write_corpus_dir(&args.out, &corpus)?;
    println!(
        "wrote corpus {} ({} train, {} dev, {} eval recordings; {} training speakers)",
        args.out.display(),
        corpus.train.len(),
        corpus.dev.len(),
        corpus.eval.len(),
        corpus.train_speakers
    );
    Ok(())
}

fn dir_is_nonempty(dir: &Path) -> Result<bool> {
    if !dir.exists() {
        return Ok(false);
    }
    let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(entries.next().is_some())
}

/// Name of the checkpoint's experiment context fields. The full config
/// travels inside the checkpoint so `extract` needs no separate config file.
const ECHO_CONFIG: &str = "config";
const ECHO_SYSTEM: &str = "system";

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    let kind = SystemKind::parse(&args.system)?;
    let corpus = read_corpus_dir(&args.corpus)?;
    if corpus.feature_dim != cfg.corpus.feature_dim {
        return Err(Error::Config(format!(
            "config expects {}-dim features but corpus {} holds {}-dim features",
            cfg.corpus.feature_dim,
            args.corpus.display(),
            corpus.feature_dim
        )));
    }
    let train_set = labeled_split(&corpus.train)?;
    let trained = train_system(kind, &train_set, &cfg)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let stem = kind.file_stem();
    let echo = serde_json::json!({ ECHO_SYSTEM: kind.name(), ECHO_CONFIG: cfg });
    let ckpt_path = args.out.join(format!("{stem}.ckpt"));
    save_checkpoint(&ckpt_path, &trained.model, Some(echo))?;

    let loss_path = args.out.join(format!("{stem}.loss.csv"));
    let mut loss_out = Vec::new();
    write_loss_trace(&mut loss_out, &trained.trace)
        .map_err(|e| Error::io(loss_path.display().to_string(), e))?;
    fs::write(&loss_path, loss_out).map_err(|e| Error::io(loss_path.display().to_string(), e))?;

    let pretrain_path = args.out.join(format!("{stem}.pretrain.csv"));
    let mut pre = String::from("encoder,epoch,loss\n");
    for (enc, losses) in trained.pretrain_losses.iter().enumerate() {
        for (epoch, loss) in losses.iter().enumerate() {
            pre.push_str(&format!("{enc},{epoch},{loss}\n"));
        }
    }
    fs::write(&pretrain_path, pre)
        .map_err(|e| Error::io(pretrain_path.display().to_string(), e))?;

    let meta_path = args.out.join(format!("{stem}.meta.json"));
    let meta = serde_json::json!({
        "system": kind.name(),
        "param_count": trained.model.param_count(),
    });
    write_json(&meta_path, &meta)?;

    let last = trained.trace.last();
    println!(
        "trained {} ({} parameters) -> {}; final val accuracy {}",
        kind.name(),
        trained.model.param_count(),
        ckpt_path.display(),
        last.map_or("n/a".to_string(), |s| format!("{:.3}", s.val_acc))
    );
    Ok(())
}

fn labeled_split(split: &[FeatureSequence]) -> Result<Vec<cvector_core::trainer::LabeledSequence>> {
    split.iter().map(|seq| seq.labeled_sequence()).collect()
}

/// Pull the model, its system name, and the training-time config back out
/// of a checkpoint written by `train`.
fn load_trained(path: &Path) -> Result<(CVectorModel, String, ExperimentConfig)> {
    let (model, echo) = load_checkpoint(path)?;
    let echo = echo.ok_or_else(|| {
        Error::Data(format!(
            "checkpoint {} carries no experiment context; was it written by `cvector train`?",
            path.display()
        ))
    })?;
    let system = echo
        .get(ECHO_SYSTEM)
        .and_then(|v| v.as_str())
        .unwrap_or("unknown")
        .to_string();
    let cfg_value = echo.get(ECHO_CONFIG).cloned().ok_or_else(|| {
        Error::Data(format!(
            "checkpoint {} experiment context has no training config",
            path.display()
        ))
    })?;
    let cfg: ExperimentConfig = serde_json::from_value(cfg_value).map_err(|e| {
        Error::Data(format!(
            "checkpoint {} experiment context is malformed: {e}",
            path.display()
        ))
    })?;
    Ok((model, system, cfg))
}

fn split_of<'a>(
    corpus: &'a LoadedCorpus,
    split: &str,
) -> Result<(&'a [FeatureSequence], &'a SegmentList)> {
    match split {
        "train" => Ok((&corpus.train, &corpus.train_reference)),
        "dev" => Ok((&corpus.dev, &corpus.dev_reference)),
        "eval" => Ok((&corpus.eval, &corpus.eval_reference)),
        other => Err(Error::Config(format!(
            "unknown split {other:?}; expected train, dev, or eval"
        ))),
    }
}

fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let (model, system, cfg) = load_trained(&args.checkpoint)?;
    let corpus = read_corpus_dir(&args.corpus)?;
    let expected = model.encoders()[0].input_dim();
    if corpus.feature_dim != expected {
        return Err(Error::Data(format!(
            "checkpoint {} expects {}-dim features but corpus {} holds {}-dim features",
            args.checkpoint.display(),
            expected,
            args.corpus.display(),
            corpus.feature_dim
        )));
    }
    let (recordings, _) = split_of(&corpus, &args.split)?;
    let embedded = extract_embeddings(&model, recordings, &cfg.training)?;
    write_embeddings_dir(&args.out, &system, &embedded)?;
    let windows: usize = embedded.iter().map(|r| r.windows.len()).sum();
    println!(
        "embedded {} {} recordings ({} windows, dim {}) -> {}",
        embedded.len(),
        args.split,
        windows,
        model.embedding_dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    if args.threshold.is_none() && !args.tune {
        return Err(Error::Config(
            "pass --threshold <p> to apply a frozen threshold or --tune to search one".into(),
        ));
    }
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let (_, embedded) = read_embeddings_dir(&args.embeddings)?;
    let mut cluster_cfg = base_cluster_config(&cfg.clustering);
    cluster_cfg.k_override = args.k_override;

    if let Some(p) = args.threshold {
        cluster_cfg.threshold_p = p;
    } else {
        let corpus_dir = args
            .corpus
            .as_ref()
            .expect("clap enforces --corpus alongside --tune");
        let corpus = read_corpus_dir(corpus_dir)?;
        let (_, reference) = split_of(&corpus, &args.split)?;
        let tuning = tune_threshold(
            &embedded,
            reference,
            &cluster_cfg,
            &cfg.clustering.threshold_grid,
            cfg.collar_s,
        )?;
        cluster_cfg.threshold_p = tuning.chosen;
        let sidecar = args.out.with_extension("tune.json");
        write_json(&sidecar, &tuning)?;
        println!(
            "tuned threshold {} on {} ({} grid points) -> {}",
            tuning.chosen,
            args.split,
            tuning.curve.len(),
            sidecar.display()
        );
    }

    let hypothesis = cluster_recordings(&embedded, &cluster_cfg)?;
    write_rttm(&hypothesis, &args.out)?;
    println!(
        "clustered {} recordings at threshold {} -> {}",
        embedded.len(),
        cluster_cfg.threshold_p,
        args.out.display()
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let reference = read_rttm(&args.reference)?;
    let hypothesis = read_rttm(&args.hypothesis)?;
    let report = ser(&reference, &hypothesis, args.collar)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Data(format!("cannot serialize score report: {e}")))?;
    match &args.out {
        Some(path) => {
            fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!(
                "SER {:.2}% over {:.2} s scored -> {}",
                report.ser_percent,
                report.scored_time_s,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let grid = match &args.lambdas {
        Some(list) => parse_lambda_list(list)?,
        None => (1..=20).map(|i| i as f64 * 0.05).collect(),
    };
    let corpus = read_corpus_dir(&args.corpus)?;
    let (recordings, _) = split_of(&corpus, &args.split)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(args.out.display().to_string(), e))?;

    let mut rows = Vec::new();
    let mut curve_source = None;
    for path in &args.checkpoints {
        let (model, _, cfg) = load_trained(path)?;
        let windows = feature_windows(recordings, &cfg.training)?;
        rows.extend(annotation_sweep_rows(&model, &windows)?);

        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("checkpoint");
        let dump_path = args.out.join(format!("annotations_{stem}.csv"));
        let mut dump = Vec::new();
        write_annotation_dump(&mut dump, &model, &windows)?;
        fs::write(&dump_path, dump)
            .map_err(|e| Error::io(dump_path.display().to_string(), e))?;

        if curve_source.is_none() {
            let first = model.embed_window(&windows[0])?;
            curve_source = Some((first.stage1_annotations[0].clone(), model.config().mu));
        }
    }

    let sweep_path = args.out.join("sweep.csv");
    let mut sweep = Vec::new();
    write_sweep_csv(&mut sweep, &rows).map_err(|e| Error::io(sweep_path.display().to_string(), e))?;
    fs::write(&sweep_path, sweep).map_err(|e| Error::io(sweep_path.display().to_string(), e))?;

    let (annotation, mu) = curve_source.expect("clap requires at least one checkpoint");
    let curve = penalty_curve(&annotation, mu, &grid)?;
    let curve_path = args.out.join("penalty_curve.csv");
    let mut text = String::from("lambda,penalty\n");
    for (lambda, penalty) in &curve {
        text.push_str(&format!("{lambda},{penalty}\n"));
    }
    fs::write(&curve_path, text).map_err(|e| Error::io(curve_path.display().to_string(), e))?;

    println!(
        "swept {} checkpoints ({} stat rows, {} curve points) -> {}",
        args.checkpoints.len(),
        rows.len(),
        curve.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_lambda_list(list: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad value {s:?} in --lambdas")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Config("--lambdas list is empty".into()));
    }
    Ok(grid)
}

#[derive(Debug, Serialize)]
struct ReportRow {
    system: String,
    param_count: usize,
    chosen_threshold: Option<f64>,
    dev_ser: Option<f64>,
    eval_ser: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct MetaFile {
    system: String,
    param_count: usize,
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let entries = fs::read_dir(&args.run)
        .map_err(|e| Error::io(args.run.display().to_string(), e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|name| name.strip_suffix(".meta.json").map(str::to_string))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Data(format!(
            "no trained systems found in {} (no *.meta.json files)",
            args.run.display()
        )));
    }

    let mut rows = Vec::new();
    let mut incomplete = Vec::new();
    for stem in &stems {
        let meta: MetaFile = read_json(&args.run.join(format!("{stem}.meta.json")))?;
        let tuning: Option<ThresholdTuning> =
            read_optional_json(&args.run.join(format!("{stem}.dev.tune.json")))?;
        let dev: Option<SerReport> =
            read_optional_json(&args.run.join(format!("{stem}.dev.score.json")))?;
        let eval: Option<SerReport> =
            read_optional_json(&args.run.join(format!("{stem}.eval.score.json")))?;
        let mut missing = Vec::new();
        if dev.is_none() {
            missing.push("dev score");
        }
        if eval.is_none() {
            missing.push("eval score");
        }
        if !missing.is_empty() {
            incomplete.push(format!("{}: missing {}", meta.system, missing.join(" and ")));
        }
        rows.push(ReportRow {
            system: meta.system,
            param_count: meta.param_count,
            chosen_threshold: tuning.map(|t| t.chosen),
            dev_ser: dev.map(|r| r.ser_percent),
            eval_ser: eval.map(|r| r.ser_percent),
        });
    }

    let table = render_table(
        &rows
            .iter()
            .map(|r| {
                (
                    r.system.clone(),
                    r.param_count.to_string(),
                    r.dev_ser.map_or("—".to_string(), |v| format!("{v:.2}")),
                    r.eval_ser.map_or("—".to_string(), |v| format!("{v:.2}")),
                    r.chosen_threshold
                        .map_or("—".to_string(), |v| format!("{v:.2}")),
                )
            })
            .collect::<Vec<_>>(),
    );
    print!("{table}");
    for note in &incomplete {
        println!("incomplete: {note}");
    }

    let out = args
        .out
        .unwrap_or_else(|| args.run.join("report.json"));
    let report = serde_json::json!({ "rows": rows, "incomplete": incomplete });
    write_json(&out, &report)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_optional_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    read_json(path).map(Some)
}
