//! Drives the `cvector` binary end to end on a miniature corpus: every
//! subcommand chains through real files in a temp directory, exactly as a
//! user would run them.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cvector_core::config::ExperimentConfig;
use cvector_core::pipeline::ThresholdTuning;
use cvector_core::scoring::SerReport;

fn cvector(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvector"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = cvector(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str], expected_code: i32) -> String {
    let out = cvector(args);
    let code = out.status.code().expect("exit code");
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(
        code, expected_code,
        "command {args:?} exited {code}, expected {expected_code}\nstderr: {stderr}"
    );
    assert!(!stderr.is_empty(), "failure without a message: {args:?}");
    stderr
}

/// Smallest config that still trains: four close-set training speakers,
/// one epoch, short windows.
fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.corpus.train_speakers = 4;
    cfg.corpus.eval_speakers = 2;
    cfg.corpus.feature_dim = 6;
    cfg.corpus.min_angle_degrees = 55.0;
    cfg.corpus.turn_frames = (60, 90);
    cfg.corpus.turns_per_recording = 4;
    cfg.corpus.speakers_per_recording = 2;
    cfg.corpus.train_recordings = 6;
    cfg.corpus.dev_recordings = 2;
    cfg.corpus.eval_recordings = 2;
    cfg.corpus.sigma = 0.05;
    cfg.corpus.rho = 0.5;
    cfg.corpus.seed = 5;
    cfg.encoders.tdnn_hidden = 8;
    cfg.encoders.hornn_state = 8;
    cfg.encoders.hornn_layers = 1;
    cfg.encoders.hornn_recurrence = vec![1];
    cfg.encoders.projection_dim = 8;
    cfg.combiner.heads = Some(2);
    cfg.combiner.attention_hidden = Some(4);
    cfg.combiner.bottleneck_dim = Some(8);
    cfg.training.window_frames = 50;
    cfg.training.window_shift = 25;
    cfg.training.epochs = 1;
    cfg.training.pretrain_epochs = 1;
    cfg.training.batch_size = 8;
    cfg.clustering.threshold_grid = vec![0.5, 0.75];
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("experiment.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_config());
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    let config = path_str(&config);

    run_ok(&["synth", "--config", config, "--out", path_str(&corpus)]);
    assert!(corpus.join("manifest.json").exists());
    assert!(corpus.join("dev.rttm").exists());

    // A second synth must refuse to clobber the directory unless forced.
    let stderr = run_err(
        &["synth", "--config", config, "--out", path_str(&corpus)],
        3,
    );
    assert!(stderr.contains("--force"), "hint missing: {stderr}");
    run_ok(&[
        "synth", "--config", config, "--out", path_str(&corpus), "--force",
    ]);

    run_ok(&[
        "train",
        "--config", config,
        "--corpus", path_str(&corpus),
        "--system", "tdnn",
        "--out", path_str(&run),
    ]);
    let ckpt = run.join("tdnn.ckpt");
    assert!(ckpt.exists());
    let loss = fs::read_to_string(run.join("tdnn.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2, "header plus one epoch: {loss}");
    assert!(loss.starts_with("epoch,train_loss,val_acc"));
    let pretrain = fs::read_to_string(run.join("tdnn.pretrain.csv")).unwrap();
    assert_eq!(pretrain.lines().count(), 2, "one encoder, one epoch");
    let meta: serde_json::Value = read_json(&run.join("tdnn.meta.json"));
    assert_eq!(meta["system"], "tdnn");
    assert!(meta["param_count"].as_u64().unwrap() > 0);

    let emb_dev = dir.path().join("emb_dev");
    let emb_eval = dir.path().join("emb_eval");
    run_ok(&[
        "extract",
        "--checkpoint", path_str(&ckpt),
        "--corpus", path_str(&corpus),
        "--split", "dev",
        "--out", path_str(&emb_dev),
    ]);
    run_ok(&[
        "extract",
        "--checkpoint", path_str(&ckpt),
        "--corpus", path_str(&corpus),
        "--split", "eval",
        "--out", path_str(&emb_eval),
    ]);
    assert!(emb_dev.join("windows.json").exists());

    // Worker count must not change the embeddings.
    let emb_eval_j1 = dir.path().join("emb_eval_j1");
    run_ok(&[
        "extract", "--jobs", "1",
        "--checkpoint", path_str(&ckpt),
        "--corpus", path_str(&corpus),
        "--split", "eval",
        "--out", path_str(&emb_eval_j1),
    ]);
    for entry in fs::read_dir(&emb_eval).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(emb_eval.join(&name)).unwrap(),
            fs::read(emb_eval_j1.join(&name)).unwrap(),
            "{name:?} differs across --jobs settings"
        );
    }

    let dev_rttm = run.join("tdnn.dev.rttm");
    run_ok(&[
        "cluster",
        "--embeddings", path_str(&emb_dev),
        "--config", config,
        "--tune",
        "--corpus", path_str(&corpus),
        "--split", "dev",
        "--out", path_str(&dev_rttm),
    ]);
    assert!(dev_rttm.exists());
    let tuning: ThresholdTuning = read_json(&run.join("tdnn.dev.tune.json"));
    assert!(
        tiny_config().clustering.threshold_grid.contains(&tuning.chosen),
        "chosen threshold {} is off the grid",
        tuning.chosen
    );

    let eval_rttm = run.join("tdnn.eval.rttm");
    run_ok(&[
        "cluster",
        "--embeddings", path_str(&emb_eval),
        "--config", config,
        "--threshold", &tuning.chosen.to_string(),
        "--out", path_str(&eval_rttm),
    ]);

    for (split, rttm) in [("dev", &dev_rttm), ("eval", &eval_rttm)] {
        let score = run.join(format!("tdnn.{split}.score.json"));
        run_ok(&[
            "score",
            "--reference", path_str(&corpus.join(format!("{split}.rttm"))),
            "--hypothesis", path_str(rttm),
            "--out", path_str(&score),
        ]);
        let report: SerReport = read_json(&score);
        assert!(
            (0.0..=100.0).contains(&report.ser_percent),
            "{split} SER {} out of range",
            report.ser_percent
        );
        assert!(report.scored_time_s > 0.0);
    }

    let stdout = run_ok(&["report", "--run", path_str(&run)]);
    assert!(stdout.contains("tdnn"), "table misses the system: {stdout}");
    assert!(
        !stdout.contains("incomplete"),
        "complete run flagged incomplete: {stdout}"
    );
    let report: serde_json::Value = read_json(&run.join("report.json"));
    assert_eq!(report["rows"][0]["system"], "tdnn");
    assert_eq!(report["rows"][0]["chosen_threshold"], tuning.chosen);
    assert_eq!(report["incomplete"].as_array().unwrap().len(), 0);

    let sweep = dir.path().join("sweep");
    run_ok(&[
        "sweep-lambda",
        "--checkpoint", path_str(&ckpt),
        "--corpus", path_str(&corpus),
        "--split", "eval",
        "--lambdas", "0.2,0.6,1.0",
        "--out", path_str(&sweep),
    ]);
    let stats = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(
        stats.lines().count(),
        3,
        "header plus one row per head: {stats}"
    );
    let curve = fs::read_to_string(sweep.join("penalty_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4, "header plus one row per lambda");
    assert!(curve.starts_with("lambda,penalty"));
    assert!(sweep.join("annotations_tdnn.csv").exists());

    // A mismatched corpus must be rejected at extraction time.
    let mut narrow = tiny_config();
    narrow.corpus.feature_dim = 5;
    narrow.corpus.min_angle_degrees = 50.0;
    let narrow_config = dir.path().join("narrow.json");
    fs::write(&narrow_config, narrow.to_json()).unwrap();
    let narrow_corpus = dir.path().join("narrow_corpus");
    run_ok(&[
        "synth",
        "--config", path_str(&narrow_config),
        "--out", path_str(&narrow_corpus),
    ]);
    let stderr = run_err(
        &[
            "extract",
            "--checkpoint", path_str(&ckpt),
            "--corpus", path_str(&narrow_corpus),
            "--split", "eval",
            "--out", path_str(&dir.path().join("emb_bad")),
        ],
        3,
    );
    assert!(stderr.contains("5-dim"), "mismatch unexplained: {stderr}");
}

#[test]
fn reruns_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &tiny_config());
    let config = path_str(&config);
    let corpus_a = dir.path().join("corpus_a");
    let corpus_b = dir.path().join("corpus_b");
    run_ok(&["synth", "--config", config, "--out", path_str(&corpus_a)]);
    run_ok(&["synth", "--config", config, "--out", path_str(&corpus_b)]);
    for name in ["manifest.json", "train00.fmat", "eval.rttm"] {
        assert_eq!(
            fs::read(corpus_a.join(name)).unwrap(),
            fs::read(corpus_b.join(name)).unwrap(),
            "{name} differs between identical synth runs"
        );
    }

    let run_a = dir.path().join("run_a");
    let run_b = dir.path().join("run_b");
    for run in [&run_a, &run_b] {
        run_ok(&[
            "train",
            "--config", config,
            "--corpus", path_str(&corpus_a),
            "--system", "tdnn",
            "--out", path_str(run),
        ]);
    }
    for name in ["tdnn.ckpt", "tdnn.loss.csv", "tdnn.pretrain.csv"] {
        assert_eq!(
            fs::read(run_a.join(name)).unwrap(),
            fs::read(run_b.join(name)).unwrap(),
            "{name} differs between identical training runs"
        );
    }
}

#[test]
fn failures_use_the_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = path_str(&out);

    // Config that parses but fails validation.
    let invalid = dir.path().join("invalid.json");
    let mut cfg_json: serde_json::Value =
        serde_json::from_str(&tiny_config().to_json()).unwrap();
    cfg_json["collar_s"] = serde_json::json!(-1.0);
    fs::write(&invalid, cfg_json.to_string()).unwrap();
    run_err(&["synth", "--config", path_str(&invalid), "--out", out], 2);

    // Config that does not parse at all.
    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{not json").unwrap();
    run_err(&["synth", "--config", path_str(&garbled), "--out", out], 3);

    // Unknown keys are rejected, not ignored.
    let unknown = dir.path().join("unknown.json");
    fs::write(&unknown, r#"{"corpux": {}}"#).unwrap();
    run_err(&["synth", "--config", path_str(&unknown), "--out", out], 3);

    let config = write_config(dir.path(), &tiny_config());
    let config = path_str(&config);
    let corpus = dir.path().join("corpus");
    run_ok(&["synth", "--config", config, "--out", path_str(&corpus)]);

    // Unknown system name.
    let stderr = run_err(
        &[
            "train",
            "--config", config,
            "--corpus", path_str(&corpus),
            "--system", "wavenet",
            "--out", out,
        ],
        2,
    );
    assert!(stderr.contains("wavenet"));

    // Corpus directory that does not exist.
    run_err(
        &[
            "train",
            "--config", config,
            "--corpus", path_str(&dir.path().join("nowhere")),
            "--system", "tdnn",
            "--out", out,
        ],
        3,
    );

    // Cluster needs a threshold policy; --tune additionally needs --corpus
    // (rejected by argument parsing, which also exits 2).
    let emb = dir.path().join("emb");
    run_err(
        &["cluster", "--embeddings", path_str(&emb), "--out", out],
        2,
    );
    let parse_err = cvector(&["cluster", "--embeddings", path_str(&emb), "--out", out, "--tune"]);
    assert_eq!(parse_err.status.code(), Some(2));

    // Scoring against a missing reference.
    run_err(
        &[
            "score",
            "--reference", path_str(&dir.path().join("none.rttm")),
            "--hypothesis", path_str(&dir.path().join("none.rttm")),
        ],
        3,
    );

    // Report over a directory with no trained systems.
    run_err(&["report", "--run", path_str(&corpus)], 3);

    // Zero workers is rejected up front.
    run_err(&["synth", "--jobs", "0", "--config", config, "--out", out], 2);
}
