//! Experiment configuration: one JSON document that drives corpus
//! generation, model construction, training, clustering, and scoring.
//!
//! Every section has working defaults sized for a quick desk-scale run,
//! so an empty object `{}` is a complete configuration. Unknown keys are
//! rejected everywhere so typos fail loudly instead of silently falling
//! back to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::combiner::{CombinerConfig, Topology};
use crate::encoders::{HornnConfig, TdnnConfig};
use crate::error::{Error, Result};
use crate::synthdata::SynthConfig;
use crate::trainer::TrainConfig;

/// Widths of the two frame-level encoders. Both project to the same
/// output width so their outputs can be combined.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub tdnn_hidden: usize,
    pub hornn_state: usize,
    pub hornn_layers: usize,
    pub hornn_recurrence: Vec<usize>,
    /// Output width of every encoder, the `n` consumed by attention.
    pub projection_dim: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            tdnn_hidden: 32,
            hornn_state: 24,
            hornn_layers: 2,
            hornn_recurrence: vec![1, 4],
            projection_dim: 24,
        }
    }
}

impl EncoderSettings {
    pub fn tdnn_config(&self, input_dim: usize) -> TdnnConfig {
        TdnnConfig::standard(input_dim, self.tdnn_hidden, self.projection_dim)
    }

    pub fn hornn_config(&self, input_dim: usize) -> HornnConfig {
        let mut cfg = HornnConfig::standard(input_dim, self.hornn_state, self.projection_dim);
        cfg.num_layers = self.hornn_layers;
        cfg.recurrence_offsets = self.hornn_recurrence.clone();
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.projection_dim == 0 {
            return Err(Error::Config("encoder projection width must be positive".into()));
        }
        self.tdnn_config(2).validate()?;
        self.hornn_config(2).validate()?;
        Ok(())
    }
}

/// Optional overrides applied on top of the per-topology combiner
/// defaults. Anything left unset keeps its derived default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombinerOverrides {
    /// Heads per first-stage attention layer.
    pub heads: Option<usize>,
    pub attention_hidden: Option<usize>,
    pub mu: Option<f64>,
    /// Diagonal targets for every first-stage layer; length must match
    /// the head count.
    pub lambdas: Option<Vec<f64>>,
    pub stage2_heads: Option<usize>,
    pub stage2_lambdas: Option<Vec<f64>>,
    pub bottleneck_dim: Option<usize>,
    pub fc_width: Option<usize>,
    pub fc_transform: Option<bool>,
}

impl CombinerOverrides {
    /// Materialize a full combiner configuration for `k` systems of
    /// output width `n` under the given topology.
    pub fn build(&self, topology: Topology, k: usize, n: usize) -> Result<CombinerConfig> {
        let mut cfg = CombinerConfig::defaults(topology, k, n);
        if let Some(h) = self.heads {
            let layers = cfg.stage1_heads.len();
            cfg.stage1_heads = vec![h; layers];
            cfg.stage1_lambdas =
                vec![crate::combiner::default_lambda_pattern(h); layers];
        }
        if let Some(ref lambdas) = self.lambdas {
            cfg.stage1_lambdas = vec![lambdas.clone(); cfg.stage1_heads.len()];
        }
        if let Some(d_a) = self.attention_hidden {
            cfg.attention_hidden = d_a;
        }
        if let Some(mu) = self.mu {
            cfg.mu = mu;
        }
        if let Some(h2) = self.stage2_heads {
            cfg.stage2_heads = h2;
            cfg.stage2_lambdas = crate::combiner::default_lambda_pattern(h2);
        }
        if let Some(ref l2) = self.stage2_lambdas {
            cfg.stage2_lambdas = l2.clone();
        }
        if let Some(b) = self.bottleneck_dim {
            cfg.bottleneck_dim = b;
        }
        if let Some(w) = self.fc_width {
            cfg.fc_width = w;
        }
        if let Some(t) = self.fc_transform {
            cfg.fc_transform_enabled = t;
        }
        cfg.validate(k)?;
        Ok(cfg)
    }
}

/// Spectral clustering settings and the threshold grid searched during
/// dev-set tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSettings {
    /// Candidate suppression quantiles for tuning, each in `(0, 1)`.
    pub threshold_grid: Vec<f64>,
    /// Quantile used when no tuning result is supplied.
    pub default_threshold: f64,
    pub k_max: usize,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        ClusteringSettings {
            threshold_grid: (1..=18).map(|i| i as f64 * 0.05).collect(),
            default_threshold: 0.5,
            k_max: 10,
            kmeans_restarts: 10,
            kmeans_iters: 100,
        }
    }
}

impl ClusteringSettings {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_grid.is_empty() {
            return Err(Error::Config("threshold grid must not be empty".into()));
        }
        for &p in self.threshold_grid.iter().chain([&self.default_threshold]) {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!(
                    "clustering thresholds must lie in (0, 1), got {p}"
                )));
            }
        }
        if self.k_max == 0 || self.kmeans_restarts == 0 || self.kmeans_iters == 0 {
            return Err(Error::Config(
                "k_max, kmeans_restarts, and kmeans_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub corpus: SynthConfig,
    pub encoders: EncoderSettings,
    pub combiner: CombinerOverrides,
    pub training: TrainConfig,
    pub clustering: ClusteringSettings,
    /// Scoring collar in seconds, applied on both sides of every
    /// reference boundary.
    pub collar_s: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: SynthConfig::default(),
            encoders: EncoderSettings::default(),
            combiner: CombinerOverrides::default(),
            training: TrainConfig::default(),
            clustering: ClusteringSettings::default(),
            collar_s: 0.25,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.encoders.validate()?;
        self.training.validate()?;
        self.clustering.validate()?;
        if !(self.collar_s.is_finite() && self.collar_s >= 0.0) {
            return Err(Error::Config(format!(
                "collar must be finite and non-negative, got {}",
                self.collar_s
            )));
        }
        // exercise combiner overrides against every topology they may
        // be asked to build
        for topology in [
            Topology::Simultaneous,
            Topology::Consec1,
            Topology::Consec2,
            Topology::ConsecFc,
        ] {
            self.combiner
                .build(topology, 2, self.encoders.projection_dim)?;
        }
        self.combiner
            .build(Topology::Simultaneous, 1, self.encoders.projection_dim)?;
        Ok(())
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
