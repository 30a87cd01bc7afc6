//! Dataset generation, training orchestration, evaluation sweeps and metrics.
//!
//! A sweep is a set of replicate seeds. For each seed the harness simulates
//! an episode set, splits it 60/20/20 by episode, trains the GCN and the two
//! GRUs on the training split (calibrating on validation), and evaluates
//! every requested model on the held-out test episodes for each sweep
//! coordinate.

mod dataset;
mod eval;
mod metrics;
mod pipeline;
mod sweep;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use dataset::{episode_seed, generate_dataset, observe_episode, Dataset, EpisodeData, FrameObs, Split};
pub use eval::{eval_ticks, evaluate_episode, teams, EpisodeEval, EvalCoord, PredictionLogRecord, Recording};
pub use metrics::{compute_metrics, Accuracy, FramePrediction, MetricsRow};
pub use pipeline::{
    embed_episode, load_gcn, load_pair, save_gcn, save_pair, subsample_offsets, train_temporal_pair, EpisodeEmbeddings,
    GcnModel, SeedContext, TemporalPair, TrainedModels,
};
pub use sweep::{
    alpha_beta_csv, csv_string, episode_log_path, evaluate_coord, read_spec, replay_episode, run_sweep, train_checkpoints, write_csv, write_json, AlphaBetaRow, SweepOptions, SweepOutput,
    CSV_HEADER,
};

use crate::baselines::KalmanConfig;
use crate::comms::NetworkModel;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::models::{ModelConfig, TrainConfig};
use crate::perception::PerceptionConfig;

pub const SPEC_SCHEMA_VERSION: u32 = 1;

/// Window/horizon pairs (ticks at 10 Hz) the harness accepts.
pub const HORIZON_PAIRS: [[usize; 2]; 3] = [[10, 10], [20, 20], [30, 30]];
pub const SUBSAMPLING: [usize; 3] = [10, 5, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSel {
    GnnOnly,
    EgoGru,
    CollectiveGru,
    CollectiveConsensus,
    Cvm,
}

impl ModelSel {
    pub const ALL: [ModelSel; 5] = [
        ModelSel::GnnOnly,
        ModelSel::EgoGru,
        ModelSel::CollectiveGru,
        ModelSel::CollectiveConsensus,
        ModelSel::Cvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelSel::GnnOnly => "gnn_only",
            ModelSel::EgoGru => "ego_gru",
            ModelSel::CollectiveGru => "collective_gru",
            ModelSel::CollectiveConsensus => "collective_consensus",
            ModelSel::Cvm => "cvm",
        }
    }

    pub fn needs_ego(self) -> bool {
        self == ModelSel::EgoGru
    }

    pub fn needs_collective(self) -> bool {
        matches!(self, ModelSel::CollectiveGru | ModelSel::CollectiveConsensus)
    }

    pub fn needs_gcn(self) -> bool {
        self != ModelSel::Cvm
    }
}

impl fmt::Display for ModelSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Episodes per seed, split 60/20/20.
    pub episodes: usize,
    pub episode_ticks: usize,
    /// Tick stride between GCN training frames.
    pub gcn_stride: usize,
    /// Tick stride between GRU training windows.
    pub train_stride: usize,
    /// Tick stride between evaluated frames.
    pub eval_stride: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            episodes: 300,
            episode_ticks: 300,
            gcn_stride: 3,
            train_stride: 4,
            eval_stride: 5,
        }
    }
}

/// Full description of one experiment sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub scenario: u8,
    pub robot_counts: Vec<usize>,
    /// `(observation ticks, forecast ticks)` pairs.
    pub horizons: Vec<[usize; 2]>,
    /// Frames fed to the GRU, taken at uniform intervals from the window.
    pub subsampling: Vec<usize>,
    pub models: Vec<ModelSel>,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub beta: f64,
    /// Extra `(alpha, beta)` pairs at which the consensus model is re-scored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha_beta_grid: Vec<[f64; 2]>,
    #[serde(default)]
    pub network: NetworkModel,
    #[serde(default)]
    pub perception: PerceptionConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    /// Layer widths; `horizon` is taken from each horizon pair.
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub gcn_train: TrainConfig,
    #[serde(default)]
    pub gru_train: TrainConfig,
    #[serde(default)]
    pub kalman: KalmanConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Write per-frame predictions and test episode logs for replay.
    #[serde(default)]
    pub record_predictions: bool,
}

impl ExperimentSpec {
    /// Sized to fit the single-core acceptance budget.
    pub fn desk_scale(scenario: u8) -> Self {
        ExperimentSpec {
            schema_version: SPEC_SCHEMA_VERSION,
            scenario,
            robot_counts: vec![1, 2, 3, 4],
            horizons: vec![[20, 20]],
            subsampling: vec![10],
            models: ModelSel::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            alpha: 0.5,
            beta: 0.5,
            alpha_beta_grid: Vec::new(),
            network: NetworkModel::default(),
            perception: PerceptionConfig {
                feature_dim: 32,
                ..PerceptionConfig::default()
            },
            // Raw pixel distances as edge weights swamp the self-loops after
            // normalization; affinities train noticeably better.
            graph: GraphConfig {
                edge_affinity: true,
                ..GraphConfig::default()
            },
            model: ModelConfig {
                feature_dim: 32,
                gcn_hidden: 64,
                embed_dim: 32,
                gru_hidden: 64,
                horizon: 20,
                ..ModelConfig::default()
            },
            gcn_train: TrainConfig {
                epochs: 12,
                learning_rate: 3e-3,
                batch_size: 32,
                patience: 3,
                ..TrainConfig::default()
            },
            gru_train: TrainConfig {
                epochs: 15,
                learning_rate: 3e-3,
                batch_size: 32,
                patience: 3,
                ..TrainConfig::default()
            },
            kalman: KalmanConfig::default(),
            dataset: DatasetConfig {
                episodes: 100,
                ..DatasetConfig::default()
            },
            record_predictions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema_version != SPEC_SCHEMA_VERSION {
            return bad(format!("unsupported spec schema version {}", self.schema_version));
        }
        if !(1..=3).contains(&self.scenario) {
            return bad(format!("scenario {} not in 1..=3", self.scenario));
        }
        if self.robot_counts.is_empty() || self.robot_counts.iter().any(|k| !(1..=4).contains(k)) {
            return bad("robot counts must be a nonempty subset of 1..=4".into());
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !HORIZON_PAIRS.contains(h)) {
            return bad(format!("horizons must be a nonempty subset of {HORIZON_PAIRS:?}"));
        }
        if self.subsampling.is_empty() || self.subsampling.iter().any(|s| !SUBSAMPLING.contains(s)) {
            return bad(format!("subsampling must be a nonempty subset of {SUBSAMPLING:?}"));
        }
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        for (name, list) in [
            ("robot_counts", self.robot_counts.iter().map(|&v| v as u64).collect::<Vec<_>>()),
            ("horizons", self.horizons.iter().map(|h| h[0] as u64).collect()),
            ("subsampling", self.subsampling.iter().map(|&v| v as u64).collect()),
            ("models", self.models.iter().map(|&m| m as u64).collect()),
            ("seeds", self.seeds.clone()),
        ] {
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != list.len() {
                return bad(format!("{name} contains duplicates"));
            }
        }
        let weights_ok = |a: f64, b: f64| a >= 0.0 && b >= 0.0 && a + b > 0.0;
        if !weights_ok(self.alpha, self.beta) || self.alpha_beta_grid.iter().any(|&[a, b]| !weights_ok(a, b)) {
            return bad("alpha and beta must be >= 0 with a positive sum".into());
        }
        self.network.validate()?;
        self.gcn_train.validate()?;
        self.gru_train.validate()?;
        if self.perception.feature_dim != self.model.feature_dim {
            return bad(format!(
                "perception feature_dim {} differs from model feature_dim {}",
                self.perception.feature_dim, self.model.feature_dim
            ));
        }
        let d = &self.dataset;
        if d.episodes < 50 {
            return bad(format!("need at least 50 episodes, got {}", d.episodes));
        }
        let longest = self.horizons.iter().map(|h| h[0] + h[1]).max().unwrap_or(0);
        if d.episode_ticks < longest + 1 || d.episode_ticks < crate::world::MIN_EPISODE_TICKS {
            return bad(format!("episode_ticks {} too short", d.episode_ticks));
        }
        if d.gcn_stride == 0 || d.train_stride == 0 || d.eval_stride == 0 {
            return bad("strides must be positive".into());
        }
        Ok(())
    }

    pub fn needs_training(&self) -> bool {
        self.models.iter().any(|m| m.needs_gcn())
    }
}
