//! Resolved invocations. A plan holds every input that affects the outputs,
//! with config files already parsed, so a manifest can replay it.

use std::fs;
use std::path::{Path, PathBuf};

use hetnet_core::alignment::AlignConfig;
use hetnet_core::campaign::SimulationConfig;
use hetnet_core::controller::ExperimentConfig;
use hetnet_core::predictors::{ModelKind, ModelSpec};
use hetnet_core::workload::TraceEnsembleConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::fail::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
pub enum Plan {
    Analyze(AnalyzePlan),
    Gen(GenPlan),
    Simulate(SimulatePlan),
    Train(TrainPlan),
    Experiment(ExperimentPlan),
    Align(AlignPlan),
    Report(ReportPlan),
}

impl Plan {
    pub fn name(&self) -> &'static str {
        match self {
            Plan::Analyze(_) => "analyze",
            Plan::Gen(_) => "gen",
            Plan::Simulate(_) => "simulate",
            Plan::Train(_) => "train",
            Plan::Experiment(_) => "experiment",
            Plan::Align(_) => "align",
            Plan::Report(_) => "report",
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Plan::Analyze(p) => p.seed.into_iter().collect(),
            Plan::Gen(p) => vec![p.seed],
            Plan::Simulate(p) => vec![p.seed],
            Plan::Train(p) => vec![p.seed],
            Plan::Experiment(p) => vec![p.seed],
            Plan::Align(p) => p.seed.into_iter().collect(),
            Plan::Report(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub segment_duration: f64,
    /// Metric for the tercile study; defaults to the top of the ANOVA screen.
    pub tercile_metric: Option<String>,
    pub tercile_rounds: usize,
    pub users_per_round: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            segment_duration: hetnet_core::trace_analysis::DEFAULT_SEGMENT_SECS,
            tercile_metric: None,
            tercile_rounds: 30,
            users_per_round: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzePlan {
    pub trace: PathBuf,
    pub config: AnalyzeConfig,
    /// The tercile study runs only with a seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenPlan {
    pub config: TraceEnsembleConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatePlan {
    pub config: SimulationConfig,
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub models: Vec<ModelKind>,
    /// Hyperparameters shared by all models; `kind` and `seed` are replaced.
    pub model: ModelSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { models: ModelKind::ALL.to_vec(), model: ModelSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    /// Output directory of a `simulate` run.
    pub runs_dir: PathBuf,
    pub simulation: SimulationConfig,
    pub runs: usize,
    pub config: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignPlan {
    pub width: f64,
    pub height: f64,
    pub optimum: (f64, f64),
    pub base_rtt: f64,
    pub slope: f64,
    pub noise_sd: f64,
    pub search: AlignConfig,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPlan {
    /// Output directory of a `train` run.
    pub simulation: Option<PathBuf>,
    /// Output directory of an `experiment` run.
    pub experiment: Option<PathBuf>,
}

/// Parses JSON, naming the offending key path on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Failure::Validation(format!("{}: at `{path}`: {}", origin.display(), e.into_inner()))
    })
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", p.display())))?;
            parse_json(&text, p)
        }
    }
}

pub fn require_seed(seed: Option<u64>, what: &str) -> Result<u64, Failure> {
    seed.ok_or_else(|| Failure::Validation(format!("{what} needs an explicit --seed")))
}

/// Absolute form of an input path, so replays work from any directory.
pub fn absolute(path: &Path) -> Result<PathBuf, Failure> {
    fs::canonicalize(path).map_err(|e| Failure::Validation(format!("cannot access {}: {e}", path.display())))
}
