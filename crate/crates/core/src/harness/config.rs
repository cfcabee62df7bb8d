//! TOML experiment configuration. The schema is documented in the README;
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clicks::{ClickModel, SdbnKind};
use crate::eval::{EvalLabels, MetricConfig};
use crate::federation::{FederationConfig, Strategy};
use crate::partition::ClickFamily;
use crate::ranker::{Activation, Architecture};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub click: ClickConfig,
    #[serde(default)]
    pub ranker: RankerConfig,
    #[serde(default)]
    pub pdgd: PdgdConfig,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// One entry per fold; offline evaluation uses each fold's test file.
    Letor {
        feature_count: usize,
        folds: Vec<FoldPaths>,
        relevance_scale: Option<u8>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// Feature file plus four intent qrels; evaluated on the training
    /// queries across all intents.
    Intent {
        feature_count: usize,
        features: PathBuf,
        qrels: Vec<PathBuf>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Synthetic {
        queries: usize,
        docs_per_query: usize,
        feature_count: usize,
        #[serde(default = "five")]
        grade_scale: u8,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
        /// Test queries per fold; defaults to `queries`.
        test_queries: Option<usize>,
        #[serde(default = "one")]
        folds: usize,
    },
    SyntheticIntent {
        queries: usize,
        docs_per_query: usize,
        feature_count: usize,
        #[serde(default = "three")]
        relevant_per_query: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn five() -> u8 {
    5
}
fn default_noise() -> f64 {
    0.5
}

impl DataConfig {
    pub fn feature_count(&self) -> usize {
        match *self {
            DataConfig::Letor { feature_count, .. }
            | DataConfig::Intent { feature_count, .. }
            | DataConfig::Synthetic { feature_count, .. }
            | DataConfig::SyntheticIntent { feature_count, .. } => feature_count,
        }
    }

    pub fn num_folds(&self) -> usize {
        match self {
            DataConfig::Letor { folds, .. } => folds.len(),
            DataConfig::Synthetic { folds, .. } => *folds,
            _ => 1,
        }
    }

    pub fn eval_labels(&self) -> EvalLabels {
        match self {
            DataConfig::Intent { .. } | DataConfig::SyntheticIntent { .. } => EvalLabels::Intents,
            _ => EvalLabels::Graded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Iid,
    /// Per-query shuffled intents, one per client.
    Intent,
    /// All clients share the any-intent labels.
    IntentMerged,
    LabelSkew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClickSkew {
    #[default]
    None,
    Sdbn,
    Pbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub scheme: Scheme,
    pub clients: usize,
    pub labels_per_client: usize,
    pub click_skew: ClickSkew,
    /// Draw a click model from the skew set at every interaction instead of
    /// fixing one per client.
    pub click_skew_iid: bool,
    /// Queries per round for each client; overrides `interactions_per_round`.
    pub quantities: Option<Vec<usize>>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            scheme: Scheme::Iid,
            clients: 5,
            labels_per_client: 1,
            click_skew: ClickSkew::None,
            click_skew_iid: false,
            quantities: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClickConfig {
    pub family: ClickFamily,
    pub instantiation: SdbnKind,
    pub eta: f64,
}

impl Default for ClickConfig {
    fn default() -> Self {
        ClickConfig {
            family: ClickFamily::Sdbn,
            instantiation: SdbnKind::Perfect,
            eta: 1.0,
        }
    }
}

impl ClickConfig {
    pub fn model(&self, scale: usize) -> Result<ClickModel, HarnessError> {
        let m = match self.family {
            ClickFamily::Sdbn => ClickModel::sdbn(self.instantiation, scale),
            ClickFamily::Pbm => ClickModel::pbm(self.eta, scale),
        };
        m.map_err(|e| HarnessError::Config(format!("click: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    #[default]
    Linear,
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankerConfig {
    pub kind: RankerKind,
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            kind: RankerKind::Linear,
            hidden: 64,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdgdConfig {
    /// Defaults to 0.1 for linear and 0.01 for neural rankers.
    pub learning_rate: Option<f64>,
    pub cutoff: usize,
}

impl Default for PdgdConfig {
    fn default() -> Self {
        PdgdConfig {
            learning_rate: None,
            cutoff: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    #[default]
    FedAvg,
    FedProx,
    FedPer,
    DataShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub rounds: usize,
    pub interactions_per_round: usize,
    pub strategy: StrategyName,
    pub mu: f64,
    pub split_index: Option<usize>,
    pub share_fraction: f64,
    pub share_alpha: f64,
    pub warmup: usize,
    /// Worker threads for client rounds; 0 uses all cores. Never affects
    /// results.
    pub workers: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            rounds: 1000,
            interactions_per_round: 5,
            strategy: StrategyName::FedAvg,
            mu: 0.01,
            split_index: None,
            share_fraction: 0.1,
            share_alpha: 1.0,
            warmup: 500,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub cutoff: usize,
    pub gamma: f64,
    pub stride: usize,
    pub checkpoint_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let m = MetricConfig::default();
        EvalConfig {
            cutoff: m.cutoff,
            gamma: m.gamma,
            stride: m.stride,
            checkpoint_stride: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Loads a config file; relative data paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.data {
            DataConfig::Letor { folds, .. } => {
                for f in folds {
                    fix(&mut f.train);
                    fix(&mut f.test);
                }
            }
            DataConfig::Intent {
                features, qrels, ..
            } => {
                fix(features);
                qrels.iter_mut().for_each(fix);
            }
            _ => {}
        }
    }

    fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds: values must be unique");
        }
        if self.data.feature_count() == 0 {
            return bad("data.feature_count: must be positive");
        }
        if self.data.num_folds() == 0 {
            return bad("data.folds: at least one fold is required");
        }
        if let DataConfig::Intent { qrels, .. } = &self.data {
            if qrels.len() != crate::datasets::NUM_INTENTS {
                return bad("data.qrels: exactly four intent qrels files are required");
            }
        }
        if self.partition.clients == 0 {
            return bad("partition.clients: must be positive");
        }
        if self.federation.rounds == 0 {
            return bad("federation.rounds: must be at least 1");
        }
        if self.pdgd.cutoff == 0 || self.eval.cutoff == 0 {
            return bad("cutoff: must be at least 1");
        }
        if !(self.eval.gamma > 0.0 && self.eval.gamma <= 1.0) {
            return bad("eval.gamma: must be in (0, 1]");
        }
        if self.federation.mu < 0.0 {
            return bad("federation.mu: must be non-negative");
        }
        for (key, v) in [
            ("federation.share_fraction", self.federation.share_fraction),
            ("federation.share_alpha", self.federation.share_alpha),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(HarnessError::Config(format!("{key}: must be in [0, 1]")));
            }
        }
        if matches!(self.partition.scheme, Scheme::Intent | Scheme::IntentMerged)
            && self.data.eval_labels() != EvalLabels::Intents
        {
            return bad("partition.scheme: intent schemes need intent data");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let features = self.data.feature_count();
        match self.ranker.kind {
            RankerKind::Linear => Architecture::Linear { features },
            RankerKind::Neural => Architecture::Neural {
                features,
                hidden: self.ranker.hidden,
                activation: self.ranker.activation,
            },
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.pdgd.learning_rate.unwrap_or(match self.ranker.kind {
            RankerKind::Linear => 0.1,
            RankerKind::Neural => 0.01,
        })
    }

    pub fn strategy(&self) -> Strategy {
        let f = &self.federation;
        match f.strategy {
            StrategyName::FedAvg => Strategy::FedAvg,
            StrategyName::FedProx => Strategy::FedProx { mu: f.mu },
            StrategyName::FedPer => Strategy::FedPer {
                split_index: f.split_index,
            },
            StrategyName::DataShare => Strategy::DataShare {
                fraction: f.share_fraction,
                alpha: f.share_alpha,
                warmup: f.warmup,
            },
        }
    }

    pub fn federation_config(&self, seed: u64, click: ClickModel) -> FederationConfig {
        FederationConfig {
            arch: self.architecture(),
            click,
            interactions_per_round: self.federation.interactions_per_round,
            rounds: self.federation.rounds,
            strategy: self.strategy(),
            learning_rate: self.learning_rate(),
            cutoff: self.pdgd.cutoff,
            seed,
            metrics: MetricConfig {
                cutoff: self.eval.cutoff,
                gamma: self.eval.gamma,
                stride: self.eval.stride,
            },
            eval_labels: self.data.eval_labels(),
            checkpoint_stride: self.eval.checkpoint_stride,
        }
    }
}
