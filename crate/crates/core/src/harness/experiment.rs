//! Runs every (fold, seed) of a config and writes one directory per run:
//!
//! ```text
//! <output_dir>/<name>/fold<f>_seed<s>/
//!     manifest.json
//!     metrics.csv
//!     checkpoints/round_000100.ckpt
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::clicks::ClickModel;
use crate::datasets::{load_intent_collection, parse_letor, Dataset, FoldRole, MinMaxScaler};
use crate::federation::{run_federation, FederationError, Strategy};
use crate::partition::{
    partition_iid, partition_intent_iid, partition_type1, partition_type2, partition_type3,
    partition_type4, PartitionError, PartitionPlan,
};
use crate::ranker::RankerParams;

use super::config::{ClickSkew, DataConfig, ExperimentConfig, Scheme};
use super::synthetic::{make_synthetic_dataset, make_synthetic_intent_dataset, SynthSpec};
use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

/// Everything needed to reproduce one run, plus its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub fold: usize,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Conventions in effect that a reader could not infer from the config.
    pub design: BTreeMap<String, String>,
    /// Default click model with every parameter resolved.
    pub click_model: ClickModel,
    pub status: RunStatus,
    pub failed_round: Option<usize>,
    pub error: Option<String>,
    pub final_offline_ndcg: Option<f64>,
    pub final_online: Option<f64>,
    pub impressions: Option<u64>,
    pub wall_time_secs: Option<f64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn design_flags(config: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut set = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    set("ndcg_gain", "2^grade - 1".into());
    set("ndcg_discount", "log2(rank + 1)".into());
    set("ndcg_zero_ideal", "1.0".into());
    set("online_gamma", config.eval.gamma.to_string());
    set("online_stream", "round-major, client-id order".into());
    set("pbm_attraction", "sdbn perfect column".into());
    set("intent_relevance", "qrels grade > 0".into());
    set(
        "label_skew_dealing",
        "shuffled combinations, round-robin".into(),
    );
    set(
        "fedper_offline",
        "mean over personalized client models".into(),
    );
    set("rng", "chacha8 per (seed, stream, client, round)".into());
    m
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| data_err(path, e))
}

fn read_letor(path: &Path, feature_count: usize) -> Result<Dataset, HarnessError> {
    parse_letor(open(path)?, feature_count).map_err(|e| data_err(path, e))
}

fn normalize(
    train: Dataset,
    test: Option<Dataset>,
) -> Result<(Dataset, Option<Dataset>), HarnessError> {
    let scaler = MinMaxScaler::fit(&train);
    let norm = |d: &Dataset| {
        scaler
            .apply(d)
            .map_err(|e| HarnessError::Data(e.to_string()))
    };
    let test = test.as_ref().map(norm).transpose()?;
    Ok((norm(&train)?, test))
}

/// Loads the training and evaluation sets of one fold. Intent collections
/// are evaluated on their own queries across all four intents.
pub fn load_fold(
    config: &ExperimentConfig,
    fold: usize,
) -> Result<(Dataset, Dataset), HarnessError> {
    match &config.data {
        DataConfig::Letor {
            feature_count,
            folds,
            relevance_scale,
            normalize: norm,
        } => {
            let paths = folds
                .get(fold)
                .ok_or_else(|| HarnessError::Config(format!("data.folds: no fold {fold}")))?;
            let train = read_letor(&paths.train, *feature_count)?;
            let test = read_letor(&paths.test, *feature_count)?.with_role(FoldRole::Test);
            let scale = relevance_scale.unwrap_or(train.relevance_scale.max(test.relevance_scale));
            let rescale = |d: Dataset| {
                d.with_relevance_scale(scale)
                    .map_err(|e| HarnessError::Data(e.to_string()))
            };
            let (train, test) = (rescale(train)?, rescale(test)?);
            if *norm {
                let (train, test) = normalize(train, Some(test))?;
                Ok((train, test.expect("test set was provided")))
            } else {
                Ok((train, test))
            }
        }
        DataConfig::Intent {
            feature_count,
            features,
            qrels,
            normalize: norm,
        } => {
            let readers = qrels
                .iter()
                .map(|p| open(p))
                .collect::<Result<Vec<_>, _>>()?;
            let (ds, stats) = load_intent_collection(open(features)?, *feature_count, readers)
                .map_err(|e| data_err(features, e))?;
            log::info!(
                "intent collection: relevant per intent {:?}",
                stats.relevant_per_intent
            );
            let ds = if *norm { normalize(ds, None)?.0 } else { ds };
            Ok((ds.clone(), ds))
        }
        DataConfig::Synthetic {
            queries,
            docs_per_query,
            feature_count,
            grade_scale,
            noise,
            seed,
            test_queries,
            folds: _,
        } => {
            let mut spec = SynthSpec {
                num_queries: *queries,
                docs_per_query: *docs_per_query,
                feature_count: *feature_count,
                grade_scale: *grade_scale,
                noise: *noise,
                seed: *seed,
            };
            let train = make_synthetic_dataset(&spec, 2 * fold as u64, FoldRole::Train);
            spec.num_queries = test_queries.unwrap_or(*queries);
            let test = make_synthetic_dataset(&spec, 2 * fold as u64 + 1, FoldRole::Test);
            Ok((train, test))
        }
        DataConfig::SyntheticIntent {
            queries,
            docs_per_query,
            feature_count,
            relevant_per_query,
            noise,
            seed,
        } => {
            let spec = SynthSpec {
                num_queries: *queries,
                docs_per_query: *docs_per_query,
                feature_count: *feature_count,
                grade_scale: 2,
                noise: *noise,
                seed: *seed,
            };
            let ds = make_synthetic_intent_dataset(&spec, *relevant_per_query);
            Ok((ds.clone(), ds))
        }
    }
}

fn partition_err(e: PartitionError) -> HarnessError {
    match e {
        PartitionError::NoIntents => HarnessError::Data(e.to_string()),
        other => HarnessError::Config(format!("partition: {other}")),
    }
}

/// Builds the client plan for one run; `seed` drives every shuffle.
pub fn build_plan(
    config: &ExperimentConfig,
    train: &Dataset,
    seed: u64,
) -> Result<PartitionPlan, HarnessError> {
    let p = &config.partition;
    let plan = match p.scheme {
        Scheme::Iid => partition_iid(train, p.clients),
        Scheme::Intent => partition_type1(train, p.clients, seed),
        Scheme::IntentMerged => partition_intent_iid(train, p.clients),
        Scheme::LabelSkew => partition_type2(train, p.labels_per_client, p.clients, seed),
    }
    .map_err(partition_err)?;

    let family = match p.click_skew {
        ClickSkew::None => None,
        ClickSkew::Sdbn => Some(crate::partition::ClickFamily::Sdbn),
        ClickSkew::Pbm => Some(crate::partition::ClickFamily::Pbm),
    };
    let plan = match family {
        Some(f) => {
            let models =
                partition_type3(f, train.relevance_scale as usize).map_err(partition_err)?;
            plan.with_click_skew(models, p.click_skew_iid)
                .map_err(partition_err)?
        }
        None => plan,
    };
    match &p.quantities {
        Some(q) => {
            let q = partition_type4(q, plan.num_clients()).map_err(partition_err)?;
            plan.with_quantities(&q).map_err(partition_err)
        }
        None => Ok(plan),
    }
}

/// Writes the plan of one (fold, seed) as JSON.
pub fn export_partition(
    config: &ExperimentConfig,
    fold: usize,
    seed: u64,
    out: &Path,
) -> Result<(), HarnessError> {
    let (train, _) = load_fold(config, fold)?;
    let plan = build_plan(config, &train, seed)?;
    let manifest = plan.manifest(&train);
    let file = BufWriter::new(File::create(out)?);
    serde_json::to_writer_pretty(file, &manifest).map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_checkpoint(path: &Path, params: &RankerParams) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    params
        .write_checkpoint(&mut w)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    w.flush()?;
    Ok(())
}

/// Runs one (fold, seed) into `run_dir`. A failing run still leaves a
/// manifest naming the failed round.
pub fn run_single(
    config: &ExperimentConfig,
    fold: usize,
    seed: u64,
    train: &Dataset,
    eval_set: &Dataset,
    run_dir: &Path,
) -> Result<RunManifest, HarnessError> {
    let click = config.click.model(train.relevance_scale as usize)?;
    let plan = build_plan(config, train, seed)?;
    let fed = config.federation_config(seed, click.clone());
    fed.validate(&plan)
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    fs::create_dir_all(run_dir)?;
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let mut manifest = RunManifest {
        config: config.clone(),
        fold,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: unix_now(),
        finished_unix: None,
        design: design_flags(config),
        click_model: click,
        status: RunStatus::Running,
        failed_round: None,
        error: None,
        final_offline_ndcg: None,
        final_online: None,
        impressions: None,
        wall_time_secs: None,
    };
    write_json(&manifest_path, &manifest)?;

    let result = run_federation(&fed, &plan, train, eval_set);
    manifest.finished_unix = Some(unix_now());
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            if let FederationError::AtRound { round, .. } = &e {
                manifest.failed_round = Some(*round);
            }
            manifest.error = Some(e.to_string());
            write_json(&manifest_path, &manifest)?;
            return Err(HarnessError::Runtime(format!("{}: {e}", run_dir.display())));
        }
    };

    fs::write(run_dir.join(METRICS_FILE), result.metrics_csv())?;
    if !result.checkpoints.is_empty() || result.personal.is_some() {
        let dir = run_dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        for (round, params) in &result.checkpoints {
            write_checkpoint(&dir.join(format!("round_{round:06}.ckpt")), params)?;
        }
        if let (Some(personal), Strategy::FedPer { .. }) = (&result.personal, fed.strategy) {
            let split = result.final_params.theta.len() - personal.first().map_or(0, Vec::len);
            for (c, layers) in personal.iter().enumerate() {
                let mut p = result.final_params.clone();
                p.theta[split..].copy_from_slice(layers);
                write_checkpoint(&dir.join(format!("client_{c:03}_final.ckpt")), &p)?;
            }
        }
    }

    manifest.status = RunStatus::Completed;
    manifest.final_offline_ndcg = result.final_offline();
    manifest.final_online = Some(result.final_online());
    manifest.impressions = Some(result.impressions);
    manifest.wall_time_secs = Some(result.wall_time_secs);
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))
}

pub fn run_dir_for(config: &ExperimentConfig, fold: usize, seed: u64) -> PathBuf {
    config
        .output_dir
        .join(&config.name)
        .join(format!("fold{fold}_seed{seed}"))
}

/// Runs every (fold, seed) of the config file and returns the run
/// directories. Failed runs keep their manifests; the others complete.
pub fn run_experiment(
    config_path: &Path,
    workers: Option<usize>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let config = ExperimentConfig::load(config_path)?;
    run_config(&config, workers)
}

pub fn run_config(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let pool = thread_pool(workers.unwrap_or(config.federation.workers))?;
    let mut dirs = Vec::new();
    let mut failures = Vec::new();
    for fold in 0..config.data.num_folds() {
        let (train, eval_set) = load_fold(config, fold)?;
        for &seed in &config.seeds {
            let dir = run_dir_for(config, fold, seed);
            log::info!("run {} fold {fold} seed {seed}", config.name);
            match pool.install(|| run_single(config, fold, seed, &train, &eval_set, &dir)) {
                Ok(_) => dirs.push(dir),
                Err(HarnessError::Runtime(msg)) => {
                    log::error!("{msg}");
                    failures.push(msg);
                }
                Err(e) => return Err(e),
            }
        }
    }
    if failures.is_empty() {
        Ok(dirs)
    } else {
        Err(HarnessError::Runtime(format!(
            "{} of {} runs failed: {}",
            failures.len(),
            failures.len() + dirs.len(),
            failures.join("; ")
        )))
    }
}

/// Re-executes the run a manifest describes, writing into `out_dir`
/// (default: the manifest's own directory).
pub fn rerun_from_manifest(
    manifest_path: &Path,
    out_dir: Option<&Path>,
    workers: Option<usize>,
) -> Result<RunManifest, HarnessError> {
    let old = RunManifest::load(manifest_path)?;
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .to_path_buf(),
    };
    let (train, eval_set) = load_fold(&old.config, old.fold)?;
    let pool = thread_pool(workers.unwrap_or(old.config.federation.workers))?;
    pool.install(|| run_single(&old.config, old.fold, old.seed, &train, &eval_set, &dir))
}
