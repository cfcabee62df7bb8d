//! Federated training loop: broadcast, local PDGD rounds, weighted averaging.
//!
//! Each client draws from its own random stream, keyed by
//! `(master seed, client id, round)`, so client rounds can run on any
//! number of workers and still produce identical results.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicks::ClickModel;
use crate::datasets::Dataset;
use crate::eval::{evaluate, EvalError, EvalLabels, MetricConfig, OnlineAccumulator};
use crate::partition::{pick_click_model, ClientPlan, LocalQuery, PartitionError, PartitionPlan};
use crate::pdgd::{gradient_step, pdgd_interaction, PdgdError};
use crate::ranker::{Architecture, RankerParams};
use crate::rng::{self, SimRng};

/// FedProx strengths swept in the mitigation experiments.
pub const FEDPROX_MUS: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error("client updates carry zero interactions")]
    ZeroInteractions,
    #[error("client update has {got} parameters, expected {expected}")]
    ParamMismatch { expected: usize, got: usize },
    #[error("FedPer requires a neural ranker")]
    FedPerLinear,
    #[error("shared set is empty (fraction {0} of the training queries)")]
    EmptySharedSet(f64),
    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<FederationError>,
    },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Pdgd(#[from] PdgdError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedProx {
        mu: f64,
    },
    FedPer {
        /// First personal coordinate; defaults to the input->hidden boundary.
        split_index: Option<usize>,
    },
    DataShare {
        fraction: f64,
        alpha: f64,
        warmup: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub arch: Architecture,
    /// Click model for clients without an explicit assignment.
    pub click: ClickModel,
    /// `B`: local interactions per round unless a client overrides it.
    pub interactions_per_round: usize,
    pub rounds: usize,
    pub strategy: Strategy,
    pub learning_rate: f64,
    pub cutoff: usize,
    pub seed: u64,
    pub metrics: MetricConfig,
    pub eval_labels: EvalLabels,
    /// Rounds between parameter checkpoints; 0 disables them.
    pub checkpoint_stride: usize,
}

impl FederationConfig {
    pub fn validate(&self, plan: &PartitionPlan) -> Result<(), FederationError> {
        let bad = |m: String| Err(FederationError::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.interactions_per_round == 0
            && plan.clients.iter().any(|c| c.queries_per_round.is_none())
        {
            return bad("interactions_per_round must be at least 1".into());
        }
        if self.cutoff == 0 || self.metrics.cutoff == 0 {
            return bad("cutoff must be at least 1".into());
        }
        if !(self.metrics.gamma > 0.0 && self.metrics.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.metrics.gamma));
        }
        if !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite".into());
        }
        match self.strategy {
            Strategy::FedProx { mu } if mu.is_nan() || mu < 0.0 => bad(format!("mu {mu} must be >= 0")),
            Strategy::FedPer { split_index } => {
                let split = fedper_split(self.arch, split_index)?;
                if split == 0 || split >= self.arch.param_count() {
                    return bad(format!("split_index {split} outside the parameter vector"));
                }
                Ok(())
            }
            Strategy::DataShare {
                fraction, alpha, ..
            } if !(0.0..=1.0).contains(&fraction) || !(0.0..=1.0).contains(&alpha) => {
                bad("share fraction and alpha must be in [0, 1]".into())
            }
            _ => Ok(()),
        }
    }
}

fn fedper_split(arch: Architecture, split_index: Option<usize>) -> Result<usize, FederationError> {
    let default = arch.default_split().ok_or(FederationError::FedPerLinear)?;
    Ok(split_index.unwrap_or(default))
}

/// What a client sends back after one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    /// Full local parameters, or only the base layers under FedPer.
    pub theta: Vec<f64>,
    pub interactions: usize,
    /// nDCG of every impression, in order.
    pub online: Vec<f64>,
}

impl ClientUpdate {
    pub fn payload_len(&self) -> usize {
        self.theta.len()
    }
}

/// `theta + lr * (grad - mu * (theta - global))`; a plain PDGD step when
/// `mu == 0`.
pub fn fedprox_local_step(
    params: &RankerParams,
    global: &RankerParams,
    gradient: Option<&[f64]>,
    learning_rate: f64,
    mu: f64,
) -> RankerParams {
    if mu == 0.0 {
        return match gradient {
            Some(g) => gradient_step(params, g, learning_rate),
            None => params.clone(),
        };
    }
    let mut next = params.clone();
    for i in 0..next.theta.len() {
        let g = gradient.map_or(0.0, |g| g[i]);
        let prox = mu * (params.theta[i] - global.theta[i]);
        next.theta[i] = params.theta[i] + learning_rate * (g - prox);
    }
    next
}

/// Shared inputs of one round.
pub struct RoundContext<'a> {
    pub config: &'a FederationConfig,
    pub dataset: &'a Dataset,
    pub round: usize,
}

/// Runs `n` sequential PDGD interactions on queries drawn uniformly from
/// `pool`, pulling towards `anchor` when `mu > 0`.
#[allow(clippy::too_many_arguments)]
fn local_training(
    start: RankerParams,
    anchor: &RankerParams,
    client: &ClientPlan,
    dataset: &Dataset,
    config: &FederationConfig,
    mu: f64,
    n: usize,
    rng: &mut SimRng,
) -> Result<(RankerParams, Vec<f64>), FederationError> {
    let mut params = start;
    let mut online = Vec::with_capacity(n);
    if n > 0 && client.pool.is_empty() {
        return Err(PartitionError::EmptyPool(client.id).into());
    }
    for _ in 0..n {
        let query: &LocalQuery = &client.pool[rng.random_range(0..client.pool.len())];
        let click = pick_click_model(&client.click, &config.click, rng);
        let view = query.view(dataset);
        let interaction = pdgd_interaction(&params, &view, click, config.cutoff, rng)?;
        online.push(interaction.ndcg);
        params = fedprox_local_step(
            &params,
            anchor,
            interaction.gradient.as_deref(),
            config.learning_rate,
            mu,
        );
    }
    Ok((params, online))
}

/// One client's local round starting from the broadcast parameters.
pub fn client_round(
    global: &RankerParams,
    client: &ClientPlan,
    ctx: &RoundContext<'_>,
) -> Result<ClientUpdate, FederationError> {
    let config = ctx.config;
    let n = client
        .queries_per_round
        .unwrap_or(config.interactions_per_round);
    let mu = match config.strategy {
        Strategy::FedProx { mu } => mu,
        _ => 0.0,
    };
    let mut rng = rng::client_stream(config.seed, client.id, ctx.round);
    let (params, online) = local_training(
        global.clone(),
        global,
        client,
        ctx.dataset,
        config,
        mu,
        n,
        &mut rng,
    )?;
    Ok(ClientUpdate {
        client: client.id,
        theta: params.theta,
        interactions: n,
        online,
    })
}

/// FedPer round: global base layers plus the client's own personal layers.
/// Returns the base-only update and the new personal layers.
pub fn fedper_round(
    global_base: &[f64],
    personal: &[f64],
    client: &ClientPlan,
    ctx: &RoundContext<'_>,
) -> Result<(ClientUpdate, Vec<f64>), FederationError> {
    let config = ctx.config;
    let split = match config.strategy {
        Strategy::FedPer { split_index } => fedper_split(config.arch, split_index)?,
        _ => fedper_split(config.arch, None)?,
    };
    let mut theta = global_base.to_vec();
    theta.extend_from_slice(personal);
    let start = RankerParams::new(config.arch, theta)
        .map_err(|e| FederationError::Config(e.to_string()))?;
    let n = client
        .queries_per_round
        .unwrap_or(config.interactions_per_round);
    let mut rng = rng::client_stream(config.seed, client.id, ctx.round);
    let (params, online) = local_training(
        start.clone(),
        &start,
        client,
        ctx.dataset,
        config,
        0.0,
        n,
        &mut rng,
    )?;
    let mut base = params.theta;
    let personal = base.split_off(split);
    Ok((
        ClientUpdate {
            client: client.id,
            theta: base,
            interactions: n,
            online,
        },
        personal,
    ))
}

/// Interaction-weighted mean of the client parameter vectors.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<Vec<f64>, FederationError> {
    let first = updates.first().ok_or(FederationError::NoUpdates)?;
    let len = first.theta.len();
    if let Some(u) = updates.iter().find(|u| u.theta.len() != len) {
        return Err(FederationError::ParamMismatch {
            expected: len,
            got: u.theta.len(),
        });
    }
    let total: usize = updates.iter().map(|u| u.interactions).sum();
    if total == 0 {
        return Err(FederationError::ZeroInteractions);
    }
    if updates.len() == 1 {
        return Ok(first.theta.clone());
    }
    let mut out = vec![0.0; len];
    for u in updates {
        let w = u.interactions as f64 / total as f64;
        for (o, t) in out.iter_mut().zip(&u.theta) {
            *o += w * t;
        }
    }
    Ok(out)
}

/// Plain sequential PDGD on one pool; interaction `t` uses `stream(t)`.
pub fn centralized_pdgd(
    start: RankerParams,
    pool: &[LocalQuery],
    dataset: &Dataset,
    config: &FederationConfig,
    steps: usize,
    stream: impl Fn(usize) -> SimRng,
) -> Result<RankerParams, FederationError> {
    let client = ClientPlan {
        id: 0,
        pool: std::sync::Arc::new(pool.to_vec()),
        click: crate::partition::ClickAssignment::Default,
        queries_per_round: None,
        label_set: None,
    };
    let mut params = start;
    for t in 0..steps {
        let mut rng = stream(t);
        let anchor = params.clone();
        params = local_training(params, &anchor, &client, dataset, config, 0.0, 1, &mut rng)?.0;
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedSet {
    /// Query indices of `G` in the training dataset.
    pub queries: Vec<usize>,
    pub warm_start: RankerParams,
}

/// Draws `fraction` of the training queries as the shared set and warms a
/// model up on it with centralized PDGD.
pub fn datashare_prepare(
    dataset: &Dataset,
    fraction: f64,
    warmup: usize,
    start: RankerParams,
    config: &FederationConfig,
) -> Result<SharedSet, FederationError> {
    let n = dataset.queries.len();
    let size = (fraction * n as f64).round() as usize;
    if size == 0 {
        return Err(FederationError::EmptySharedSet(fraction));
    }
    let mut rng = rng::stream(config.seed, rng::tag::SHARED_SET, 0, 0);
    let mut queries: Vec<usize> = sample(&mut rng, n, size.min(n)).into_vec();
    queries.sort_unstable();
    queries.retain(|&q| !dataset.queries[q].is_empty());
    if queries.is_empty() {
        return Err(FederationError::EmptySharedSet(fraction));
    }
    let pool: Vec<LocalQuery> = queries
        .iter()
        .map(|&q| LocalQuery::full(dataset, q))
        .collect();
    let seed = config.seed;
    let warm_start = centralized_pdgd(start, &pool, dataset, config, warmup, |t| {
        rng::stream(seed, rng::tag::WARMUP, t as u64, 0)
    })?;
    Ok(SharedSet {
        queries,
        warm_start,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub offline_ndcg: Option<f64>,
    pub online_cumulative: f64,
    /// Discounted online contribution of each client this round.
    pub client_increments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub final_params: RankerParams,
    /// FedPer only: each client's personal layers after the last round.
    pub personal: Option<Vec<Vec<f64>>>,
    pub checkpoints: Vec<(usize, RankerParams)>,
    pub impressions: u64,
    pub seed: u64,
    pub wall_time_secs: f64,
}

impl RunResult {
    pub fn final_offline(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.offline_ndcg)
    }

    pub fn final_online(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.online_cumulative)
    }

    /// `round,offline_ndcg,online_cumulative,client_0,...`; floats in
    /// shortest round-trip form, empty cells for rounds without offline
    /// evaluation.
    pub fn metrics_csv(&self) -> String {
        let clients = self
            .records
            .first()
            .map_or(0, |r| r.client_increments.len());
        let mut out = String::from("round,offline_ndcg,online_cumulative");
        for c in 0..clients {
            out += &format!(",client_{c}");
        }
        out.push('\n');
        for r in &self.records {
            out += &r.round.to_string();
            out.push(',');
            if let Some(v) = r.offline_ndcg {
                out += &v.to_string();
            }
            out += &format!(",{}", r.online_cumulative);
            for v in &r.client_increments {
                out += &format!(",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `config.rounds` rounds of broadcast, client updates and averaging.
///
/// Offline nDCG is measured on `eval_set` every `metrics.stride` rounds and
/// after the last round. Online nDCG accumulates over one impression stream
/// ordered by round, then client id.
pub fn run_federation(
    config: &FederationConfig,
    plan: &PartitionPlan,
    train: &Dataset,
    eval_set: &Dataset,
) -> Result<RunResult, FederationError> {
    config.validate(plan)?;
    let started = Instant::now();

    let mut init_rng = rng::stream(config.seed, rng::tag::INIT, 0, 0);
    let mut global = RankerParams::init(config.arch, &mut init_rng);

    let plan = match config.strategy {
        Strategy::DataShare {
            fraction,
            alpha,
            warmup,
        } => {
            let shared = datashare_prepare(train, fraction, warmup, global, config)?;
            global = shared.warm_start;
            plan.clone()
                .augment_with_shared(train, &shared.queries, alpha, config.seed)
        }
        _ => plan.clone(),
    };
    plan.validate()?;

    let split = match config.strategy {
        Strategy::FedPer { split_index } => Some(fedper_split(config.arch, split_index)?),
        _ => None,
    };
    let mut personal: Option<Vec<Vec<f64>>> =
        split.map(|s| vec![global.theta[s..].to_vec(); plan.clients.len()]);

    let mut online = OnlineAccumulator::new(config.metrics.gamma);
    let mut records = Vec::with_capacity(config.rounds);
    let mut checkpoints = Vec::new();
    let stride = config.metrics.stride.max(1);

    for round in 0..config.rounds {
        let at = |e: FederationError| FederationError::AtRound {
            round: round + 1,
            source: Box::new(e),
        };
        let ctx = RoundContext {
            config,
            dataset: train,
            round,
        };

        let updates: Vec<ClientUpdate> = match (split, personal.as_mut()) {
            (Some(split), Some(personal)) => {
                let base = &global.theta[..split];
                let results: Vec<(ClientUpdate, Vec<f64>)> = plan
                    .clients
                    .par_iter()
                    .zip(personal.par_iter())
                    .map(|(c, p)| fedper_round(base, p, c, &ctx))
                    .collect::<Result<_, _>>()
                    .map_err(at)?;
                let mut updates = Vec::with_capacity(results.len());
                for ((u, p), slot) in results.into_iter().zip(personal.iter_mut()) {
                    *slot = p;
                    updates.push(u);
                }
                updates
            }
            _ => plan
                .clients
                .par_iter()
                .map(|c| client_round(&global, c, &ctx))
                .collect::<Result<_, _>>()
                .map_err(at)?,
        };

        let mut increments = Vec::with_capacity(updates.len());
        for u in &updates {
            increments.push(u.online.iter().map(|&v| online.push(v)).sum::<f64>());
        }

        let aggregated = fedavg_aggregate(&updates).map_err(at)?;
        match split {
            Some(s) => global.theta[..s].copy_from_slice(&aggregated),
            None => global.theta = aggregated,
        }

        let done = round + 1;
        let offline = if done % stride == 0 || done == config.rounds {
            Some(offline_score(config, &global, personal.as_deref(), split, eval_set).map_err(at)?)
        } else {
            None
        };
        if config.checkpoint_stride > 0
            && (done % config.checkpoint_stride == 0 || done == config.rounds)
        {
            checkpoints.push((done, global.clone()));
        }
        records.push(RoundRecord {
            round: done,
            offline_ndcg: offline,
            online_cumulative: online.value(),
            client_increments: increments,
        });
    }

    Ok(RunResult {
        records,
        final_params: global,
        personal,
        checkpoints,
        impressions: online.impressions(),
        seed: config.seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Under FedPer every client ranks with its own personal layers, so the
/// score is the mean over the clients' personalized models.
fn offline_score(
    config: &FederationConfig,
    global: &RankerParams,
    personal: Option<&[Vec<f64>]>,
    split: Option<usize>,
    eval_set: &Dataset,
) -> Result<f64, FederationError> {
    let k = config.metrics.cutoff;
    match (personal, split) {
        (Some(personal), Some(split)) => {
            let mut total = 0.0;
            for p in personal {
                let mut model = global.clone();
                model.theta[split..].copy_from_slice(p);
                total += evaluate(&model, eval_set, config.eval_labels, k)?;
            }
            Ok(total / personal.len() as f64)
        }
        _ => Ok(evaluate(global, eval_set, config.eval_labels, k)?),
    }
}
