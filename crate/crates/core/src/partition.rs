//! Client data views for the non-IID regimes and their IID baselines.
//!
//! | regime | what differs across clients                | constructor          |
//! |--------|--------------------------------------------|----------------------|
//! | type 1 | document preferences (one intent each)     | [`partition_type1`]  |
//! | type 2 | relevance label distribution               | [`partition_type2`]  |
//! | type 3 | click behaviour                            | [`partition_type3`]  |
//! | type 4 | number of queries per round                | [`partition_type4`]  |
//!
//! Types 3 and 4 only decorate an existing plan (see
//! [`PartitionPlan::with_click_skew`] and [`PartitionPlan::with_quantities`]).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clicks::{ClickError, ClickModel, SdbnKind, PBM_ETAS};
use crate::datasets::{Dataset, Grade, NUM_INTENTS};
use crate::pdgd::QueryView;
use crate::rng::{self, SimRng};

/// Query quantities assigned to clients under quantity skew.
pub const SKEWED_QUANTITIES: [usize; 5] = [1, 3, 5, 7, 9];

/// Per-client quantity in the matching IID baseline.
pub const UNIFORM_QUANTITY: usize = 5;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("dataset has no intent labels")]
    NoIntents,
    #[error("intent partition needs exactly {NUM_INTENTS} clients, got {0}")]
    IntentClients(usize),
    #[error("labels per client k={k} must be in [1, {scale}]")]
    LabelsPerClient { k: usize, scale: usize },
    #[error("relevance label {0} is owned by no client")]
    UnownedLabel(Grade),
    #[error("need at least one client")]
    NoClients,
    #[error("{got} quantities for {clients} clients")]
    QuantityCount { got: usize, clients: usize },
    #[error("queries per round must be at least 1")]
    ZeroQuantity,
    #[error("{got} click models for {clients} clients")]
    ClickCount { got: usize, clients: usize },
    #[error("client {0} has an empty query pool")]
    EmptyPool(usize),
    #[error(transparent)]
    Click(#[from] ClickError),
}

/// One query as a client sees it: a subset of candidates and the labels
/// under the client's own view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalQuery {
    pub query: usize,
    pub docs: Vec<usize>,
    pub labels: Vec<Grade>,
}

impl LocalQuery {
    pub fn full(dataset: &Dataset, query: usize) -> Self {
        let q = &dataset.queries[query];
        LocalQuery {
            query,
            docs: (0..q.len()).collect(),
            labels: q.labels.clone(),
        }
    }

    pub fn view<'a>(&'a self, dataset: &'a Dataset) -> QueryView<'a> {
        let q = &dataset.queries[self.query];
        QueryView {
            query: self.query,
            features: self
                .docs
                .iter()
                .map(|&d| q.docs[d].features.as_slice())
                .collect(),
            labels: &self.labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickAssignment {
    /// Use the run's configured click model.
    Default,
    Fixed(ClickModel),
    /// Draw a model uniformly at every interaction.
    PerInteraction(Vec<ClickModel>),
}

#[derive(Debug, Clone)]
pub struct ClientPlan {
    pub id: usize,
    pub pool: Arc<Vec<LocalQuery>>,
    pub click: ClickAssignment,
    /// Overrides the run's interactions per round when set.
    pub queries_per_round: Option<usize>,
    /// Relevance labels owned under label skew.
    pub label_set: Option<Vec<Grade>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanKind {
    Iid,
    IntentShuffle,
    IntentMerged,
    LabelSkew { k: usize },
}

#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub kind: PlanKind,
    pub clients: Vec<ClientPlan>,
    pub seed: u64,
    /// Type 1 only: per query, `perm[c]` is the intent shown to client `c`.
    pub intent_permutations: Option<Vec<[usize; NUM_INTENTS]>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn with_quantities(mut self, quantities: &[usize]) -> Result<Self, PartitionError> {
        if quantities.len() != self.clients.len() {
            return Err(PartitionError::QuantityCount {
                got: quantities.len(),
                clients: self.clients.len(),
            });
        }
        if quantities.contains(&0) {
            return Err(PartitionError::ZeroQuantity);
        }
        for (c, &q) in self.clients.iter_mut().zip(quantities) {
            c.queries_per_round = Some(q);
        }
        Ok(self)
    }

    /// Non-IID: client `c` always uses `models[c]`. IID: every interaction
    /// draws from all of `models`.
    pub fn with_click_skew(
        mut self,
        models: Vec<ClickModel>,
        iid: bool,
    ) -> Result<Self, PartitionError> {
        if iid {
            for c in &mut self.clients {
                c.click = ClickAssignment::PerInteraction(models.clone());
            }
        } else {
            if models.len() != self.clients.len() {
                return Err(PartitionError::ClickCount {
                    got: models.len(),
                    clients: self.clients.len(),
                });
            }
            for (c, m) in self.clients.iter_mut().zip(models) {
                c.click = ClickAssignment::Fixed(m);
            }
        }
        Ok(self)
    }

    /// Appends a random `alpha` share of the shared queries, with full
    /// candidate lists and graded labels, to every client's pool.
    pub fn augment_with_shared(
        mut self,
        dataset: &Dataset,
        shared: &[usize],
        alpha: f64,
        master_seed: u64,
    ) -> Self {
        let take = ((alpha * shared.len() as f64).round() as usize).min(shared.len());
        if take == 0 {
            return self;
        }
        for c in &mut self.clients {
            let mut rng = rng::stream(master_seed, rng::tag::SHARED_SET, c.id as u64, 1);
            let mut picked: Vec<usize> = shared.choose_multiple(&mut rng, take).copied().collect();
            picked.sort_unstable();
            let mut pool = c.pool.as_ref().clone();
            pool.extend(picked.into_iter().map(|q| LocalQuery::full(dataset, q)));
            c.pool = Arc::new(pool);
        }
        self
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        if self.clients.is_empty() {
            return Err(PartitionError::NoClients);
        }
        for c in &self.clients {
            if c.pool.is_empty() || c.pool.iter().any(|q| q.docs.is_empty()) {
                return Err(PartitionError::EmptyPool(c.id));
            }
        }
        Ok(())
    }

    pub fn manifest(&self, dataset: &Dataset) -> PartitionManifest {
        let clients = self
            .clients
            .iter()
            .map(|c| {
                let queries = c
                    .pool
                    .iter()
                    .map(|lq| dataset.queries[lq.query].query_id.clone())
                    .collect();
                let pairs = matches!(self.kind, PlanKind::LabelSkew { .. }).then(|| {
                    c.pool
                        .iter()
                        .flat_map(|lq| {
                            let q = &dataset.queries[lq.query];
                            lq.docs
                                .iter()
                                .map(|&d| (q.query_id.clone(), q.docs[d].doc_key.clone()))
                        })
                        .collect()
                });
                ClientManifest {
                    id: c.id,
                    queries,
                    pairs,
                    label_set: c.label_set.clone(),
                    click: c.click.clone(),
                    queries_per_round: c.queries_per_round,
                }
            })
            .collect();
        PartitionManifest {
            kind: self.kind,
            seed: self.seed,
            intent_permutations: self.intent_permutations.clone(),
            clients,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientManifest {
    pub id: usize,
    pub queries: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<(String, String)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_set: Option<Vec<Grade>>,
    pub click: ClickAssignment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries_per_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub kind: PlanKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent_permutations: Option<Vec<[usize; NUM_INTENTS]>>,
    pub clients: Vec<ClientManifest>,
}

fn client(id: usize, pool: Arc<Vec<LocalQuery>>) -> ClientPlan {
    ClientPlan {
        id,
        pool,
        click: ClickAssignment::Default,
        queries_per_round: None,
        label_set: None,
    }
}

/// Every client samples from the whole dataset with its graded labels.
pub fn partition_iid(
    dataset: &Dataset,
    num_clients: usize,
) -> Result<PartitionPlan, PartitionError> {
    if num_clients == 0 {
        return Err(PartitionError::NoClients);
    }
    let pool: Arc<Vec<LocalQuery>> = Arc::new(
        (0..dataset.queries.len())
            .filter(|&q| !dataset.queries[q].is_empty())
            .map(|q| LocalQuery::full(dataset, q))
            .collect(),
    );
    Ok(PartitionPlan {
        kind: PlanKind::Iid,
        clients: (0..num_clients).map(|c| client(c, pool.clone())).collect(),
        seed: 0,
        intent_permutations: None,
    })
}

/// Binary labels: relevant iff relevant under any intent.
pub fn merge_intents_iid(dataset: &Dataset) -> Result<Dataset, PartitionError> {
    if !dataset.has_intents() {
        return Err(PartitionError::NoIntents);
    }
    let mut merged = dataset.clone();
    for q in &mut merged.queries {
        let rows = q.intent_labels.take().unwrap_or_default();
        q.labels = rows
            .iter()
            .map(|r| r.iter().any(|&g| g > 0) as Grade)
            .collect();
    }
    merged.relevance_scale = 2;
    Ok(merged)
}

/// IID baseline of the intent regime: all clients share the merged labels.
pub fn partition_intent_iid(
    dataset: &Dataset,
    num_clients: usize,
) -> Result<PartitionPlan, PartitionError> {
    let merged = merge_intents_iid(dataset)?;
    let mut plan = partition_iid(&merged, num_clients)?;
    plan.kind = PlanKind::IntentMerged;
    Ok(plan)
}

/// Shuffles intent ids per query, then client `c` sees intent `perm[c]`.
pub fn partition_type1(
    dataset: &Dataset,
    num_clients: usize,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    let mut rng = rng::stream(seed, rng::tag::PARTITION, 1, 0);
    let perms = dataset
        .queries
        .iter()
        .map(|_| {
            let mut p = [0, 1, 2, 3];
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let mut plan = partition_type1_with_permutations(dataset, num_clients, perms)?;
    plan.seed = seed;
    Ok(plan)
}

pub fn partition_type1_with_permutations(
    dataset: &Dataset,
    num_clients: usize,
    perms: Vec<[usize; NUM_INTENTS]>,
) -> Result<PartitionPlan, PartitionError> {
    if num_clients != NUM_INTENTS {
        return Err(PartitionError::IntentClients(num_clients));
    }
    if !dataset.has_intents() {
        return Err(PartitionError::NoIntents);
    }
    let clients = (0..NUM_INTENTS)
        .map(|c| {
            let pool = dataset
                .queries
                .iter()
                .enumerate()
                .filter(|(_, q)| !q.is_empty())
                .map(|(qi, q)| LocalQuery {
                    query: qi,
                    docs: (0..q.len()).collect(),
                    labels: q.intent_column(perms[qi][c]).unwrap_or_default(),
                })
                .collect();
            client(c, Arc::new(pool))
        })
        .collect();
    Ok(PartitionPlan {
        kind: PlanKind::IntentShuffle,
        clients,
        seed: 0,
        intent_permutations: Some(perms),
    })
}

/// All size-`k` subsets of `0..r` in lexicographic order.
pub fn label_combinations(r: usize, k: usize) -> Vec<Vec<Grade>> {
    fn rec(start: usize, r: usize, k: usize, cur: &mut Vec<Grade>, out: &mut Vec<Vec<Grade>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for g in start..r {
            cur.push(g as Grade);
            rec(g + 1, r, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, r, k, &mut Vec::new(), &mut out);
    out
}

/// Label skew: shuffled `k`-label combinations are dealt round-robin to
/// clients, then each label's (query, document) pairs are split evenly and
/// disjointly among the clients owning that label.
pub fn partition_type2(
    dataset: &Dataset,
    k: usize,
    num_clients: usize,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    let r = dataset.relevance_scale as usize;
    if k == 0 || k > r {
        return Err(PartitionError::LabelsPerClient { k, scale: r });
    }
    if num_clients == 0 {
        return Err(PartitionError::NoClients);
    }
    let mut rng: SimRng = rng::stream(seed, rng::tag::PARTITION, 2, 0);
    let mut combos = label_combinations(r, k);
    combos.shuffle(&mut rng);
    let label_sets: Vec<Vec<Grade>> = (0..num_clients)
        .map(|c| combos[c % combos.len()].clone())
        .collect();

    let mut by_label: Vec<Vec<(usize, usize)>> = vec![Vec::new(); r];
    for (qi, q) in dataset.queries.iter().enumerate() {
        for (di, &g) in q.labels.iter().enumerate() {
            by_label[g as usize].push((qi, di));
        }
    }

    let mut owned: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_clients];
    for (label, mut pairs) in by_label.into_iter().enumerate() {
        let owners: Vec<usize> = (0..num_clients)
            .filter(|&c| label_sets[c].contains(&(label as Grade)))
            .collect();
        if owners.is_empty() {
            return Err(PartitionError::UnownedLabel(label as Grade));
        }
        pairs.shuffle(&mut rng);
        let base = pairs.len() / owners.len();
        let extra = pairs.len() % owners.len();
        let mut start = 0;
        for (i, &c) in owners.iter().enumerate() {
            let len = base + (i < extra) as usize;
            owned[c].extend_from_slice(&pairs[start..start + len]);
            start += len;
        }
    }

    let clients = owned
        .into_iter()
        .enumerate()
        .map(|(c, pairs)| {
            let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (qi, di) in pairs {
                grouped.entry(qi).or_default().push(di);
            }
            let pool = grouped
                .into_iter()
                .map(|(qi, mut docs)| {
                    docs.sort_unstable();
                    let labels = docs
                        .iter()
                        .map(|&d| dataset.queries[qi].labels[d])
                        .collect();
                    LocalQuery {
                        query: qi,
                        docs,
                        labels,
                    }
                })
                .collect();
            let mut plan = client(c, Arc::new(pool));
            plan.label_set = Some(label_sets[c].clone());
            plan
        })
        .collect();

    Ok(PartitionPlan {
        kind: PlanKind::LabelSkew { k },
        clients,
        seed,
        intent_permutations: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClickFamily {
    Sdbn,
    Pbm,
}

/// One click model per client: the three SDBN users, or PBM with each
/// examination exponent.
pub fn partition_type3(
    family: ClickFamily,
    scale: usize,
) -> Result<Vec<ClickModel>, PartitionError> {
    Ok(match family {
        ClickFamily::Sdbn => SdbnKind::ALL
            .iter()
            .map(|&k| ClickModel::sdbn(k, scale))
            .collect::<Result<_, _>>()?,
        ClickFamily::Pbm => PBM_ETAS
            .iter()
            .map(|&eta| ClickModel::pbm(eta, scale))
            .collect::<Result<_, _>>()?,
    })
}

/// Assigns `quantities[c]` queries per round to client `c`.
pub fn partition_type4(
    quantities: &[usize],
    num_clients: usize,
) -> Result<Vec<usize>, PartitionError> {
    if quantities.len() != num_clients {
        return Err(PartitionError::QuantityCount {
            got: quantities.len(),
            clients: num_clients,
        });
    }
    if quantities.contains(&0) {
        return Err(PartitionError::ZeroQuantity);
    }
    Ok(quantities.to_vec())
}

/// Picks a model for one interaction.
pub fn pick_click_model<'a, R: rand::Rng + ?Sized>(
    assignment: &'a ClickAssignment,
    default: &'a ClickModel,
    rng: &mut R,
) -> &'a ClickModel {
    match assignment {
        ClickAssignment::Default => default,
        ClickAssignment::Fixed(m) => m,
        ClickAssignment::PerInteraction(ms) => ms.choose(rng).unwrap_or(default),
    }
}
