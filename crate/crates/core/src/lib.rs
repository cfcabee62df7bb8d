//! Simulation framework for federated online learning to rank.
//!
//! Clients learn a shared ranker with Pairwise Differentiable Gradient
//! Descent from simulated clicks, and a server merges their models with
//! federated averaging or one of its non-IID mitigations. The
//! [`partition`] module builds the client data regimes that the
//! [`harness`] runs and compares.

pub mod clicks;
pub mod datasets;
pub mod eval;
pub mod federation;
pub mod harness;
pub mod partition;
pub mod pdgd;
pub mod ranker;
pub mod rng;

pub use clicks::{ClickModel, ClickRealization, PbmParams, SdbnKind, SdbnParams};
pub use datasets::{Dataset, Document, FoldRole, Grade, Query};
pub use eval::{ndcg_at_k, offline_eval, online_cumulative, ttest_two_sided, MetricConfig};
pub use federation::{
    run_federation, ClientUpdate, FederationConfig, FederationError, RoundRecord, RunResult,
    Strategy,
};
pub use partition::{LocalQuery, PartitionPlan};
pub use pdgd::{pdgd_update, InteractionLog, PreferencePair, QueryView};
pub use ranker::{Activation, Architecture, RankerParams, ScoredList};
