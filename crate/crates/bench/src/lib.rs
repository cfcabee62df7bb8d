//! Fixtures shared by the benchmarks.

use foltr::clicks::{ClickModel, SdbnKind};
use foltr::datasets::FoldRole;
use foltr::harness::{make_synthetic_dataset, SynthSpec};
use foltr::Dataset;

pub fn dataset(queries: usize, docs: usize, features: usize) -> Dataset {
    make_synthetic_dataset(
        &SynthSpec {
            num_queries: queries,
            docs_per_query: docs,
            feature_count: features,
            grade_scale: 5,
            noise: 0.5,
            seed: 1,
        },
        0,
        FoldRole::Train,
    )
}

pub fn perfect_clicks() -> ClickModel {
    ClickModel::sdbn(SdbnKind::Perfect, 5).expect("5-grade table exists")
}
