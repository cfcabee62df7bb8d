//! Synthetic LETOR data with a planted linear relevance direction, for
//! runs that do not need a licensed collection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Document, FoldRole, Grade, Query, NUM_INTENTS};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_queries: usize,
    pub docs_per_query: usize,
    pub feature_count: usize,
    pub grade_scale: u8,
    /// Standard deviation of the label noise added to the planted score.
    pub noise: f64,
    pub seed: u64,
}

fn unit_direction(rng: &mut SimRng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = w
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    w.iter_mut().for_each(|v| *v /= norm);
    w
}

/// The direction relevance is planted along; shared by every fold drawn
/// with the same seed.
pub fn planted_direction(spec: &SynthSpec) -> Vec<f64> {
    let mut rng = rng::stream(spec.seed, rng::tag::SYNTHETIC, 0, 0);
    unit_direction(&mut rng, spec.feature_count)
}

fn features(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Grade shares halve with every grade: most documents are non-relevant.
fn grade_counts(total: usize, scale: u8) -> Vec<usize> {
    let scale = scale.max(1) as usize;
    let weights: Vec<f64> = (0..scale).map(|g| 0.5f64.powi(g as i32)).collect();
    let sum: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((w / sum) * total as f64).floor() as usize)
        .collect();
    if total >= scale {
        for c in counts.iter_mut() {
            *c = (*c).max(1);
        }
    }
    let assigned: usize = counts.iter().sum();
    if assigned <= total {
        counts[0] += total - assigned;
    } else {
        counts[0] -= assigned - total;
    }
    counts
}

/// Graded dataset whose grades follow the global quantiles of
/// `planted . x + noise`.
pub fn make_synthetic_dataset(spec: &SynthSpec, fold: u64, role: FoldRole) -> Dataset {
    let direction = planted_direction(spec);
    let mut rng = rng::stream(spec.seed, rng::tag::SYNTHETIC, 1, fold);
    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut latent = Vec::new();
    for q in 0..spec.num_queries {
        let mut docs = Vec::with_capacity(spec.docs_per_query);
        for d in 0..spec.docs_per_query {
            let x = features(&mut rng, spec.feature_count);
            let noise: f64 = StandardNormal.sample(&mut rng);
            let score: f64 =
                x.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>() + spec.noise * noise;
            latent.push((score, q, d));
            docs.push(Document {
                doc_key: format!("f{fold}q{q}d{d}"),
                features: x,
            });
        }
        queries.push(Query {
            query_id: format!("{}", fold * 1_000_000 + q as u64),
            labels: vec![0; docs.len()],
            docs,
            intent_labels: None,
        });
    }

    latent.sort_by(|a, b| a.0.total_cmp(&b.0));
    let counts = grade_counts(latent.len(), spec.grade_scale);
    let mut it = latent.into_iter();
    for (grade, &count) in counts.iter().enumerate() {
        for (_, q, d) in it.by_ref().take(count) {
            queries[q].labels[d] = grade as Grade;
        }
    }

    Dataset {
        feature_count: spec.feature_count,
        relevance_scale: spec.grade_scale.max(1),
        queries,
        role,
    }
}

/// Four independent planted directions; under each intent the top
/// `relevant_per_query` documents of every query are relevant.
pub fn make_synthetic_intent_dataset(spec: &SynthSpec, relevant_per_query: usize) -> Dataset {
    let mut rng = rng::stream(spec.seed, rng::tag::SYNTHETIC, 2, 0);
    let directions: Vec<Vec<f64>> = (0..NUM_INTENTS)
        .map(|_| unit_direction(&mut rng, spec.feature_count))
        .collect();
    let mut queries = Vec::with_capacity(spec.num_queries);
    for q in 0..spec.num_queries {
        let docs: Vec<Document> = (0..spec.docs_per_query)
            .map(|d| Document {
                doc_key: format!("q{q}d{d}"),
                features: features(&mut rng, spec.feature_count),
            })
            .collect();
        let mut rows = vec![[0 as Grade; NUM_INTENTS]; docs.len()];
        for (intent, w) in directions.iter().enumerate() {
            let mut scored: Vec<(f64, usize)> = docs
                .iter()
                .enumerate()
                .map(|(d, doc)| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let s: f64 = doc.features.iter().zip(w).map(|(a, b)| a * b).sum();
                    (s + spec.noise * noise, d)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            for &(_, d) in scored.iter().take(relevant_per_query) {
                rows[d][intent] = 1;
            }
        }
        let labels = rows
            .iter()
            .map(|r| r.iter().any(|&g| g > 0) as Grade)
            .collect();
        queries.push(Query {
            query_id: q.to_string(),
            docs,
            labels,
            intent_labels: Some(rows),
        });
    }
    Dataset {
        feature_count: spec.feature_count,
        relevance_scale: 2,
        queries,
        role: FoldRole::Train,
    }
}

/// Qrels lines for one intent: `<qid> <doc_key> 1` per relevant document.
pub fn intent_qrels(dataset: &Dataset, intent: usize) -> String {
    let mut out = String::new();
    for q in &dataset.queries {
        if let Some(rows) = &q.intent_labels {
            for (doc, row) in q.docs.iter().zip(rows) {
                if row[intent] > 0 {
                    out += &format!("{} {} 1\n", q.query_id, doc.doc_key);
                }
            }
        }
    }
    out
}

/// Uniformly random linear ranker, for comparison with the planted one.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}
