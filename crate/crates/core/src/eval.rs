//! Offline nDCG@k, discounted cumulative online nDCG and Welch's t-test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::datasets::{Dataset, Grade, NUM_INTENTS};
use crate::ranker::{RankerError, RankerParams};

/// Significance level used when flagging IID vs non-IID differences.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
    #[error("evaluation set is empty")]
    EmptyDataset,
    #[error("t-test needs at least two values per sample")]
    SampleTooSmall,
    #[error("dataset has no intent labels")]
    NoIntents,
    #[error(transparent)]
    Ranker(#[from] RankerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub cutoff: usize,
    pub gamma: f64,
    pub stride: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            cutoff: 10,
            gamma: 0.9995,
            stride: 1,
        }
    }
}

#[inline]
fn gain(grade: Grade) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

pub fn dcg_at_k(grades: &[Grade], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of a ranked prefix against the full candidate grade set.
/// Lists with no relevant candidate score 1.0.
pub fn ndcg_at_k(ranked: &[Grade], all_candidates: &[Grade], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroCutoff);
    }
    let mut ideal = all_candidates.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg_at_k(ranked, k) / idcg)
}

/// Deterministic ranking by descending score; ties keep candidate order.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn query_ndcg(
    params: &RankerParams,
    features: &[&[f64]],
    labels: &[Grade],
    k: usize,
) -> Result<f64, EvalError> {
    let scores = params.score_all(features)?;
    let ranked: Vec<Grade> = rank_by_score(&scores)
        .into_iter()
        .take(k)
        .map(|i| labels[i])
        .collect();
    ndcg_at_k(&ranked, labels, k)
}

/// Mean nDCG@k over every query of `dataset` using its graded labels.
pub fn offline_eval(params: &RankerParams, dataset: &Dataset, k: usize) -> Result<f64, EvalError> {
    if dataset.queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    // per-query values are summed in query order so the result does not
    // depend on the thread schedule
    let per_query: Vec<f64> = dataset
        .queries
        .par_iter()
        .map(|q| {
            let features: Vec<&[f64]> = q.docs.iter().map(|d| d.features.as_slice()).collect();
            query_ndcg(params, &features, &q.labels, k)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_query.iter().sum::<f64>() / dataset.queries.len() as f64)
}

/// Mean over the four intents of the per-intent mean nDCG@k.
pub fn offline_eval_intents(
    params: &RankerParams,
    dataset: &Dataset,
    k: usize,
) -> Result<f64, EvalError> {
    if dataset.queries.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let per_query: Vec<[f64; NUM_INTENTS]> = dataset
        .queries
        .par_iter()
        .map(|q| {
            let rows = q.intent_labels.as_ref().ok_or(EvalError::NoIntents)?;
            let features: Vec<&[f64]> = q.docs.iter().map(|d| d.features.as_slice()).collect();
            let scores = params.score_all(&features)?;
            let order = rank_by_score(&scores);
            let mut values = [0.0; NUM_INTENTS];
            for (intent, v) in values.iter_mut().enumerate() {
                let labels: Vec<Grade> = rows.iter().map(|r| r[intent]).collect();
                let ranked: Vec<Grade> = order.iter().take(k).map(|&i| labels[i]).collect();
                *v = ndcg_at_k(&ranked, &labels, k)?;
            }
            Ok(values)
        })
        .collect::<Result<_, EvalError>>()?;
    let mut per_intent = [0.0; NUM_INTENTS];
    for values in &per_query {
        for (acc, v) in per_intent.iter_mut().zip(values) {
            *acc += v;
        }
    }
    let n = dataset.queries.len() as f64;
    Ok(per_intent.iter().map(|s| s / n).sum::<f64>() / NUM_INTENTS as f64)
}

/// Which labels offline evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalLabels {
    Graded,
    Intents,
}

pub fn evaluate(
    params: &RankerParams,
    dataset: &Dataset,
    labels: EvalLabels,
    k: usize,
) -> Result<f64, EvalError> {
    match labels {
        EvalLabels::Graded => offline_eval(params, dataset, k),
        EvalLabels::Intents => offline_eval_intents(params, dataset, k),
    }
}

/// Running `sum_t gamma^t v_t` with compensated summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineAccumulator {
    gamma: f64,
    weight: f64,
    sum: f64,
    compensation: f64,
    count: u64,
}

impl OnlineAccumulator {
    pub fn new(gamma: f64) -> Self {
        OnlineAccumulator {
            gamma,
            weight: 1.0,
            sum: 0.0,
            compensation: 0.0,
            count: 0,
        }
    }

    /// Adds the next impression and returns its discounted contribution.
    pub fn push(&mut self, value: f64) -> f64 {
        let term = self.weight * value;
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.compensation += (self.sum - t) + term;
        } else {
            self.compensation += (term - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
        self.weight = self.gamma.powf(self.count as f64);
        term
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }

    pub fn impressions(&self) -> u64 {
        self.count
    }
}

pub fn online_cumulative(values: &[f64], gamma: f64) -> f64 {
    let mut acc = OnlineAccumulator::new(gamma);
    for &v in values {
        acc.push(v);
    }
    acc.value()
}

/// Closed form of `sum_{t<n} gamma^t`.
pub fn online_maximum(impressions: u64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        impressions as f64
    } else {
        (1.0 - gamma.powf(impressions as f64)) / (1.0 - gamma)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided Welch t-test p-value.
pub fn ttest_two_sided(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::SampleTooSmall);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (std_dev(a).powi(2) / na, std_dev(b).powi(2) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    let x = df / (df + t * t);
    Ok(beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::parse_letor;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 0, 0], &[4, 0, 0], 10).unwrap(), 1.0);
        let v = ndcg_at_k(&[0, 4], &[0, 4], 2).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&[0, 0], &[0, 0, 0], 10).unwrap(), 1.0);
        assert!(matches!(
            ndcg_at_k(&[1], &[1], 0),
            Err(EvalError::ZeroCutoff)
        ));
    }

    #[test]
    fn ndcg_ignores_order_below_cutoff() {
        let a = ndcg_at_k(&[3, 2, 1, 0, 2], &[3, 2, 1, 0, 2], 2).unwrap();
        let b = ndcg_at_k(&[3, 2, 2, 1, 0], &[3, 2, 1, 0, 2], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn offline_eval_tie_breaks_by_file_order() {
        let ds = parse_letor("0 qid:1 1:1\n2 qid:1 1:2\n".as_bytes(), 1).unwrap();
        let zero = RankerParams::zeros(crate::ranker::Architecture::Linear { features: 1 });
        let expected = ndcg_at_k(&[0, 2], &[0, 2], 10).unwrap();
        assert_eq!(offline_eval(&zero, &ds, 10).unwrap(), expected);

        let single = parse_letor("3 qid:1 1:1\n".as_bytes(), 1).unwrap();
        let p = RankerParams::new(zero.arch, vec![-4.2]).unwrap();
        assert_eq!(offline_eval(&p, &single, 10).unwrap(), 1.0);
        assert!(offline_eval(&p, &crate::datasets::Dataset::empty(1), 10).is_err());
    }

    #[test]
    fn online_examples() {
        assert_eq!(online_cumulative(&[1.0; 10], 1.0), 10.0);
        assert_eq!(online_cumulative(&[1.0, 1.0], 0.5), 1.5);
        let n = 20_000;
        let v = online_cumulative(&vec![1.0; n], 0.9995);
        assert!((v - online_maximum(n as u64, 0.9995)).abs() < 1e-9);
    }

    #[test]
    fn welch_examples() {
        let a = [0.3, 0.5, 0.4];
        assert_eq!(ttest_two_sided(&a, &a).unwrap(), 1.0);
        assert_eq!(ttest_two_sided(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(ttest_two_sided(&[1.0], &a).is_err());
        // 0 +/- 0.01 vs 1 +/- 0.01, n = 10
        let lo: Vec<f64> = (0..10)
            .map(|i| if i % 2 == 0 { -0.01 } else { 0.01 } * 0.9f64.sqrt())
            .collect();
        let hi: Vec<f64> = lo.iter().map(|x| x + 1.0).collect();
        assert!((std_dev(&lo) - 0.01).abs() < 1e-12);
        assert!(ttest_two_sided(&lo, &hi).unwrap() < 1e-6);
    }

    #[test]
    fn welch_matches_reference_values() {
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let a = [0.61, 0.58, 0.66, 0.70, 0.55, 0.63];
        let b = [0.52, 0.49, 0.60, 0.47, 0.55];
        let p = ttest_two_sided(&a, &b).unwrap();
        assert!((p - REFERENCE_P).abs() < 1e-10, "{p}");
    }

    const REFERENCE_P: f64 = 0.01526661806356136;
}
