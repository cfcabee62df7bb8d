//! Pairwise Differentiable Gradient Descent.
//!
//! One interaction samples a result page from the Plackett-Luce policy,
//! collects clicks, infers pairwise preferences and accumulates
//!
//! ```text
//! grad = sum_pairs rho(k, l) * sigma'(f_k - f_l) * (df_k/dtheta - df_l/dtheta)
//! ```
//!
//! where `rho` reweights each pair by how likely the page with the two
//! documents swapped would have been.

use rand::Rng;
use thiserror::Error;

use crate::clicks::{ClickError, ClickModel, ClickRealization};
use crate::datasets::Grade;
use crate::eval::{ndcg_at_k, EvalError};
use crate::ranker::{sample_ranking, RankerError, RankerParams};

#[derive(Debug, Error)]
pub enum PdgdError {
    #[error("query has no candidates")]
    EmptyQuery,
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Click(#[from] ClickError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Candidates of one query as seen by one client.
#[derive(Debug, Clone)]
pub struct QueryView<'a> {
    pub query: usize,
    pub features: Vec<&'a [f64]>,
    pub labels: &'a [Grade],
}

/// `preferred` was clicked and `other` was not; both are display ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct PreferencePair {
    pub preferred: usize,
    pub other: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub query: usize,
    /// Candidate indices in display order.
    pub displayed: Vec<usize>,
    pub clicks: ClickRealization,
    /// nDCG@cutoff of the displayed page under the client's labels.
    pub ndcg: f64,
    /// `learning_rate * gradient` for the step that was applied.
    pub delta: Vec<f64>,
}

/// A clicked document beats every unclicked document above it and the first
/// unclicked document below it.
pub fn infer_preferences(clicks: &[bool]) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for (i, &clicked) in clicks.iter().enumerate() {
        if !clicked {
            continue;
        }
        for (j, &c) in clicks[..i].iter().enumerate() {
            if !c {
                pairs.push(PreferencePair {
                    preferred: i,
                    other: j,
                });
            }
        }
        if let Some(j) = clicks[i + 1..].iter().position(|&c| !c) {
            pairs.push(PreferencePair {
                preferred: i,
                other: i + 1 + j,
            });
        }
    }
    pairs
}

/// `P(R*) / (P(R) + P(R*))` where `R*` swaps the pair within `displayed`.
///
/// Only the denominators strictly after the upper rank and up to the lower
/// one differ between `R` and `R*`, so only those are evaluated.
pub fn debias_weight(
    pair: PreferencePair,
    displayed: &[usize],
    scores: &[f64],
) -> Result<f64, RankerError> {
    let n = scores.len();
    let mut used = vec![false; n];
    for &d in displayed {
        if d >= n || used[d] {
            return Err(RankerError::NotSubset);
        }
        used[d] = true;
    }
    let (a, b) = (
        pair.preferred.min(pair.other),
        pair.preferred.max(pair.other),
    );
    if b >= displayed.len() {
        return Err(RankerError::NotSubset);
    }
    used.fill(false);
    for &d in &displayed[..=a] {
        used[d] = true;
    }
    let (da, db) = (displayed[a], displayed[b]);
    // log P(R) - log P(R*) = sum over differing positions of ln Z* - ln Z
    let mut log_ratio = 0.0;
    for &next in &displayed[a + 1..=b] {
        let z = log_sum_exp_unused(scores, &used);
        used[da] = false;
        used[db] = true;
        let z_swapped = log_sum_exp_unused(scores, &used);
        used[db] = false;
        used[da] = true;
        log_ratio += z_swapped - z;
        used[next] = true;
    }
    Ok(1.0 / (1.0 + log_ratio.exp()))
}

fn log_sum_exp_unused(scores: &[f64], used: &[bool]) -> f64 {
    let max = scores
        .iter()
        .zip(used)
        .filter(|(_, &u)| !u)
        .fold(f64::NEG_INFINITY, |m, (s, _)| m.max(*s));
    let sum: f64 = scores
        .iter()
        .zip(used)
        .filter(|(_, &u)| !u)
        .map(|(s, _)| (s - max).exp())
        .sum();
    max + sum.ln()
}

/// `e^a e^b / (e^a + e^b)^2`, i.e. `s (1 - s)` with `s = sigmoid(a - b)`.
pub fn pair_gradient_scalar(score_k: f64, score_l: f64) -> f64 {
    let e = (-(score_k - score_l).abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Gradient contributed by an explicit pair set at fixed parameters.
pub fn pairs_gradient(
    params: &RankerParams,
    features: &[&[f64]],
    scores: &[f64],
    displayed: &[usize],
    pairs: &[PreferencePair],
) -> Result<Vec<f64>, RankerError> {
    let mut grad = vec![0.0; params.len()];
    for &pair in pairs {
        let (k, l) = (displayed[pair.preferred], displayed[pair.other]);
        let weight =
            debias_weight(pair, displayed, scores)? * pair_gradient_scalar(scores[k], scores[l]);
        params.add_score_gradient(features[k], weight, &mut grad)?;
        params.add_score_gradient(features[l], -weight, &mut grad)?;
    }
    Ok(grad)
}

/// Outcome of one interaction before any step is applied.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub displayed: Vec<usize>,
    pub clicks: ClickRealization,
    pub ndcg: f64,
    /// `None` when no preference pair was inferred.
    pub gradient: Option<Vec<f64>>,
}

/// Samples a page, simulates clicks and computes the PDGD gradient.
pub fn pdgd_interaction<R: Rng + ?Sized>(
    params: &RankerParams,
    view: &QueryView<'_>,
    click_model: &ClickModel,
    cutoff: usize,
    rng: &mut R,
) -> Result<Interaction, PdgdError> {
    if view.features.is_empty() {
        return Err(PdgdError::EmptyQuery);
    }
    let scores = params.score_all(&view.features)?;
    let displayed = sample_ranking(&scores, cutoff, rng)?;
    let grades: Vec<Grade> = displayed.iter().map(|&i| view.labels[i]).collect();
    let clicks = click_model.simulate(&grades, rng)?;
    let ndcg = ndcg_at_k(&grades, view.labels, cutoff)?;
    let pairs = infer_preferences(&clicks.clicks);
    let gradient = if pairs.is_empty() {
        None
    } else {
        Some(pairs_gradient(
            params,
            &view.features,
            &scores,
            &displayed,
            &pairs,
        )?)
    };
    Ok(Interaction {
        displayed,
        clicks,
        ndcg,
        gradient,
    })
}

/// `theta + learning_rate * gradient`
pub fn gradient_step(params: &RankerParams, gradient: &[f64], learning_rate: f64) -> RankerParams {
    let mut next = params.clone();
    for (t, g) in next.theta.iter_mut().zip(gradient) {
        *t += learning_rate * g;
    }
    next
}

/// One full PDGD interaction including the parameter update.
pub fn pdgd_update<R: Rng + ?Sized>(
    params: &RankerParams,
    view: &QueryView<'_>,
    click_model: &ClickModel,
    learning_rate: f64,
    cutoff: usize,
    rng: &mut R,
) -> Result<(RankerParams, InteractionLog), PdgdError> {
    let interaction = pdgd_interaction(params, view, click_model, cutoff, rng)?;
    let (next, delta) = match &interaction.gradient {
        Some(g) => (
            gradient_step(params, g, learning_rate),
            g.iter().map(|v| learning_rate * v).collect(),
        ),
        None => (params.clone(), vec![0.0; params.len()]),
    };
    let log = InteractionLog {
        query: view.query,
        displayed: interaction.displayed,
        clicks: interaction.clicks,
        ndcg: interaction.ndcg,
        delta,
    };
    Ok((next, log))
}
