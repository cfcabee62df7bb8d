//! Differentiable scoring functions and Plackett-Luce list sampling.
//!
//! Parameters live in one flat vector so that federated aggregation is a
//! plain weighted mean. The neural layout is
//! `[input->hidden weights (row per hidden unit) | hidden biases |
//! hidden->output weights | output bias]`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("feature vector has {got} entries, ranker expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter vector has {got} entries, architecture expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("cannot rank an empty candidate set")]
    NoCandidates,
    #[error("displayed list is not a duplicate-free subset of the candidates")]
    NotSubset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = apply(z)`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => (z > 0.0) as u8 as f64,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Sigmoid => 1,
            Activation::Relu => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear {
        features: usize,
    },
    Neural {
        features: usize,
        hidden: usize,
        activation: Activation,
    },
}

impl Architecture {
    pub fn feature_count(&self) -> usize {
        match *self {
            Architecture::Linear { features } | Architecture::Neural { features, .. } => features,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Architecture::Linear { features } => features,
            Architecture::Neural {
                features, hidden, ..
            } => features * hidden + hidden + hidden + 1,
        }
    }

    /// Boundary between shared base layers (input->hidden) and the
    /// personal output layer. `None` for linear rankers.
    pub fn default_split(&self) -> Option<usize> {
        match *self {
            Architecture::Linear { .. } => None,
            Architecture::Neural {
                features, hidden, ..
            } => Some(features * hidden + hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl RankerParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self, RankerError> {
        if theta.len() != arch.param_count() {
            return Err(RankerError::ParamLength {
                expected: arch.param_count(),
                got: theta.len(),
            });
        }
        Ok(RankerParams { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Self {
        RankerParams {
            arch,
            theta: vec![0.0; arch.param_count()],
        }
    }

    /// Linear: all zero. Neural: weights uniform in ±1/sqrt(fan_in),
    /// biases zero.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut params = Self::zeros(arch);
        if let Architecture::Neural {
            features, hidden, ..
        } = arch
        {
            let in_bound = 1.0 / (features.max(1) as f64).sqrt();
            let out_bound = 1.0 / (hidden.max(1) as f64).sqrt();
            let (w, rest) = params.theta.split_at_mut(features * hidden);
            for v in w {
                *v = rng.random_range(-in_bound..=in_bound);
            }
            for v in &mut rest[hidden..2 * hidden] {
                *v = rng.random_range(-out_bound..=out_bound);
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn check(&self, x: &[f64]) -> Result<(), RankerError> {
        let expected = self.arch.feature_count();
        if x.len() != expected {
            return Err(RankerError::Dimension {
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, RankerError> {
        self.check(x)?;
        Ok(self.score_unchecked(x))
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        match self.arch {
            Architecture::Linear { .. } => dot(&self.theta, x),
            Architecture::Neural {
                features,
                hidden,
                activation,
            } => {
                let (w, rest) = self.theta.split_at(features * hidden);
                let (b, rest) = rest.split_at(hidden);
                let (v, c) = rest.split_at(hidden);
                let mut out = c[0];
                for j in 0..hidden {
                    let z = dot(&w[j * features..(j + 1) * features], x) + b[j];
                    out += v[j] * activation.apply(z);
                }
                out
            }
        }
    }

    /// Scores every candidate.
    pub fn score_all(&self, candidates: &[&[f64]]) -> Result<Vec<f64>, RankerError> {
        candidates.iter().map(|x| self.score(x)).collect()
    }

    /// Gradient of the scalar score with respect to every parameter.
    pub fn score_gradient(&self, x: &[f64]) -> Result<Vec<f64>, RankerError> {
        let mut grad = vec![0.0; self.theta.len()];
        self.add_score_gradient(x, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// `acc += scale * d score(x) / d theta`
    pub fn add_score_gradient(
        &self,
        x: &[f64],
        scale: f64,
        acc: &mut [f64],
    ) -> Result<(), RankerError> {
        self.check(x)?;
        if acc.len() != self.theta.len() {
            return Err(RankerError::ParamLength {
                expected: self.theta.len(),
                got: acc.len(),
            });
        }
        match self.arch {
            Architecture::Linear { .. } => {
                for (a, xi) in acc.iter_mut().zip(x) {
                    *a += scale * xi;
                }
            }
            Architecture::Neural {
                features,
                hidden,
                activation,
            } => {
                let (w, rest) = self.theta.split_at(features * hidden);
                let b = &rest[..hidden];
                let v = &rest[hidden..2 * hidden];
                let (gw, grest) = acc.split_at_mut(features * hidden);
                let (gb, grest) = grest.split_at_mut(hidden);
                let (gv, gc) = grest.split_at_mut(hidden);
                for j in 0..hidden {
                    let z = dot(&w[j * features..(j + 1) * features], x) + b[j];
                    let a = activation.apply(z);
                    gv[j] += scale * a;
                    let delta = scale * v[j] * activation.derivative(z, a);
                    gb[j] += delta;
                    for (g, xi) in gw[j * features..(j + 1) * features].iter_mut().zip(x) {
                        *g += delta * xi;
                    }
                }
                gc[0] += scale;
            }
        }
        Ok(())
    }

    /// Serializes to the checkpoint layout documented in the README.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), RankerError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let (tag, act, features, hidden) = match self.arch {
            Architecture::Linear { features } => (0u8, 0u8, features, 0),
            Architecture::Neural {
                features,
                hidden,
                activation,
            } => (1, activation.tag(), features, hidden),
        };
        w.write_all(&[tag, act, 0, 0])?;
        w.write_all(&(features as u32).to_le_bytes())?;
        w.write_all(&(hidden as u32).to_le_bytes())?;
        w.write_all(&(self.theta.len() as u64).to_le_bytes())?;
        for v in &self.theta {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, RankerError> {
        let bad = |m: &str| RankerError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut header = [0u8; 20];
        r.read_exact(&mut header)?;
        let features = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let hidden = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let len = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        let arch = match header[0] {
            0 => Architecture::Linear { features },
            1 => Architecture::Neural {
                features,
                hidden,
                activation: Activation::from_tag(header[1]).ok_or_else(|| bad("bad activation"))?,
            },
            _ => return Err(bad("bad architecture tag")),
        };
        if len != arch.param_count() {
            return Err(bad("parameter count does not match architecture"));
        }
        let mut theta = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            theta.push(f64::from_le_bytes(buf));
        }
        RankerParams::new(arch, theta)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FOLTRCK1";

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A sampled result page: candidate indices in display order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub ranking: Vec<usize>,
    /// Scores of all candidates at sampling time.
    pub scores: Vec<f64>,
    pub cutoff: usize,
}

/// Samples a ranking without replacement; each step draws from the softmax
/// of the remaining scores.
pub fn sample_ranking<R: Rng + ?Sized>(
    scores: &[f64],
    cutoff: usize,
    rng: &mut R,
) -> Result<Vec<usize>, RankerError> {
    if scores.is_empty() {
        return Err(RankerError::NoCandidates);
    }
    let n = scores.len();
    let len = cutoff.min(n);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut weights = vec![0.0; n];
    let mut ranking = Vec::with_capacity(len);
    for _ in 0..len {
        let max = remaining
            .iter()
            .map(|&i| scores[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, &i) in weights.iter_mut().zip(&remaining) {
            *w = (scores[i] - max).exp();
            total += *w;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, w) in weights[..remaining.len()].iter().enumerate() {
            if u < *w {
                pick = pos;
                break;
            }
            u -= w;
        }
        ranking.push(remaining.remove(pick));
    }
    Ok(ranking)
}

/// Scores the candidates and samples a page of at most `cutoff` documents.
pub fn sample_list<R: Rng + ?Sized>(
    params: &RankerParams,
    candidates: &[&[f64]],
    cutoff: usize,
    rng: &mut R,
) -> Result<ScoredList, RankerError> {
    let scores = params.score_all(candidates)?;
    let ranking = sample_ranking(&scores, cutoff, rng)?;
    Ok(ScoredList {
        ranking,
        scores,
        cutoff,
    })
}

/// Plackett-Luce log-probability of showing `displayed` (in order) given
/// all candidate `scores`.
pub fn list_log_probability(scores: &[f64], displayed: &[usize]) -> Result<f64, RankerError> {
    let n = scores.len();
    let mut used = vec![false; n];
    for &d in displayed {
        if d >= n || used[d] {
            return Err(RankerError::NotSubset);
        }
        used[d] = true;
    }
    used.fill(false);
    let mut logp = 0.0;
    for &d in displayed {
        let max = scores
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scores
            .iter()
            .zip(&used)
            .filter(|(_, &u)| !u)
            .map(|(s, _)| (s - max).exp())
            .sum();
        logp += scores[d] - max - sum.ln();
        used[d] = true;
    }
    Ok(logp)
}

/// `(probability, log-probability)` of a displayed list.
pub fn list_probability(scores: &[f64], displayed: &[usize]) -> Result<(f64, f64), RankerError> {
    let logp = list_log_probability(scores, displayed)?;
    Ok((logp.exp(), logp))
}
