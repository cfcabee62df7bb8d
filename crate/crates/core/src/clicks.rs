//! Simulated users: SDBN cascade clicks and position-based clicks on a SERP.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::Grade;

/// Documents shown per result page.
pub const SERP_SIZE: usize = 10;

/// PBM examination exponents used for click-preference skew.
pub const PBM_ETAS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Error, PartialEq)]
pub enum ClickError {
    #[error("grade {grade} outside click model scale {scale}")]
    GradeOutOfScale { grade: Grade, scale: usize },
    #[error("unknown click model `{0}`")]
    UnknownModel(String),
    #[error("no click model table for relevance scale {0}")]
    UnknownScale(usize),
    #[error("displayed list of {0} documents exceeds the SERP size")]
    ListTooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdbnKind {
    Perfect,
    Navigational,
    Informational,
}

impl SdbnKind {
    pub const ALL: [SdbnKind; 3] = [
        SdbnKind::Perfect,
        SdbnKind::Navigational,
        SdbnKind::Informational,
    ];
}

impl fmt::Display for SdbnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdbnKind::Perfect => "perfect",
            SdbnKind::Navigational => "navigational",
            SdbnKind::Informational => "informational",
        })
    }
}

impl FromStr for SdbnKind {
    type Err = ClickError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(SdbnKind::Perfect),
            "navigational" => Ok(SdbnKind::Navigational),
            "informational" => Ok(SdbnKind::Informational),
            other => Err(ClickError::UnknownModel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdbnParams {
    pub name: SdbnKind,
    /// P(click | grade)
    pub click_prob: Vec<f64>,
    /// P(stop | click, grade)
    pub stop_prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbmParams {
    pub eta: f64,
    /// Attraction probability per grade.
    pub click_prob: Vec<f64>,
}

impl PbmParams {
    /// PBM with the attraction column of the perfect SDBN user.
    pub fn with_perfect_attraction(eta: f64, scale: usize) -> Result<Self, ClickError> {
        Ok(PbmParams {
            eta,
            click_prob: click_model_table(SdbnKind::Perfect, scale)?.click_prob,
        })
    }

    /// Examination probability at 1-based `rank`.
    pub fn examination(&self, rank: usize) -> f64 {
        (1.0 / rank as f64).powf(self.eta)
    }
}

/// Click probabilities for the standard SDBN users, for 5-grade and
/// binary relevance.
pub fn click_model_table(name: SdbnKind, scale: usize) -> Result<SdbnParams, ClickError> {
    let (click, stop): (&[f64], &[f64]) = match (name, scale) {
        (SdbnKind::Perfect, 5) => (&[0.0, 0.2, 0.4, 0.8, 1.0], &[0.0, 0.0, 0.0, 0.0, 0.0]),
        (SdbnKind::Navigational, 5) => (&[0.05, 0.3, 0.5, 0.7, 0.95], &[0.2, 0.3, 0.5, 0.7, 0.9]),
        (SdbnKind::Informational, 5) => (&[0.4, 0.6, 0.7, 0.8, 0.9], &[0.1, 0.2, 0.3, 0.4, 0.5]),
        (SdbnKind::Perfect, 2) => (&[0.0, 1.0], &[0.0, 0.0]),
        (SdbnKind::Navigational, 2) => (&[0.05, 0.95], &[0.2, 0.9]),
        (SdbnKind::Informational, 2) => (&[0.3, 0.7], &[0.1, 0.5]),
        (_, other) => return Err(ClickError::UnknownScale(other)),
    };
    Ok(SdbnParams {
        name,
        click_prob: click.to_vec(),
        stop_prob: stop.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRealization {
    pub clicks: Vec<bool>,
    /// 0-based rank at which an SDBN user abandoned the page.
    pub stopped_at: Option<usize>,
}

impl ClickRealization {
    pub fn num_clicks(&self) -> usize {
        self.clicks.iter().filter(|&&c| c).count()
    }
}

fn check_grades(grades: &[Grade], scale: usize) -> Result<(), ClickError> {
    if grades.len() > SERP_SIZE {
        return Err(ClickError::ListTooLong(grades.len()));
    }
    match grades.iter().find(|&&g| g as usize >= scale) {
        Some(&grade) => Err(ClickError::GradeOutOfScale { grade, scale }),
        None => Ok(()),
    }
}

/// Top-down cascade: click with `click_prob[grade]`, and after a click stop
/// with `stop_prob[grade]`.
pub fn sdbn_simulate<R: Rng + ?Sized>(
    grades: &[Grade],
    params: &SdbnParams,
    rng: &mut R,
) -> Result<ClickRealization, ClickError> {
    check_grades(grades, params.click_prob.len())?;
    let mut clicks = vec![false; grades.len()];
    let mut stopped_at = None;
    for (rank, &g) in grades.iter().enumerate() {
        let g = g as usize;
        if rng.random::<f64>() < params.click_prob[g] {
            clicks[rank] = true;
            if rng.random::<f64>() < params.stop_prob[g] {
                stopped_at = Some(rank);
                break;
            }
        }
    }
    Ok(ClickRealization { clicks, stopped_at })
}

/// Independent per-rank clicks: examined with `(1/rank)^eta`, then attracted
/// with `click_prob[grade]`.
pub fn pbm_simulate<R: Rng + ?Sized>(
    grades: &[Grade],
    params: &PbmParams,
    rng: &mut R,
) -> Result<ClickRealization, ClickError> {
    check_grades(grades, params.click_prob.len())?;
    let clicks = grades
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let examined = rng.random::<f64>() < params.examination(i + 1);
            let attracted = rng.random::<f64>() < params.click_prob[g as usize];
            examined && attracted
        })
        .collect();
    Ok(ClickRealization {
        clicks,
        stopped_at: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ClickModel {
    Sdbn(SdbnParams),
    Pbm(PbmParams),
}

impl ClickModel {
    pub fn sdbn(name: SdbnKind, scale: usize) -> Result<Self, ClickError> {
        click_model_table(name, scale).map(ClickModel::Sdbn)
    }

    pub fn pbm(eta: f64, scale: usize) -> Result<Self, ClickError> {
        PbmParams::with_perfect_attraction(eta, scale).map(ClickModel::Pbm)
    }

    pub fn simulate<R: Rng + ?Sized>(
        &self,
        grades: &[Grade],
        rng: &mut R,
    ) -> Result<ClickRealization, ClickError> {
        match self {
            ClickModel::Sdbn(p) => sdbn_simulate(grades, p, rng),
            ClickModel::Pbm(p) => pbm_simulate(grades, p, rng),
        }
    }

    /// Marginal click probability at each displayed rank.
    pub fn click_probabilities(&self, grades: &[Grade]) -> Result<Vec<f64>, ClickError> {
        match self {
            ClickModel::Sdbn(p) => {
                check_grades(grades, p.click_prob.len())?;
                let mut examined = 1.0;
                Ok(grades
                    .iter()
                    .map(|&g| {
                        let click = examined * p.click_prob[g as usize];
                        examined *= 1.0 - p.click_prob[g as usize] * p.stop_prob[g as usize];
                        click
                    })
                    .collect())
            }
            ClickModel::Pbm(p) => {
                check_grades(grades, p.click_prob.len())?;
                Ok(grades
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| p.examination(i + 1) * p.click_prob[g as usize])
                    .collect())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            ClickModel::Sdbn(p) => p.name.to_string(),
            ClickModel::Pbm(p) => format!("pbm(eta={})", p.eta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_values() {
        let nav = click_model_table(SdbnKind::Navigational, 5).unwrap();
        assert_eq!(nav.click_prob[2], 0.5);
        assert_eq!(nav.stop_prob, vec![0.2, 0.3, 0.5, 0.7, 0.9]);
        let inf2 = click_model_table(SdbnKind::Informational, 2).unwrap();
        assert_eq!(inf2.click_prob, vec![0.3, 0.7]);
        assert_eq!(inf2.stop_prob, vec![0.1, 0.5]);
        let perfect = click_model_table(SdbnKind::Perfect, 5).unwrap();
        assert_eq!(perfect.click_prob, vec![0.0, 0.2, 0.4, 0.8, 1.0]);
        assert!(perfect.stop_prob.iter().all(|&p| p == 0.0));
        assert_eq!(
            click_model_table(SdbnKind::Perfect, 3),
            Err(ClickError::UnknownScale(3))
        );
        assert!("bogus".parse::<SdbnKind>().is_err());
    }

    #[test]
    fn perfect_user_cascade() {
        let p = click_model_table(SdbnKind::Perfect, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = sdbn_simulate(&[4, 0], &p, &mut rng).unwrap();
            assert_eq!(c.clicks, vec![true, false]);
            assert_eq!(c.stopped_at, None);
            let c = sdbn_simulate(&[0; 10], &p, &mut rng).unwrap();
            assert_eq!(c.num_clicks(), 0);
        }
    }

    #[test]
    fn navigational_binary_first_rank() {
        let m = ClickModel::sdbn(SdbnKind::Navigational, 2).unwrap();
        let probs = m.click_probabilities(&[1, 1]).unwrap();
        assert!((probs[0] - 0.95).abs() < 1e-15);
        assert!((probs[1] - 0.95 * (1.0 - 0.95 * 0.9)).abs() < 1e-15);
    }

    #[test]
    fn no_clicks_after_stop() {
        let p = click_model_table(SdbnKind::Navigational, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5000 {
            let c = sdbn_simulate(&[4, 3, 2, 1, 0, 4, 4, 3, 2, 1], &p, &mut rng).unwrap();
            if let Some(s) = c.stopped_at {
                assert!(c.clicks[s]);
                assert!(c.clicks[s + 1..].iter().all(|&x| !x));
            }
        }
    }

    #[test]
    fn pbm_examination() {
        let p0 = PbmParams::with_perfect_attraction(0.0, 5).unwrap();
        assert!((1..=10).all(|r| p0.examination(r) == 1.0));
        let p1 = PbmParams::with_perfect_attraction(1.0, 5).unwrap();
        assert_eq!(p1.examination(2), 0.5);
        let m = ClickModel::pbm(2.0, 5).unwrap();
        let probs = m.click_probabilities(&[4, 4, 4, 4]).unwrap();
        assert!((probs[3] - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn grade_out_of_scale() {
        let m = ClickModel::sdbn(SdbnKind::Perfect, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            m.simulate(&[0, 2], &mut rng),
            Err(ClickError::GradeOutOfScale { grade: 2, scale: 2 })
        );
        let m = ClickModel::pbm(1.0, 2).unwrap();
        assert!(m.simulate(&[3], &mut rng).is_err());
        assert!(m.simulate(&[0; 11], &mut rng).is_err());
    }

    fn monte_carlo(model: &ClickModel, grades: &[Grade]) {
        let analytic = model.click_probabilities(grades).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = vec![0usize; grades.len()];
        for _ in 0..n {
            let c = model.simulate(grades, &mut rng).unwrap();
            for (k, &clicked) in counts.iter_mut().zip(&c.clicks) {
                *k += clicked as usize;
            }
        }
        for (k, p) in counts.iter().zip(&analytic) {
            let freq = *k as f64 / n as f64;
            assert!((freq - p).abs() < 0.01, "{}: {freq} vs {p}", model.label());
        }
    }

    #[test]
    fn empirical_frequencies_match_analytic() {
        for kind in SdbnKind::ALL {
            monte_carlo(&ClickModel::sdbn(kind, 5).unwrap(), &[3, 1, 4]);
        }
        for eta in PBM_ETAS {
            monte_carlo(&ClickModel::pbm(eta, 5).unwrap(), &[2, 4, 3]);
        }
    }
}
