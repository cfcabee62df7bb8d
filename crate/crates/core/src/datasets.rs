//! LETOR-format ranking collections.
//!
//! A [`Dataset`] is an immutable set of queries, each holding its candidate
//! documents as dense feature vectors plus one graded label per candidate.
//! Collections with per-intent judgements additionally carry a 4-column
//! binary label matrix (see [`load_intent_collection`]).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of intents in the intent-change collection.
pub const NUM_INTENTS: usize = 4;

/// Largest grade accepted by the LETOR parser.
pub const MAX_GRADE: u8 = 63;

/// Query count of MSLR-WEB10k as released.
pub const MSLR_WEB10K_QUERIES: usize = 10_000;

pub type Grade = u8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected {NUM_INTENTS} intent qrels streams, got {0}")]
    IntentCount(usize),
    #[error("duplicate query id {0}")]
    DuplicateQuery(String),
    #[error("relevance scale {scale} does not cover observed grade {grade}")]
    Scale { scale: u8, grade: u8 },
    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FoldRole {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_key: String,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub docs: Vec<Document>,
    pub labels: Vec<Grade>,
    /// One row per candidate, one binary grade per intent.
    pub intent_labels: Option<Vec<[Grade; NUM_INTENTS]>>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Labels of every candidate under intent `intent`.
    pub fn intent_column(&self, intent: usize) -> Option<Vec<Grade>> {
        self.intent_labels
            .as_ref()
            .map(|rows| rows.iter().map(|row| row[intent]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_count: usize,
    pub relevance_scale: u8,
    pub queries: Vec<Query>,
    pub role: FoldRole,
}

impl Dataset {
    pub fn empty(feature_count: usize) -> Self {
        Dataset {
            feature_count,
            relevance_scale: 1,
            queries: Vec::new(),
            role: FoldRole::Train,
        }
    }

    pub fn with_role(mut self, role: FoldRole) -> Self {
        self.role = role;
        self
    }

    /// Declares the number of grades explicitly, e.g. 5 for MSLR even if a
    /// fold happens to miss the top grade.
    pub fn with_relevance_scale(mut self, scale: u8) -> Result<Self, DataError> {
        if let Some(grade) = self.max_grade() {
            if grade >= scale {
                return Err(DataError::Scale { scale, grade });
            }
        }
        self.relevance_scale = scale.max(1);
        Ok(self)
    }

    pub fn has_intents(&self) -> bool {
        !self.queries.is_empty() && self.queries.iter().all(|q| q.intent_labels.is_some())
    }

    pub fn num_pairs(&self) -> usize {
        self.queries.iter().map(Query::len).sum()
    }

    fn max_grade(&self) -> Option<Grade> {
        self.queries
            .iter()
            .flat_map(|q| q.labels.iter().copied())
            .max()
    }

    /// Serializes back to LETOR lines. Zero-valued features are omitted and
    /// non-zero values are written in shortest round-trip form.
    pub fn to_letor_string(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            for (doc, &grade) in q.docs.iter().zip(&q.labels) {
                let _ = write!(out, "{} qid:{}", grade, q.query_id);
                for (i, &v) in doc.features.iter().enumerate() {
                    if v != 0.0 {
                        let _ = write!(out, " {}:{}", i + 1, v);
                    }
                }
                let _ = writeln!(out, " #{}", doc.doc_key);
            }
        }
        out
    }
}

/// Parses a LETOR stream: `<grade> qid:<id> <fid>:<val> ... [# comment]`.
///
/// Queries keep first-seen order and candidates keep file order. Absent
/// feature ids are zero. The comment, when present, becomes the document
/// key; otherwise one is synthesized as `q<qid>_d<ordinal>`.
pub fn parse_letor<R: BufRead>(reader: R, feature_count: usize) -> Result<Dataset, DataError> {
    let mut queries: Vec<Query> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut max_grade = 0u8;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        let (body, comment) = match line.find('#') {
            Some(pos) => (&line[..pos], Some(line[pos + 1..].trim())),
            None => (line, None),
        };
        let mut tokens = body.split_whitespace();
        let Some(grade_tok) = tokens.next() else {
            continue;
        };
        let err = |msg: String| DataError::Parse { line: lineno, msg };

        let grade: f64 = grade_tok
            .parse()
            .map_err(|_| err(format!("invalid grade `{grade_tok}`")))?;
        if grade.fract() != 0.0 || !(0.0..=MAX_GRADE as f64).contains(&grade) {
            return Err(err(format!("grade {grade_tok} outside [0, {MAX_GRADE}]")));
        }
        let grade = grade as Grade;

        let qid_tok = tokens.next().ok_or_else(|| err("missing qid".into()))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| err(format!("expected qid:<id>, got `{qid_tok}`")))?;

        let mut features = vec![0.0; feature_count];
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed feature `{tok}`")))?;
            let fid: usize = fid
                .parse()
                .map_err(|_| err(format!("invalid feature id `{fid}`")))?;
            if fid == 0 || fid > feature_count {
                return Err(err(format!(
                    "feature id {fid} outside [1, {feature_count}]"
                )));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("invalid feature value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite feature value `{val}`")));
            }
            features[fid - 1] = val;
        }

        let qi = *index.entry(qid.to_string()).or_insert_with(|| {
            queries.push(Query {
                query_id: qid.to_string(),
                docs: Vec::new(),
                labels: Vec::new(),
                intent_labels: None,
            });
            queries.len() - 1
        });
        let query = &mut queries[qi];
        let doc_key = match comment {
            Some(c) if !c.is_empty() => c.to_string(),
            _ => format!("q{}_d{}", qid, query.docs.len()),
        };
        query.docs.push(Document { doc_key, features });
        query.labels.push(grade);
        max_grade = max_grade.max(grade);
    }

    let relevance_scale = if queries.is_empty() { 1 } else { max_grade + 1 };
    Ok(Dataset {
        feature_count,
        relevance_scale,
        queries,
        role: FoldRole::Train,
    })
}

/// Per-intent statistics of an intent-change collection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntentStats {
    pub num_queries: usize,
    pub mean_candidates: f64,
    pub relevant_per_intent: [usize; NUM_INTENTS],
    pub skipped_qrels: usize,
}

/// Loads a feature file plus one qrels stream per intent.
///
/// Qrels lines are `<qid> <doc_key> <grade>`; any positive grade counts as
/// relevant. Pairs missing from a stream are non-relevant for that intent.
/// Qrels naming an unknown (qid, doc_key) are logged and skipped. The
/// resulting `labels` column is the any-intent merge.
pub fn load_intent_collection<R: BufRead, Q: BufRead>(
    features: R,
    feature_count: usize,
    qrels: Vec<Q>,
) -> Result<(Dataset, IntentStats), DataError> {
    if qrels.len() != NUM_INTENTS {
        return Err(DataError::IntentCount(qrels.len()));
    }
    let mut dataset = parse_letor(features, feature_count)?;

    let mut position: HashMap<(&str, &str), (usize, usize)> = HashMap::new();
    for (qi, q) in dataset.queries.iter().enumerate() {
        for (di, d) in q.docs.iter().enumerate() {
            position.insert((q.query_id.as_str(), d.doc_key.as_str()), (qi, di));
        }
    }

    let mut rows: Vec<Vec<[Grade; NUM_INTENTS]>> = dataset
        .queries
        .iter()
        .map(|q| vec![[0; NUM_INTENTS]; q.len()])
        .collect();
    let mut skipped = 0;
    for (intent, stream) in qrels.into_iter().enumerate() {
        for (lineno, line) in stream.lines().enumerate() {
            let line = line?;
            let mut tok = line.split_whitespace();
            let (Some(qid), Some(doc), Some(grade)) = (tok.next(), tok.next(), tok.next()) else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(DataError::Parse {
                    line: lineno + 1,
                    msg: format!("intent {intent} qrels: expected `<qid> <doc_key> <grade>`"),
                });
            };
            let grade: i64 = grade.parse().map_err(|_| DataError::Parse {
                line: lineno + 1,
                msg: format!("intent {intent} qrels: invalid grade `{grade}`"),
            })?;
            match position.get(&(qid, doc)) {
                Some(&(qi, di)) => rows[qi][di][intent] = (grade > 0) as Grade,
                None => {
                    log::warn!("intent {intent} qrels: unknown document ({qid}, {doc}), skipped");
                    skipped += 1;
                }
            }
        }
    }

    let mut relevant = [0usize; NUM_INTENTS];
    for (q, rows) in dataset.queries.iter_mut().zip(rows) {
        for row in &rows {
            for (count, &g) in relevant.iter_mut().zip(row) {
                *count += g as usize;
            }
        }
        q.labels = rows
            .iter()
            .map(|r| r.iter().any(|&g| g > 0) as Grade)
            .collect();
        q.intent_labels = Some(rows);
    }
    dataset.relevance_scale = 2;

    let stats = IntentStats {
        num_queries: dataset.queries.len(),
        mean_candidates: if dataset.queries.is_empty() {
            0.0
        } else {
            dataset.num_pairs() as f64 / dataset.queries.len() as f64
        },
        relevant_per_intent: relevant,
        skipped_qrels: skipped,
    };
    Ok((dataset, stats))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DatasetStats {
    pub grade_counts: BTreeMap<Grade, usize>,
    pub candidates_per_query: Vec<usize>,
}

impl DatasetStats {
    pub fn total_pairs(&self) -> usize {
        self.grade_counts.values().sum()
    }
}

pub fn dataset_stats(dataset: &Dataset) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for q in &dataset.queries {
        for &g in &q.labels {
            *stats.grade_counts.entry(g).or_default() += 1;
        }
        stats.candidates_per_query.push(q.len());
    }
    stats
}

/// Per-feature min-max scaling fitted on one fold and applied to others.
/// Constant features map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(dataset: &Dataset) -> Self {
        let n = dataset.feature_count;
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for doc in dataset.queries.iter().flat_map(|q| &q.docs) {
            for (i, &v) in doc.features.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        for i in 0..n {
            if !min[i].is_finite() {
                min[i] = 0.0;
                max[i] = 0.0;
            }
        }
        MinMaxScaler { min, max }
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset, DataError> {
        if dataset.feature_count != self.min.len() {
            return Err(DataError::FeatureCount {
                expected: self.min.len(),
                got: dataset.feature_count,
            });
        }
        let mut out = dataset.clone();
        for doc in out.queries.iter_mut().flat_map(|q| q.docs.iter_mut()) {
            for (i, v) in doc.features.iter_mut().enumerate() {
                let range = self.max[i] - self.min[i];
                *v = if range > 0.0 {
                    (*v - self.min[i]) / range
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}
