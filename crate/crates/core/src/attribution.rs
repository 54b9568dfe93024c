//! Feature-attribution drift via NDCG between training and inference
//! attribution rankings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};

pub const DEFAULT_NDCG_THRESHOLD: f64 = 0.9;
pub const CHECK_NAME: &str = "feature_attribution_drift_check";

/// Training-time attribution scores and the ranking they induce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BaselineDoc", into = "BaselineDoc")]
pub struct AttributionBaseline {
    scores: BTreeMap<String, f64>,
    ranking: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BaselineDoc {
    scores: BTreeMap<String, f64>,
}

impl TryFrom<BaselineDoc> for AttributionBaseline {
    type Error = MonitorError;
    fn try_from(doc: BaselineDoc) -> Result<Self> {
        Self::new(doc.scores)
    }
}

impl From<AttributionBaseline> for BaselineDoc {
    fn from(b: AttributionBaseline) -> Self {
        BaselineDoc { scores: b.scores }
    }
}

/// Rank features by descending score, ties by feature name.
pub fn rank_by_score(scores: &BTreeMap<String, f64>) -> Vec<String> {
    let mut ranking: Vec<(&String, f64)> = scores.iter().map(|(k, &v)| (k, v)).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranking.into_iter().map(|(k, _)| k.clone()).collect()
}

impl AttributionBaseline {
    /// Scores must be finite and nonnegative; pass absolute values for
    /// signed attributions.
    pub fn new(scores: BTreeMap<String, f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(MonitorError::InvalidValue("attribution baseline has no features".into()));
        }
        if let Some((f, v)) = scores.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(MonitorError::InvalidValue(format!(
                "attribution score for {f} is {v}; scores must be finite and nonnegative (use absolute values)"
            )));
        }
        let ranking = rank_by_score(&scores);
        Ok(Self { scores, ranking })
    }

    pub fn scores(&self) -> &BTreeMap<String, f64> {
        &self.scores
    }

    pub fn ranking(&self) -> &[String] {
        &self.ranking
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionObservation {
    pub ranking: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

impl AttributionObservation {
    pub fn from_ranking<S: Into<String>>(ranking: impl IntoIterator<Item = S>) -> Self {
        Self { ranking: ranking.into_iter().map(Into::into).collect(), scores: None }
    }

    pub fn from_scores(scores: BTreeMap<String, f64>) -> Self {
        Self { ranking: rank_by_score(&scores), scores: Some(scores) }
    }
}

fn dcg<'a>(scores: &BTreeMap<String, f64>, ranking: impl Iterator<Item = &'a String>) -> f64 {
    ranking
        .enumerate()
        .map(|(i, f)| scores[f] / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg(baseline: &AttributionBaseline, obs: &AttributionObservation) -> Result<f64> {
    let expected: BTreeSet<&String> = baseline.scores.keys().collect();
    let seen: BTreeSet<&String> = obs.ranking.iter().collect();
    if seen.len() != obs.ranking.len() || seen != expected {
        return Err(MonitorError::InvalidValue(
            "observed ranking is not a permutation of the baseline features".into(),
        ));
    }
    let ideal = dcg(&baseline.scores, baseline.ranking.iter());
    if ideal == 0.0 {
        return Err(MonitorError::UndefinedMetric("all baseline attribution scores are zero".into()));
    }
    Ok(dcg(&baseline.scores, obs.ranking.iter()) / ideal)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionDrift {
    pub ndcg: f64,
    pub alert: bool,
}

pub fn attribution_drift_check(baseline: &AttributionBaseline, obs: &AttributionObservation, threshold: f64) -> Result<AttributionDrift> {
    let value = ndcg(baseline, obs)?;
    Ok(AttributionDrift { ndcg: value, alert: value < threshold })
}
