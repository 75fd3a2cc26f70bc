//! Surprisal, preference labels, response distributions and Human Similarity.
//!
//! Surprisal is the per-token mean in nats. The model's response
//! distribution for an item is a binary softmax over its two condition
//! surprisals at temperature `tau`; the human one comes from 1-7 ratings.
//! HS = 1 - JSD with JSD in base 2, so both lie in [0, 1].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::{ConditionalScore, ScoreMode};
use crate::stimuli::HumanGroup;
use crate::{Condition, Structure};

pub const ACCEPT: &str = "accept";
pub const REJECT: &str = "reject";

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("prompted score for item {item_id} has no per-token surprisal; use prompted_surprisal")]
    PromptedScore { item_id: String },
    #[error("score for item {item_id} is invalid: {message}")]
    InvalidScore { item_id: String, message: String },
    #[error("mismatched records: {0}")]
    Mismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("empty rating list")]
    NoRatings,
    #[error("rating {0} outside [1, 7]")]
    RatingOutOfRange(u8),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("support mismatch: {0:?} vs {1:?}")]
    SupportMismatch(Vec<String>, Vec<String>),
    #[error("JS divergence {0} outside [0, 1]")]
    JsdOutOfRange(f64),
    #[error("duplicate contribution of item {item} to cell {cell}")]
    DuplicateContribution { cell: String, item: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub item_id: String,
    pub backend_id: String,
    pub condition: Condition,
    /// Nats per target token.
    pub surprisal_mean: f64,
}

/// Mean per-token surprisal, `-logprob_total / token_count`.
pub fn to_surprisal(score: &ConditionalScore) -> Result<SurprisalRecord, MetricsError> {
    if score.mode == ScoreMode::Prompted {
        return Err(MetricsError::PromptedScore {
            item_id: score.item_id.clone(),
        });
    }
    surprisal_of(score)
}

/// Surprisal of an elicited probability, `-ln p`. Prompted scores carry
/// `token_count = 1`, so this is the only meaningful normalization.
pub fn prompted_surprisal(score: &ConditionalScore) -> Result<SurprisalRecord, MetricsError> {
    if score.mode != ScoreMode::Prompted {
        return Err(MetricsError::InvalidScore {
            item_id: score.item_id.clone(),
            message: format!("{} score passed to the prompted pathway", score.mode),
        });
    }
    surprisal_of(score)
}

fn surprisal_of(score: &ConditionalScore) -> Result<SurprisalRecord, MetricsError> {
    let invalid = |message: String| MetricsError::InvalidScore {
        item_id: score.item_id.clone(),
        message,
    };
    if score.token_count == 0 {
        return Err(invalid("token_count is 0".into()));
    }
    if !score.logprob_total.is_finite() || score.logprob_total > 0.0 {
        return Err(invalid(format!("logprob_total {} is not a finite value <= 0", score.logprob_total)));
    }
    // `0.0 - x` keeps a zero total at +0.0 rather than -0.0.
    let surprisal_mean = (0.0 - score.logprob_total) / score.token_count as f64;
    Ok(SurprisalRecord {
        item_id: score.item_id.clone(),
        backend_id: score.backend_id.clone(),
        condition: score.condition,
        surprisal_mean,
    })
}

/// Per-item binary preference: 1 = surface scope preferred, 0 = inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub item_id: String,
    pub backend_id: String,
    pub label: u8,
    /// `s_IS - s_SS` in nats per token.
    pub margin: f64,
    /// Exact tie; labelled 0 by rule.
    pub tie: bool,
}

pub fn label_preference(s_ss: &SurprisalRecord, s_is: &SurprisalRecord) -> Result<PreferenceRecord, MetricsError> {
    if s_ss.item_id != s_is.item_id || s_ss.backend_id != s_is.backend_id {
        return Err(MetricsError::Mismatch(format!(
            "({}, {}) vs ({}, {})",
            s_ss.backend_id, s_ss.item_id, s_is.backend_id, s_is.item_id
        )));
    }
    if s_ss.condition != Condition::SS || s_is.condition != Condition::IS {
        return Err(MetricsError::Mismatch(format!(
            "expected SS then IS, got {} then {}",
            s_ss.condition, s_is.condition
        )));
    }
    let (a, b) = (s_ss.surprisal_mean, s_is.surprisal_mean);
    if !a.is_finite() || !b.is_finite() {
        return Err(MetricsError::NonFinite(format!("surprisals {a}, {b}")));
    }
    Ok(PreferenceRecord {
        item_id: s_ss.item_id.clone(),
        backend_id: s_ss.backend_id.clone(),
        label: u8::from(a < b),
        margin: b - a,
        tie: a == b,
    })
}

/// Probability vector over an ordered category list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDistribution {
    support: Vec<String>,
    probs: Vec<f64>,
}

impl ResponseDistribution {
    pub fn new(support: Vec<String>, probs: Vec<f64>) -> Result<Self, MetricsError> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(MetricsError::InvalidDistribution(format!(
                "{} categories for {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(MetricsError::InvalidDistribution(format!("mass {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(MetricsError::InvalidDistribution(format!("masses sum to {total}")));
        }
        Ok(Self { support, probs })
    }

    /// `(accept, reject)` with `p_accept` in [0, 1].
    pub fn binary(p_accept: f64) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&p_accept) {
            return Err(MetricsError::InvalidDistribution(format!("p_accept {p_accept}")));
        }
        Self::new(vec![ACCEPT.into(), REJECT.into()], vec![p_accept, 1.0 - p_accept])
    }

    pub fn support(&self) -> &[String] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p_accept(&self) -> Option<f64> {
        self.support.iter().position(|s| s == ACCEPT).map(|i| self.probs[i])
    }
}

/// Binary softmax acceptance of `condition` over the item's two surprisals:
/// `exp(-s_c/tau) / (exp(-s_ss/tau) + exp(-s_is/tau))`.
pub fn llm_response_distribution(
    s_ss: f64,
    s_is: f64,
    condition: Condition,
    tau: f64,
) -> Result<ResponseDistribution, MetricsError> {
    if !s_ss.is_finite() || !s_is.is_finite() {
        return Err(MetricsError::NonFinite(format!("surprisals {s_ss}, {s_is}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(MetricsError::BadTemperature(tau));
    }
    let (own, other) = match condition {
        Condition::SS => (-s_ss / tau, -s_is / tau),
        Condition::IS => (-s_is / tau, -s_ss / tau),
    };
    // Two-way softmax as a logistic of the difference; exp never overflows.
    let d = own - other;
    let p_accept = if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    };
    ResponseDistribution::binary(p_accept)
}

/// How 1-7 ratings become an accept/reject distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanMapping {
    /// >= 5 accept, <= 3 reject, 4 split evenly.
    #[default]
    MidpointBinarize,
    /// `p_accept = (mean - 1) / 6`.
    MeanRating,
}

fn check_ratings(ratings: &[u8]) -> Result<(), MetricsError> {
    if ratings.is_empty() {
        return Err(MetricsError::NoRatings);
    }
    match ratings.iter().find(|r| !(1..=7).contains(*r)) {
        Some(&r) => Err(MetricsError::RatingOutOfRange(r)),
        None => Ok(()),
    }
}

pub fn human_response_distribution(ratings: &[u8]) -> Result<ResponseDistribution, MetricsError> {
    check_ratings(ratings)?;
    let accept: f64 = ratings
        .iter()
        .map(|&r| match r {
            5..=7 => 1.0,
            4 => 0.5,
            _ => 0.0,
        })
        .sum();
    ResponseDistribution::binary(accept / ratings.len() as f64)
}

pub fn human_mean_rating_distribution(ratings: &[u8]) -> Result<ResponseDistribution, MetricsError> {
    check_ratings(ratings)?;
    let mean = ratings.iter().map(|&r| f64::from(r)).sum::<f64>() / ratings.len() as f64;
    ResponseDistribution::binary(((mean - 1.0) / 6.0).clamp(0.0, 1.0))
}

pub fn human_distribution(ratings: &[u8], mapping: HumanMapping) -> Result<ResponseDistribution, MetricsError> {
    match mapping {
        HumanMapping::MidpointBinarize => human_response_distribution(ratings),
        HumanMapping::MeanRating => human_mean_rating_distribution(ratings),
    }
}

/// Jensen-Shannon divergence in bits. Arguments are put in a canonical
/// order first so that `js_divergence(p, q)` and `js_divergence(q, p)` run
/// the same floating-point operations.
pub fn js_divergence(p: &ResponseDistribution, q: &ResponseDistribution) -> Result<f64, MetricsError> {
    if p.support != q.support {
        return Err(MetricsError::SupportMismatch(p.support.clone(), q.support.clone()));
    }
    let swap = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne())
        .is_some_and(|o| o.is_gt());
    let (a, b) = if swap { (&q.probs, &p.probs) } else { (&p.probs, &q.probs) };

    let mut kl_a = 0.0;
    let mut kl_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let m = 0.5 * (x + y);
        if x > 0.0 {
            kl_a += x * (x / m).log2();
        }
        if y > 0.0 {
            kl_b += y * (y / m).log2();
        }
    }
    Ok((0.5 * kl_a + 0.5 * kl_b).clamp(0.0, 1.0))
}

pub fn hs_score(p_llm: &ResponseDistribution, q_human: &ResponseDistribution) -> Result<f64, MetricsError> {
    Ok(1.0 - js_divergence(p_llm, q_human)?)
}

/// One per-item JSD contribution to the HS aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsInput {
    pub backend_id: String,
    pub group: HumanGroup,
    pub structure: Structure,
    pub interpretation: Condition,
    pub item_id: String,
    pub jsd: f64,
}

/// Which keys define an HS cell besides backend, group and structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HsGrouping {
    /// Keep SS and IS in separate cells. When false both readings of an
    /// item enter one cell, keyed `item/SS` and `item/IS`.
    pub by_interpretation: bool,
}

impl Default for HsGrouping {
    fn default() -> Self {
        Self {
            by_interpretation: true,
        }
    }
}

/// Human Similarity for one (backend, group, structure, interpretation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSResult {
    pub backend_id: String,
    pub group: HumanGroup,
    pub structure: Structure,
    /// `None` when interpretations are pooled.
    pub interpretation: Option<Condition>,
    pub hs_mean: f64,
    /// `(item key, jsd)` sorted by item key.
    pub per_item: Vec<(String, f64)>,
}

type CellKey = (String, HumanGroup, Structure, Option<Condition>);

/// Mean of `1 - jsd` per cell. Items are summed in sorted key order, so the
/// result does not depend on input order. Empty cells never appear.
pub fn aggregate_hs(inputs: &[HsInput], grouping: HsGrouping) -> Result<Vec<HSResult>, MetricsError> {
    let mut cells: BTreeMap<CellKey, BTreeMap<String, f64>> = BTreeMap::new();
    for input in inputs {
        if !(0.0..=1.0).contains(&input.jsd) {
            return Err(MetricsError::JsdOutOfRange(input.jsd));
        }
        let (interp, item_key) = if grouping.by_interpretation {
            (Some(input.interpretation), input.item_id.clone())
        } else {
            (None, format!("{}/{}", input.item_id, input.interpretation))
        };
        let key = (input.backend_id.clone(), input.group, input.structure, interp);
        let cell = cells.entry(key).or_default();
        if cell.insert(item_key.clone(), input.jsd).is_some() {
            return Err(MetricsError::DuplicateContribution {
                cell: format!(
                    "({}, {}, {}, {})",
                    input.backend_id,
                    input.group,
                    input.structure,
                    interp.map_or("pooled", Condition::as_str)
                ),
                item: item_key,
            });
        }
    }
    Ok(cells
        .into_iter()
        .map(|((backend_id, group, structure, interpretation), items)| {
            let total: f64 = items.values().map(|jsd| 1.0 - jsd).sum();
            HSResult {
                backend_id,
                group,
                structure,
                interpretation,
                hs_mean: total / items.len() as f64,
                per_item: items.into_iter().collect(),
            }
        })
        .collect())
}
