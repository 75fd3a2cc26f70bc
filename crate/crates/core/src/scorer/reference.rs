//! Deterministic table-driven language models.
//!
//! File format: `{"vocab": [...], "kind": "uniform"|"trigram"|"masked_table",
//! "table": {...}, "default_prob": p?, "mask_token": "..."?}`.
//!
//! - `uniform`: every token has probability `1 / |vocab|`; `table` is ignored.
//! - `trigram`: `table["w1 w2"]["w3"] = P(w3 | w1, w2)`; histories shorter
//!   than two tokens are left-padded with `<s>`.
//! - `masked_table`: `table["left right"]["tok"] = P(tok | left, right)` for
//!   a masked position, with `<s>` / `</s>` at the sequence edges and an
//!   optional `"*"` row used when the neighbor pair is absent.
//!
//! Missing entries fall back to `default_prob` when given; otherwise the
//! lookup is a zero-probability fault.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenize::reference_tokenize;
use super::{CausalModel, MaskedModel, ModelError};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    Uniform,
    Trigram,
    MaskedTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub vocab: Vec<String>,
    pub kind: ReferenceKind,
    #[serde(default)]
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_token: Option<String>,
}

/// A validated reference model ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    spec: ReferenceSpec,
}

impl ReferenceModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ModelError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let spec: ReferenceSpec = serde_json::from_str(&text)
            .map_err(|e| ModelError::Invalid(format!("{}: {e}", path.display())))?;
        Self::new(spec)
    }

    pub fn new(spec: ReferenceSpec) -> Result<Self, ModelError> {
        if spec.vocab.is_empty() {
            return Err(ModelError::Invalid("vocab must be non-empty".into()));
        }
        if let Some(p) = spec.default_prob {
            if !(p > 0.0 && p <= 1.0) {
                return Err(ModelError::Invalid(format!("default_prob {p} outside (0, 1]")));
            }
        }
        for (history, row) in &spec.table {
            let mut mass = 0.0;
            for (token, &p) in row {
                if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                    return Err(ModelError::Invalid(format!(
                        "probability {p} for '{token}' after '{history}' outside [0, 1]"
                    )));
                }
                mass += p;
            }
            if mass > 1.0 + 1e-9 {
                return Err(ModelError::Invalid(format!(
                    "row '{history}' has total mass {mass} > 1"
                )));
            }
        }
        Ok(Self { spec })
    }

    pub fn uniform(vocab: Vec<String>) -> Result<Self, ModelError> {
        Self::new(ReferenceSpec {
            vocab,
            kind: ReferenceKind::Uniform,
            table: BTreeMap::new(),
            default_prob: None,
            mask_token: None,
        })
    }

    pub fn kind(&self) -> ReferenceKind {
        self.spec.kind
    }

    pub fn spec(&self) -> &ReferenceSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.spec.vocab.len()
    }

    fn lookup(&self, key: &str, token: &str) -> Result<f64, ModelError> {
        let found = self
            .spec
            .table
            .get(key)
            .and_then(|row| row.get(token))
            .or_else(|| {
                (self.spec.kind == ReferenceKind::MaskedTable)
                    .then(|| self.spec.table.get("*").and_then(|row| row.get(token)))
                    .flatten()
            })
            .copied()
            .or(self.spec.default_prob);
        match found {
            Some(p) if p > 0.0 => Ok(p.ln()),
            _ => Err(ModelError::ZeroProbability {
                token: token.to_string(),
                history: key.to_string(),
            }),
        }
    }
}

impl CausalModel for ReferenceModel {
    fn tokenize(&self, text: &str) -> Vec<String> {
        reference_tokenize(text)
    }

    fn next_token_logprob(&self, history: &[String], token: &str) -> Result<f64, ModelError> {
        match self.spec.kind {
            ReferenceKind::Uniform => Ok(-(self.spec.vocab.len() as f64).ln()),
            ReferenceKind::Trigram => {
                let n = history.len();
                let w1 = if n >= 2 { history[n - 2].as_str() } else { BOS };
                let w2 = if n >= 1 { history[n - 1].as_str() } else { BOS };
                self.lookup(&format!("{w1} {w2}"), token)
            }
            ReferenceKind::MaskedTable => Err(ModelError::Invalid(
                "masked_table models cannot score left-to-right".into(),
            )),
        }
    }
}

impl MaskedModel for ReferenceModel {
    fn tokenize(&self, text: &str) -> Vec<String> {
        reference_tokenize(text)
    }

    fn mask_token(&self) -> Option<&str> {
        match self.spec.kind {
            ReferenceKind::MaskedTable => self.spec.mask_token.as_deref(),
            _ => None,
        }
    }

    fn masked_token_logprob(
        &self,
        masked: &[String],
        position: usize,
        expected: &str,
    ) -> Result<f64, ModelError> {
        if self.spec.kind != ReferenceKind::MaskedTable {
            return Err(ModelError::Invalid(format!(
                "{:?} models cannot fill masked positions",
                self.spec.kind
            )));
        }
        let left = if position == 0 { BOS } else { masked[position - 1].as_str() };
        let right = masked.get(position + 1).map_or(EOS, String::as_str);
        self.lookup(&format!("{left} {right}"), expected)
    }
}
