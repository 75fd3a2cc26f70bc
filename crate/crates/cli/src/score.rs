use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use scopeprobe_core::metrics::{prompted_surprisal, to_surprisal};
use scopeprobe_core::scorer::{score_item, Backend, ConditionalScore, ScoreError, ScoreMode};
use scopeprobe_core::stimuli::StimulusItem;
use scopeprobe_core::Condition;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::Run;
use crate::table::{g12, write_text, Table};
use crate::validate::{build_backends, load_inputs};
use crate::{exit, CliError};

pub const SCORES_FILE: &str = "scores.jsonl";

/// One persisted (backend, item, condition) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub backend_id: String,
    pub item_id: String,
    pub condition: Condition,
    pub mode: ScoreMode,
    pub logprob_total: f64,
    pub token_count: usize,
    /// Nats per token; `-ln p` for prompted scores.
    pub surprisal_mean: f64,
}

impl ScoreRecord {
    fn from_score(score: ConditionalScore) -> Result<Self, ScoreError> {
        let surprisal = if score.mode == ScoreMode::Prompted {
            prompted_surprisal(&score)
        } else {
            to_surprisal(&score)
        };
        let surprisal_mean = surprisal
            .map_err(|e| ScoreError::Protocol {
                backend_id: score.backend_id.clone(),
                message: e.to_string(),
                raw: String::new(),
            })?
            .surprisal_mean;
        Ok(Self {
            backend_id: score.backend_id,
            item_id: score.item_id,
            condition: score.condition,
            mode: score.mode,
            logprob_total: score.logprob_total,
            token_count: score.token_count,
            surprisal_mean,
        })
    }

    fn key(&self) -> (String, String, Condition) {
        (self.backend_id.clone(), self.item_id.clone(), self.condition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreFailure {
    pub backend_id: String,
    pub item_id: String,
    pub transport: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreSummary {
    /// Records added by this invocation.
    pub new_records: usize,
    /// Records on disk after this invocation.
    pub total_records: usize,
    /// Items skipped because both conditions were already scored.
    pub resumed_items: usize,
    pub failures: Vec<ScoreFailure>,
}

impl ScoreSummary {
    /// 0 when clean; 3 when every attempt failed in transport; 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            exit::OK
        } else if self.new_records == 0 && self.failures.iter().all(|f| f.transport) {
            exit::TRANSPORT_OR_CONFIG
        } else {
            exit::PARTIAL
        }
    }
}

/// Read `scores/scores.jsonl`. A missing file is an error naming it.
pub fn load_scores(run: &Run) -> Result<Vec<ScoreRecord>, CliError> {
    let path = run.output_dir().join("scores").join(SCORES_FILE);
    if !path.exists() {
        return Err(CliError::Analysis(format!(
            "no scores at {}; run `scopeprobe score` first",
            path.display()
        )));
    }
    read_scores(&path)
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Analysis(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

type Outcome = Result<(ScoreRecord, ScoreRecord), ScoreError>;

fn score_one(item: &StimulusItem, backend: &Backend) -> Outcome {
    let (ss, is) = score_item(item, backend)?;
    Ok((ScoreRecord::from_score(ss)?, ScoreRecord::from_score(is)?))
}

fn score_backend(backend: &Backend, pending: &[&StimulusItem]) -> Vec<(String, Outcome)> {
    let total = pending.len();
    let step = (total / 10).max(1);
    let run_one = |(i, item): (usize, &&StimulusItem)| {
        let outcome = score_one(item, backend);
        if (i + 1) % step == 0 || i + 1 == total {
            info!(backend = backend.id(), done = i + 1, total, "scoring");
        }
        (item.id.clone(), outcome)
    };
    if backend.descriptor().serial {
        pending.iter().enumerate().map(run_one).collect()
    } else {
        pending.par_iter().enumerate().map(run_one).collect()
    }
}

/// Score every (backend, item, condition) not already on disk.
///
/// Failures are per item: both conditions of an item are kept or dropped
/// together, so a rerun retries exactly the failed items.
pub fn cmd_score(run: &Run) -> Result<ScoreSummary, CliError> {
    let inputs = load_inputs(run)?;
    let backends = build_backends(run)?;
    let dir = run.stage_dir("scores")?;
    let path = dir.join(SCORES_FILE);
    let existing = if path.exists() { read_scores(&path)? } else { Vec::new() };

    let mut records: BTreeMap<(String, String, Condition), ScoreRecord> =
        existing.into_iter().map(|r| (r.key(), r)).collect();
    let before = records.len();
    let mut failures = Vec::new();
    let mut resumed_items = 0;

    for backend in &backends {
        let done: BTreeSet<&str> = inputs
            .items
            .iter()
            .filter(|item| {
                Condition::ALL
                    .iter()
                    .all(|&c| records.contains_key(&(backend.id().to_string(), item.id.clone(), c)))
            })
            .map(|item| item.id.as_str())
            .collect();
        resumed_items += done.len();
        let pending: Vec<&StimulusItem> = inputs.items.iter().filter(|i| !done.contains(i.id.as_str())).collect();
        if pending.is_empty() {
            info!(backend = backend.id(), "all items already scored");
            continue;
        }
        for (item_id, outcome) in score_backend(backend, &pending) {
            match outcome {
                Ok((ss, is)) => {
                    records.insert(ss.key(), ss);
                    records.insert(is.key(), is);
                }
                Err(e) => {
                    warn!(backend = backend.id(), item = %item_id, error = %e, "item failed");
                    failures.push(ScoreFailure {
                        backend_id: backend.id().to_string(),
                        item_id,
                        transport: e.is_transport(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    failures.sort_by(|a, b| (&a.backend_id, &a.item_id).cmp(&(&b.backend_id, &b.item_id)));

    let mut jsonl = String::new();
    let mut table = Table::new(&[
        "backend_id",
        "item_id",
        "condition",
        "mode",
        "logprob_total",
        "token_count",
        "surprisal_mean",
    ]);
    for r in records.values() {
        jsonl.push_str(&serde_json::to_string(r).expect("serializable record"));
        jsonl.push('\n');
        table.push(vec![
            r.backend_id.clone(),
            r.item_id.clone(),
            r.condition.to_string(),
            r.mode.to_string(),
            g12(r.logprob_total),
            r.token_count.to_string(),
            g12(r.surprisal_mean),
        ]);
    }
    write_text(&path, &jsonl)?;
    write_text(&dir.join("scores.csv"), &table.to_csv())?;
    let mut failed = Table::new(&["backend_id", "item_id", "kind", "message"]);
    for f in &failures {
        failed.push(vec![
            f.backend_id.clone(),
            f.item_id.clone(),
            if f.transport { "transport" } else { "scoring" }.into(),
            f.message.clone(),
        ]);
    }
    write_text(&dir.join("failures.csv"), &failed.to_csv())?;

    let summary = ScoreSummary {
        new_records: records.len() - before,
        total_records: records.len(),
        resumed_items,
        failures,
    };
    info!(
        new = summary.new_records,
        total = summary.total_records,
        failed_items = summary.failures.len(),
        "scoring finished"
    );
    Ok(summary)
}
