use std::collections::{BTreeMap, HashMap};

use scopeprobe_core::metrics::{label_preference, PreferenceRecord, SurprisalRecord};
use scopeprobe_core::scorer::{BackendDescriptor, ScoreMode};
use scopeprobe_core::stats::{
    fit_preference_model, fit_surprisal_model, pairwise_contrasts, BootstrapOptions, Contrast, Dataset, FactorSpec,
    RegressionResult,
};
use scopeprobe_core::stimuli::StimulusItem;
use scopeprobe_core::{Condition, Language, Structure};
use serde::Serialize;
use tracing::{info, warn};

use crate::config::Run;
use crate::figures::{bar_chart, box_plot};
use crate::score::{load_scores, ScoreRecord};
use crate::table::{g12, write_json, write_text, Table};
use crate::validate::{load_inputs, Inputs};
use crate::CliError;

const MAX_LISTED_GAPS: usize = 20;

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyzeOptions {
    /// Proceed when some (backend, item, condition) scores are missing.
    /// Incomplete items are excluded and counted in every aggregate table.
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeSummary {
    pub paired_items: usize,
    pub ties: usize,
    pub excluded_items: usize,
    pub models_fitted: usize,
    pub models_skipped: usize,
}

/// Both condition scores of one item under one backend.
#[derive(Debug, Clone)]
pub(crate) struct Paired<'a> {
    pub backend: &'a BackendDescriptor,
    pub item: &'a StimulusItem,
    pub mode: ScoreMode,
    pub s_ss: f64,
    pub s_is: f64,
    pub preference: PreferenceRecord,
}

/// Paired scores for every configured backend, plus the count of excluded
/// items per (backend, language, structure).
pub(crate) struct PairedScores<'a> {
    pub pairs: Vec<Paired<'a>>,
    pub excluded: BTreeMap<(String, Language, Structure), usize>,
}

impl PairedScores<'_> {
    pub fn excluded_in(&self, backend: &str, language: Language, structure: Structure) -> usize {
        self.excluded
            .get(&(backend.to_string(), language, structure))
            .copied()
            .unwrap_or(0)
    }
}

fn surprisal_record(r: &ScoreRecord) -> SurprisalRecord {
    SurprisalRecord {
        item_id: r.item_id.clone(),
        backend_id: r.backend_id.clone(),
        condition: r.condition,
        surprisal_mean: r.surprisal_mean,
    }
}

/// Join scores to items, in configuration order for backends and input order for items.
pub(crate) fn pair_scores<'a>(
    run: &'a Run,
    inputs: &'a Inputs,
    scores: &[ScoreRecord],
    allow_missing: bool,
) -> Result<PairedScores<'a>, CliError> {
    if run.config.backends.is_empty() {
        return Err(CliError::Analysis("no backends configured".into()));
    }
    let index: HashMap<(&str, &str, Condition), &ScoreRecord> = scores
        .iter()
        .map(|r| ((r.backend_id.as_str(), r.item_id.as_str(), r.condition), r))
        .collect();
    let mut pairs = Vec::new();
    let mut gaps = Vec::new();
    let mut excluded = BTreeMap::new();
    for backend in &run.config.backends {
        for item in &inputs.items {
            let get = |c| index.get(&(backend.backend_id.as_str(), item.id.as_str(), c)).copied();
            match (get(Condition::SS), get(Condition::IS)) {
                (Some(ss), Some(is)) => {
                    let preference = label_preference(&surprisal_record(ss), &surprisal_record(is))
                        .map_err(|e| CliError::Analysis(e.to_string()))?;
                    pairs.push(Paired {
                        backend,
                        item,
                        mode: ss.mode,
                        s_ss: ss.surprisal_mean,
                        s_is: is.surprisal_mean,
                        preference,
                    });
                }
                (ss, is) => {
                    for (c, r) in [(Condition::SS, ss), (Condition::IS, is)] {
                        if r.is_none() {
                            gaps.push(format!("backend {} item {} condition {c}", backend.backend_id, item.id));
                        }
                    }
                    *excluded
                        .entry((backend.backend_id.clone(), item.language, item.structure))
                        .or_insert(0) += 1;
                }
            }
        }
    }
    if !gaps.is_empty() {
        if !allow_missing {
            let mut listed: Vec<String> = gaps.iter().take(MAX_LISTED_GAPS).cloned().collect();
            if gaps.len() > MAX_LISTED_GAPS {
                listed.push(format!("... and {} more", gaps.len() - MAX_LISTED_GAPS));
            }
            return Err(CliError::Analysis(format!(
                "missing scores for {} (backend, item, condition) triples; rerun `scopeprobe score` or pass --allow-missing:\n  {}",
                gaps.len(),
                listed.join("\n  ")
            )));
        }
        warn!(missing = gaps.len(), "excluding items with incomplete scores");
    }
    Ok(PairedScores { pairs, excluded })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One fitted, skipped or failed model in `regressions.json`.
#[derive(Debug, Clone, Serialize)]
pub struct ModelEntry {
    pub name: String,
    pub formula: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RegressionResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub contrasts: Vec<Contrast>,
}

impl ModelEntry {
    fn skipped(name: String, formula: String, why: &str) -> Self {
        Self {
            name,
            formula,
            status: "skipped",
            message: Some(why.to_string()),
            result: None,
            contrasts: Vec::new(),
        }
    }

    fn fitted(name: String, formula: String, fit: Result<RegressionResult, String>, contrast_on: Option<&str>) -> Self {
        match fit {
            Ok(result) => {
                let contrasts = contrast_on
                    .and_then(|f| pairwise_contrasts(&result, f).ok())
                    .unwrap_or_default();
                Self {
                    name,
                    formula,
                    status: "ok",
                    message: None,
                    result: Some(result),
                    contrasts,
                }
            }
            Err(message) => Self {
                name,
                formula,
                status: "error",
                message: Some(message),
                result: None,
                contrasts: Vec::new(),
            },
        }
    }
}

/// Long-format preference data: one row per (backend, item).
pub(crate) fn preference_dataset(pairs: &[&Paired]) -> Dataset {
    Dataset::new(pairs.iter().map(|p| f64::from(p.preference.label)).collect())
        .with_factor("language", pairs.iter().map(|p| p.item.language.as_str()))
        .with_factor("llm", pairs.iter().map(|p| p.backend.backend_id.as_str()))
        .with_clusters(pairs.iter().map(|p| p.item.id.as_str()))
}

/// Long-format surprisal data: rows SS then IS for each pair, in pair order.
pub(crate) fn surprisal_dataset(pairs: &[&Paired]) -> Dataset {
    let rows: Vec<(&Paired, Condition)> = pairs
        .iter()
        .flat_map(|p| Condition::ALL.map(|c| (*p, c)))
        .collect();
    Dataset::new(
        rows.iter()
            .map(|(p, c)| if *c == Condition::SS { p.s_ss } else { p.s_is })
            .collect(),
    )
    .with_factor("condition", rows.iter().map(|(_, c)| c.as_str()))
    .with_clusters(rows.iter().map(|(p, _)| p.item.id.as_str()))
}

fn distinct<T: Ord + Clone>(values: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = values.collect();
    v.sort();
    v.dedup();
    v
}

pub fn cmd_analyze(run: &Run, options: AnalyzeOptions) -> Result<AnalyzeSummary, CliError> {
    let inputs = load_inputs(run)?;
    let scores = load_scores(run)?;
    let paired = pair_scores(run, &inputs, &scores, options.allow_missing)?;
    let dir = run.stage_dir("analysis")?;
    let fig_dir = run.stage_dir("figures")?;
    let opts = BootstrapOptions {
        n_boot: run.config.n_boot,
        seed: run.config.seed,
    };
    let backends: Vec<&BackendDescriptor> = run.config.backends.iter().collect();
    let cells: Vec<(Language, Structure)> = distinct(inputs.items.iter().map(|i| (i.language, i.structure)));
    let structures = distinct(inputs.items.iter().map(|i| i.structure));
    let select = |b: &str, l: Option<Language>, s: Structure| -> Vec<&Paired> {
        paired
            .pairs
            .iter()
            .filter(|p| p.backend.backend_id == b && p.item.structure == s && l.map_or(true, |l| p.item.language == l))
            .collect()
    };

    // Item-level tables.
    let mut surprisals = Table::new(&[
        "backend_id", "item_id", "language", "structure", "condition", "mode", "surprisal_mean",
    ]);
    let mut preferences = Table::new(&[
        "backend_id", "item_id", "language", "structure", "label", "margin", "tie",
    ]);
    for p in &paired.pairs {
        for (c, s) in [(Condition::SS, p.s_ss), (Condition::IS, p.s_is)] {
            surprisals.push(vec![
                p.backend.backend_id.clone(),
                p.item.id.clone(),
                p.item.language.to_string(),
                p.item.structure.to_string(),
                c.to_string(),
                p.mode.to_string(),
                g12(s),
            ]);
        }
        preferences.push(vec![
            p.backend.backend_id.clone(),
            p.item.id.clone(),
            p.item.language.to_string(),
            p.item.structure.to_string(),
            p.preference.label.to_string(),
            g12(p.preference.margin),
            p.preference.tie.to_string(),
        ]);
    }
    write_text(&dir.join("surprisals.csv"), &surprisals.to_csv())?;
    write_text(&dir.join("preferences.csv"), &preferences.to_csv())?;

    // Preference proportions per backend x language x structure.
    let mut proportions = Table::new(&[
        "backend_id", "language", "structure", "n_items", "n_ss", "n_is", "n_ties", "prop_ss", "prop_is", "n_excluded",
    ]);
    let mut bar_rows = Vec::new();
    let mut total_ties = 0;
    for b in &backends {
        for &(l, s) in &cells {
            let rows = select(&b.backend_id, Some(l), s);
            let excluded = paired.excluded_in(&b.backend_id, l, s);
            let n = rows.len();
            let n_ss = rows.iter().filter(|p| p.preference.label == 1).count();
            let ties = rows.iter().filter(|p| p.preference.tie).count();
            total_ties += ties;
            let (prop_ss, prop_is) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (n_ss as f64 / n as f64, (n - n_ss) as f64 / n as f64)
            };
            proportions.push(vec![
                b.backend_id.clone(),
                l.to_string(),
                s.to_string(),
                n.to_string(),
                n_ss.to_string(),
                (n - n_ss).to_string(),
                ties.to_string(),
                g12(prop_ss),
                g12(prop_is),
                excluded.to_string(),
            ]);
            bar_rows.push((format!("{} {}-{}", b.backend_id, l.label(), s), vec![prop_ss, prop_is]));
        }
    }
    let excluded_total: usize = paired.excluded.values().sum();
    let footnotes = footnotes(total_ties, excluded_total);
    write_text(&dir.join("preference_proportions.csv"), &proportions.to_csv())?;
    write_text(
        &dir.join("preference_proportions.txt"),
        &format!("{}{footnotes}", proportions.to_text()),
    )?;

    // Surprisal comparison per backend x language x structure.
    let mut models = Vec::new();
    let mut summary = Table::new(&[
        "backend_id", "mode", "language", "structure", "n_items", "mean_ss", "mean_is", "b_condition_is", "std_error",
        "p_value", "n_excluded",
    ]);
    let mut text = Table::new(&["LLM", "Language", "Structure", "SS / IS", "b", "p"]);
    let mut boxes = Vec::new();
    for b in &backends {
        for &(l, s) in &cells {
            let rows = select(&b.backend_id, Some(l), s);
            if rows.is_empty() {
                continue;
            }
            let ss: Vec<f64> = rows.iter().map(|p| p.s_ss).collect();
            let is: Vec<f64> = rows.iter().map(|p| p.s_is).collect();
            let name = format!("surprisal/{}/{}/{}", b.backend_id, l, s);
            let spec = FactorSpec::main(&["condition"]);
            let formula = spec.formula("surprisal");
            let entry = if rows[0].mode == ScoreMode::Prompted {
                ModelEntry::skipped(name, formula, "prompted scores have no per-token surprisal")
            } else {
                let fit = fit_surprisal_model(&surprisal_dataset(&rows), &spec, opts).map_err(|e| e.to_string());
                ModelEntry::fitted(name, formula, fit, None)
            };
            let coef = entry.result.as_ref().and_then(|r| r.coefficient("condition[IS]"));
            let cell = |f: fn(&scopeprobe_core::stats::Coefficient) -> f64| coef.map_or(String::new(), |c| g12(f(c)));
            summary.push(vec![
                b.backend_id.clone(),
                rows[0].mode.to_string(),
                l.to_string(),
                s.to_string(),
                rows.len().to_string(),
                g12(mean(&ss)),
                g12(mean(&is)),
                cell(|c| c.estimate),
                cell(|c| c.std_error),
                cell(|c| c.p_value),
                paired.excluded_in(&b.backend_id, l, s).to_string(),
            ]);
            text.push(vec![
                b.backend_id.clone(),
                l.label().into(),
                s.to_string(),
                format!("{:.2} / {:.2}", mean(&ss), mean(&is)),
                coef.map_or("-".into(), |c| format!("{:.3}", c.estimate)),
                coef.map_or("-".into(), |c| format!("{:.4}", c.p_value)),
            ]);
            let label = format!("{} {}-{}", b.backend_id, l.label(), s);
            boxes.push((format!("{label} SS"), 0, ss));
            boxes.push((format!("{label} IS"), 1, is));
            models.push(entry);
        }
    }
    write_text(&dir.join("surprisal_summary.csv"), &summary.to_csv())?;
    write_text(
        &dir.join("surprisal_summary.txt"),
        &format!(
            "Mean surprisal (nats/token) and SS vs. IS comparison by LLM and language\n\
             b: sum-coded condition[IS] coefficient, (IS - SS) / 2; p: item-clustered bootstrap\n\n{}{footnotes}",
            text.to_text()
        ),
    )?;

    // Preference models: language effect per backend x structure, pooled LLM x language per structure.
    let languages = distinct(inputs.items.iter().map(|i| i.language));
    for b in &backends {
        for &s in &structures {
            let name = format!("preference/{}/{}", b.backend_id, s);
            let spec = FactorSpec::main(&["language"]);
            let formula = spec.formula("preference");
            let rows = select(&b.backend_id, None, s);
            let langs = distinct(rows.iter().map(|p| p.item.language));
            models.push(if langs.len() < 2 {
                ModelEntry::skipped(name, formula, "needs items in both languages")
            } else {
                let fit = fit_preference_model(&preference_dataset(&rows), &spec, opts).map_err(|e| e.to_string());
                ModelEntry::fitted(name, formula, fit, Some("language"))
            });
        }
    }
    for &s in &structures {
        let spec = if languages.len() >= 2 {
            FactorSpec::crossed("language", "llm")
        } else {
            FactorSpec::main(&["llm"])
        };
        let name = format!("preference/pooled/{s}");
        let formula = spec.formula("preference");
        let rows: Vec<&Paired> = paired.pairs.iter().filter(|p| p.item.structure == s).collect();
        models.push(if backends.len() < 2 {
            ModelEntry::skipped(name, formula, "needs at least two backends")
        } else {
            let fit = fit_preference_model(&preference_dataset(&rows), &spec, opts).map_err(|e| e.to_string());
            ModelEntry::fitted(name, formula, fit, Some("llm"))
        });
    }
    write_json(&dir.join("regressions.json"), &models)?;

    let series = vec!["SS preferred".to_string(), "IS preferred".to_string()];
    write_text(
        &fig_dir.join("preferences.svg"),
        &bar_chart("Preferred interpretation by LLM, language and structure", "proportion of items", &series, &bar_rows, Some(1.0)),
    )?;
    let conds = vec!["SS".to_string(), "IS".to_string()];
    write_text(
        &fig_dir.join("surprisals.svg"),
        &box_plot("Surprisal by interpretation", "surprisal (nats/token)", &conds, &boxes),
    )?;

    let fitted = models.iter().filter(|m| m.status == "ok").count();
    let result = AnalyzeSummary {
        paired_items: paired.pairs.len(),
        ties: total_ties,
        excluded_items: excluded_total,
        models_fitted: fitted,
        models_skipped: models.len() - fitted,
    };
    if total_ties > 0 {
        warn!(ties = total_ties, "items with tied SS and IS surprisal are labelled IS");
    }
    info!(pairs = result.paired_items, models = models.len(), "analysis written");
    Ok(result)
}

pub(crate) fn footnotes(ties: usize, excluded: usize) -> String {
    let mut out = String::new();
    if ties > 0 {
        out.push_str(&format!(
            "\nNote: {ties} item(s) had identical SS and IS surprisal; ties are labelled IS (label 0) and counted in n_ties.\n"
        ));
    }
    if excluded > 0 {
        out.push_str(&format!(
            "\nNote: {excluded} (backend, item) pair(s) lacked complete scores and are excluded; see n_excluded and scores/failures.csv.\n"
        ));
    }
    out
}
