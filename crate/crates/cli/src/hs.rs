use std::collections::{BTreeMap, BTreeSet};

use scopeprobe_core::metrics::{
    aggregate_hs, human_distribution, js_divergence, llm_response_distribution, HSResult, HsGrouping, HsInput,
};
use scopeprobe_core::stats::{anova, AnovaOptions, AnovaResult, Dataset};
use scopeprobe_core::stimuli::HumanGroup;
use scopeprobe_core::{Condition, Structure};
use serde::Serialize;
use tracing::info;

use crate::analyze::{footnotes, pair_scores, AnalyzeOptions};
use crate::config::Run;
use crate::figures::{line_panels, Panel};
use crate::score::load_scores;
use crate::table::{g12, write_json, write_text, Table};
use crate::validate::load_inputs;
use crate::CliError;

/// One HS cell with its pairing label and model family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsCell {
    pub pairing: String,
    pub family: String,
    pub n_excluded: usize,
    #[serde(flatten)]
    pub result: HSResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnovaEntry {
    pub name: String,
    pub factors: Vec<String>,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<AnovaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HsSummary {
    pub cells: usize,
    pub items: usize,
    pub anovas_fitted: usize,
}

/// Ratings keyed by (group, item, condition), in file order.
type Ratings = BTreeMap<(HumanGroup, String, Condition), Vec<u8>>;

fn anova_entry(name: &str, data: &Dataset, factors: &[&str], posthoc: &[&str]) -> AnovaEntry {
    let mut entry = AnovaEntry {
        name: name.to_string(),
        factors: factors.iter().map(|f| f.to_string()).collect(),
        status: "skipped",
        message: None,
        result: None,
    };
    for f in factors {
        let levels = data.levels(f).map(|l| l.len()).unwrap_or(0);
        if levels < 2 {
            entry.message = Some(format!("factor {f} has {levels} level(s)"));
            return entry;
        }
    }
    let options = AnovaOptions {
        posthoc: Some(posthoc.iter().map(|p| p.to_string()).collect()),
    };
    match anova(data, factors, &options) {
        Ok(result) => {
            entry.status = "ok";
            entry.result = Some(result);
        }
        Err(e) => {
            entry.status = "error";
            entry.message = Some(e.to_string());
        }
    }
    entry
}

/// Human Similarity per (backend, group, structure, interpretation).
///
/// Each group is compared only with items in its material language.
pub fn cmd_hs(run: &Run, options: AnalyzeOptions) -> Result<HsSummary, CliError> {
    let inputs = load_inputs(run)?;
    let judgments = inputs
        .judgments
        .as_ref()
        .ok_or_else(|| CliError::Analysis("HS needs human judgments; set `judgments` in the config".into()))?;
    let scores = load_scores(run)?;
    let paired = pair_scores(run, &inputs, &scores, options.allow_missing)?;
    let tau = run.config.tau;
    let mapping = run.config.human_mapping;

    let mut ratings: Ratings = BTreeMap::new();
    for j in judgments {
        ratings
            .entry((j.group, j.item_id.clone(), j.condition))
            .or_default()
            .push(j.rating);
    }
    let groups: BTreeSet<HumanGroup> = judgments.iter().map(|j| j.group).collect();

    let mut items = Table::new(&[
        "backend_id", "family", "group", "pairing", "structure", "interpretation", "item_id", "p_accept_llm",
        "p_accept_human", "jsd", "hs",
    ]);
    let mut hs_inputs = Vec::new();
    for &group in &groups {
        let before = hs_inputs.len();
        for p in paired.pairs.iter().filter(|p| p.item.language == group.material_language()) {
            for c in Condition::ALL {
                let Some(r) = ratings.get(&(group, p.item.id.clone(), c)) else {
                    continue;
                };
                let err = |e: scopeprobe_core::metrics::MetricsError| {
                    CliError::Analysis(format!("backend {} item {} {c}: {e}", p.backend.backend_id, p.item.id))
                };
                let llm = llm_response_distribution(p.s_ss, p.s_is, c, tau).map_err(err)?;
                let human = human_distribution(r, mapping).map_err(err)?;
                let jsd = js_divergence(&llm, &human).map_err(err)?;
                items.push(vec![
                    p.backend.backend_id.clone(),
                    p.backend.family().to_string(),
                    group.to_string(),
                    group.pairing().into(),
                    p.item.structure.to_string(),
                    c.to_string(),
                    p.item.id.clone(),
                    g12(llm.p_accept().expect("binary support")),
                    g12(human.p_accept().expect("binary support")),
                    g12(jsd),
                    g12(1.0 - jsd),
                ]);
                hs_inputs.push(HsInput {
                    backend_id: p.backend.backend_id.clone(),
                    group,
                    structure: p.item.structure,
                    interpretation: c,
                    item_id: p.item.id.clone(),
                    jsd,
                });
            }
        }
        if hs_inputs.len() == before {
            return Err(CliError::Analysis(format!(
                "group {group} ({}) has no scored {} materials to compare against",
                group.pairing(),
                group.material_language().label()
            )));
        }
    }

    let results = aggregate_hs(&hs_inputs, HsGrouping::default()).map_err(|e| CliError::Analysis(e.to_string()))?;
    let family_of: BTreeMap<&str, &str> = run
        .config
        .backends
        .iter()
        .map(|b| (b.backend_id.as_str(), b.family()))
        .collect();
    let cells: Vec<HsCell> = results
        .into_iter()
        .map(|r| HsCell {
            pairing: r.group.pairing().into(),
            family: family_of[r.backend_id.as_str()].to_string(),
            n_excluded: paired.excluded_in(&r.backend_id, r.group.material_language(), r.structure),
            result: r,
        })
        .collect();

    let mut table = Table::new(&[
        "backend_id", "family", "group", "pairing", "structure", "interpretation", "n_items", "hs_mean", "n_excluded",
    ]);
    for c in &cells {
        table.push(vec![
            c.result.backend_id.clone(),
            c.family.clone(),
            c.result.group.to_string(),
            c.pairing.clone(),
            c.result.structure.to_string(),
            c.result.interpretation.map_or("pooled".into(), |i| i.to_string()),
            c.result.per_item.len().to_string(),
            g12(c.result.hs_mean),
            c.n_excluded.to_string(),
        ]);
    }

    let data = Dataset::new(cells.iter().map(|c| c.result.hs_mean).collect())
        .with_factor("family", cells.iter().map(|c| c.family.as_str()))
        .with_factor("group", cells.iter().map(|c| c.result.group.as_str()));
    let anovas = vec![
        anova_entry("hs ~ family", &data, &["family"], &["family"]),
        anova_entry(
            "hs ~ group * family",
            &data,
            &["group", "family"],
            &["group", "family", "group:family"],
        ),
    ];

    let dir = run.stage_dir("hs")?;
    let excluded: usize = paired.excluded.values().sum();
    write_text(&dir.join("hs_items.csv"), &items.to_csv())?;
    write_text(&dir.join("hs_cells.csv"), &table.to_csv())?;
    write_text(&dir.join("hs_cells.txt"), &format!("{}{}", table.to_text(), footnotes(0, excluded)))?;
    write_json(&dir.join("hs_cells.json"), &cells)?;
    write_json(&dir.join("anova.json"), &anovas)?;

    let pairings: Vec<HumanGroup> = {
        let mut g: Vec<HumanGroup> = groups.iter().copied().collect();
        g.sort_by_key(|g| g.pairing());
        g
    };
    let x_labels: Vec<String> = pairings.iter().map(|g| g.pairing().to_string()).collect();
    let mut panels = Vec::new();
    for s in Structure::ALL {
        for c in Condition::ALL {
            let series = run
                .config
                .backends
                .iter()
                .map(|b| {
                    let values = pairings
                        .iter()
                        .map(|&g| {
                            cells
                                .iter()
                                .find(|x| {
                                    x.result.backend_id == b.backend_id
                                        && x.result.group == g
                                        && x.result.structure == s
                                        && x.result.interpretation == Some(c)
                                })
                                .map(|x| x.result.hs_mean)
                        })
                        .collect();
                    (b.backend_id.clone(), values)
                })
                .collect();
            panels.push(Panel {
                title: format!("{s} / {c}"),
                series,
            });
        }
    }
    let fig_dir = run.stage_dir("figures")?;
    write_text(
        &fig_dir.join("hs.svg"),
        &line_panels("Human Similarity by pairing", "HS", &x_labels, &panels, (0.0, 1.0)),
    )?;

    let summary = HsSummary {
        cells: cells.len(),
        items: hs_inputs.len(),
        anovas_fitted: anovas.iter().filter(|a| a.status == "ok").count(),
    };
    info!(cells = summary.cells, "HS written");
    Ok(summary)
}
