use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::Run;
use crate::table::write_text;
use crate::CliError;

const REQUIRED: [&str; 8] = [
    "manifest.json",
    "analysis/preference_proportions.txt",
    "analysis/surprisal_summary.txt",
    "analysis/regressions.json",
    "hs/hs_cells.txt",
    "hs/anova.json",
    "figures/preferences.svg",
    "figures/hs.svg",
];

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn fmt_p(v: &Value) -> String {
    v.as_f64().map_or("-".into(), |p| format!("{p:.4}"))
}

fn regression_lines(models: &Value) -> Vec<String> {
    let mut out = Vec::new();
    for m in models.as_array().into_iter().flatten() {
        let name = m["name"].as_str().unwrap_or_default();
        if name.starts_with("surprisal/") {
            continue;
        }
        match m["status"].as_str() {
            Some("ok") => {
                let result = &m["result"];
                let mut flags = Vec::new();
                if result["separation"].as_bool() == Some(true) {
                    flags.push("separation (ridge)");
                }
                if result["degenerate"].as_bool() == Some(true) {
                    flags.push("degenerate");
                }
                let coefs: Vec<String> = result["coefficients"]
                    .as_object()
                    .into_iter()
                    .flatten()
                    .map(|(k, c)| format!("{k} b={:.3} p={}", c["estimate"].as_f64().unwrap_or(f64::NAN), fmt_p(&c["p_value"])))
                    .collect();
                let flag = if flags.is_empty() { String::new() } else { format!(" [{}]", flags.join(", ")) };
                out.push(format!("- `{name}`: {}{flag}", coefs.join("; ")));
                for c in m["contrasts"].as_array().into_iter().flatten() {
                    out.push(format!(
                        "  - {} {} vs {}: estimate {:.3}, Holm p {}",
                        c["factor"].as_str().unwrap_or_default(),
                        c["pair"][0].as_str().unwrap_or_default(),
                        c["pair"][1].as_str().unwrap_or_default(),
                        c["estimate"].as_f64().unwrap_or(f64::NAN),
                        fmt_p(&c["adjusted_p"])
                    ));
                }
            }
            status => out.push(format!(
                "- `{name}`: {} ({})",
                status.unwrap_or("unknown"),
                m["message"].as_str().unwrap_or_default()
            )),
        }
    }
    out
}

fn anova_lines(anovas: &Value) -> Vec<String> {
    let mut out = Vec::new();
    for a in anovas.as_array().into_iter().flatten() {
        let name = a["name"].as_str().unwrap_or_default();
        if a["status"].as_str() != Some("ok") {
            out.push(format!("- `{name}`: {} ({})", a["status"].as_str().unwrap_or_default(), a["message"].as_str().unwrap_or_default()));
            continue;
        }
        let result = &a["result"];
        for e in result["effects"].as_array().into_iter().flatten() {
            out.push(format!(
                "- `{name}` {}: F({}, {}) = {:.3}, p = {}",
                e["term"].as_str().unwrap_or_default(),
                e["df"][0],
                e["df"][1],
                e["f"].as_f64().unwrap_or(f64::INFINITY),
                fmt_p(&e["p_value"])
            ));
        }
        for t in result["posthoc"].as_array().into_iter().flatten() {
            out.push(format!(
                "  - Tukey {}: {} vs {}: diff {:.3}, adjusted p {}",
                t["term"].as_str().unwrap_or_default(),
                t["pair"][0].as_str().unwrap_or_default(),
                t["pair"][1].as_str().unwrap_or_default(),
                t["difference"].as_f64().unwrap_or(f64::NAN),
                fmt_p(&t["adjusted_p"])
            ));
        }
    }
    out
}

/// Assemble `report.md` from the outputs of the earlier stages.
pub fn cmd_report(run: &Run) -> Result<PathBuf, CliError> {
    let out = run.output_dir();
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|f| !out.join(f).exists()).collect();
    if !missing.is_empty() {
        return Err(CliError::Analysis(format!(
            "report needs the validate, analyze and hs stages first; missing: {}",
            missing.join(", ")
        )));
    }
    let json = |f: &str| -> Result<Value, CliError> {
        let path = out.join(f);
        serde_json::from_str(&read(&path)?).map_err(|e| CliError::io(&path, e))
    };
    let manifest = json("manifest.json")?;
    let datasets: Vec<String> = manifest["datasets"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|d| {
            let counts: Vec<String> = d["item_count_by_structure"]
                .as_object()
                .into_iter()
                .flatten()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect();
            format!("- {} ({}): {}", d["name"].as_str().unwrap_or_default(), d["language"].as_str().unwrap_or_default(), counts.join(", "))
        })
        .collect();

    let mut md = String::new();
    md.push_str("# Quantifier scope probing report\n\n");
    md.push_str(&format!(
        "Seed {}, tau {}, {} bootstrap replicates, human mapping `{}`.\n\n",
        run.config.seed,
        run.config.tau,
        run.config.n_boot,
        serde_json::to_value(run.config.human_mapping).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    ));
    md.push_str("Inference uses fixed-effects regressions with sum coding and item-clustered bootstrap ");
    md.push_str("p-values in place of random-intercept mixed models.\n\n");
    md.push_str("## Datasets\n\n");
    md.push_str(&datasets.join("\n"));
    md.push_str("\n\n## Preferred interpretation\n\n```\n");
    md.push_str(&read(&out.join("analysis/preference_proportions.txt"))?);
    md.push_str("```\n\n![preferences](figures/preferences.svg)\n\n## Surprisal\n\n```\n");
    md.push_str(&read(&out.join("analysis/surprisal_summary.txt"))?);
    md.push_str("```\n\n![surprisals](figures/surprisals.svg)\n\n## Preference regressions\n\n");
    md.push_str(&regression_lines(&json("analysis/regressions.json")?).join("\n"));
    md.push_str("\n\n## Human Similarity\n\n```\n");
    md.push_str(&read(&out.join("hs/hs_cells.txt"))?);
    md.push_str("```\n\n![hs](figures/hs.svg)\n\n## ANOVA\n\n");
    md.push_str(&anova_lines(&json("hs/anova.json")?).join("\n"));
    md.push('\n');

    let path = out.join("report.md");
    write_text(&path, &md)?;
    Ok(path)
}
