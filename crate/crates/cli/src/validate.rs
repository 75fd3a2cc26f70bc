use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use scopeprobe_core::scorer::{Backend, BackendDescriptor};
use scopeprobe_core::stimuli::{
    load_judgments, validate_dataset, DatasetManifest, HumanJudgment, StimuliError, StimulusFile, StimulusItem,
};
use scopeprobe_core::Language;
use serde::Serialize;
use tracing::info;

use crate::config::Run;
use crate::table::write_json;
use crate::CliError;

/// Everything a run reads, loaded and cross-checked.
#[derive(Debug, Clone)]
pub struct Inputs {
    /// Items in configuration order: English file first, then Chinese.
    pub items: Vec<StimulusItem>,
    pub judgments: Option<Vec<HumanJudgment>>,
    pub manifests: Vec<DatasetManifest>,
}

impl Inputs {
    pub fn item(&self, id: &str) -> Option<&StimulusItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JudgmentSummary {
    pub rows: usize,
    pub rows_by_group: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub datasets: Vec<DatasetManifest>,
    pub combined: DatasetManifest,
    pub judgments: Option<JudgmentSummary>,
    pub backends: Vec<String>,
}

fn load_file(path: &Path, expected: Language, errors: &mut Vec<String>) -> Option<(StimulusFile, DatasetManifest)> {
    let shown = path.display();
    let file = match StimulusFile::load(path) {
        Ok(f) => f,
        Err(e) => {
            errors.push(format!("{shown}: {e}"));
            return None;
        }
    };
    for item in &file.items {
        if item.language != expected {
            errors.push(format!(
                "{shown}: item {} has language {}, expected {}",
                item.id,
                item.language.label(),
                expected.label()
            ));
        }
    }
    match validate_dataset(&file.items) {
        Ok(manifest) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (name, source) = match &file.header {
                Some(h) => (h.dataset.clone(), h.source.clone()),
                None => (stem, String::new()),
            };
            Some((file.clone(), manifest.with_provenance(name, source)))
        }
        Err(StimuliError::Invalid(issues)) => {
            errors.extend(issues.iter().map(|i| format!("{shown}: {i}")));
            None
        }
        Err(e) => {
            errors.push(format!("{shown}: {e}"));
            None
        }
    }
}

fn check_judgments(judgments: &[HumanJudgment], items: &[StimulusItem], errors: &mut Vec<String>) {
    let by_id: HashMap<&str, &StimulusItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut reported = std::collections::BTreeSet::new();
    for j in judgments {
        let problem = match by_id.get(j.item_id.as_str()) {
            None => Some(format!("judgments: item {} is not in the stimuli", j.item_id)),
            Some(item) if item.structure != j.structure => Some(format!(
                "judgments: item {} is {} in the stimuli but {} in the judgments",
                j.item_id, item.structure, j.structure
            )),
            Some(item) if item.language != j.group.material_language() => Some(format!(
                "judgments: group {} rated {} item {}; groups only rate {} materials",
                j.group,
                item.language.label(),
                j.item_id,
                j.group.material_language().label()
            )),
            Some(_) => None,
        };
        if let Some(p) = problem {
            if reported.insert(p.clone()) {
                errors.push(p);
            }
        }
    }
}

/// Load and cross-check stimuli, judgments and backend descriptors,
/// collecting every problem before failing.
pub fn load_inputs(run: &Run) -> Result<Inputs, CliError> {
    let mut errors = Vec::new();
    let mut items = Vec::new();
    let mut manifests = Vec::new();
    let sources = [
        (&run.config.stimuli_en, Language::En),
        (&run.config.stimuli_zh, Language::Zh),
    ];
    for (path, language) in sources {
        if let Some(path) = path {
            if let Some((file, manifest)) = load_file(&run.resolve(path), language, &mut errors) {
                items.extend(file.items);
                manifests.push(manifest);
            }
        }
    }
    if errors.is_empty() {
        if let Err(StimuliError::Invalid(issues)) = validate_dataset(&items) {
            errors.extend(issues.iter().map(|i| format!("combined stimuli: {i}")));
        }
    }

    let judgments = match &run.config.judgments {
        Some(path) => {
            let path = run.resolve(path);
            match load_judgments(&path) {
                Ok(j) => {
                    check_judgments(&j, &items, &mut errors);
                    Some(j)
                }
                Err(e) => {
                    errors.push(format!("{}: {e}", path.display()));
                    None
                }
            }
        }
        None => None,
    };

    for descriptor in &run.config.backends {
        if let Err(e) = descriptor.validate() {
            errors.push(e.to_string());
        } else if !descriptor.is_remote() {
            if let Err(e) = Backend::from_descriptor(descriptor.clone(), &run.base_dir) {
                errors.push(e.to_string());
            }
        }
    }

    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    Ok(Inputs {
        items,
        judgments,
        manifests,
    })
}

/// Instantiate the configured backends. Failures here are configuration errors.
pub fn build_backends(run: &Run) -> Result<Vec<Backend>, CliError> {
    run.config
        .backends
        .iter()
        .map(|d: &BackendDescriptor| {
            Backend::from_descriptor(d.clone(), &run.base_dir).map_err(|e| CliError::Config(e.to_string()))
        })
        .collect()
}

pub fn cmd_validate(run: &Run) -> Result<ValidationReport, CliError> {
    let inputs = load_inputs(run)?;
    let combined = validate_dataset(&inputs.items)
        .map_err(|e| CliError::Validation(vec![e.to_string()]))?
        .with_provenance(
            inputs.manifests.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+"),
            "combined",
        );
    let judgments = inputs.judgments.as_ref().map(|j| {
        let mut rows_by_group = BTreeMap::new();
        for row in j {
            *rows_by_group.entry(row.group.to_string()).or_insert(0) += 1;
        }
        JudgmentSummary {
            rows: j.len(),
            rows_by_group,
        }
    });
    let report = ValidationReport {
        datasets: inputs.manifests.clone(),
        combined,
        judgments,
        backends: run.config.backends.iter().map(|b| b.backend_id.clone()).collect(),
    };
    let out = run.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    write_json(&out.join("manifest.json"), &report)?;
    info!(items = inputs.items.len(), "validation passed");
    Ok(report)
}
