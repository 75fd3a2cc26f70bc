//! Shared fixtures for the command-line integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use scopeprobe::{Overrides, Run};
use scopeprobe_core::stimuli::{judgments_to_csv, HumanGroup, HumanJudgment, StimulusFile, StimulusItem};
use scopeprobe_core::{Condition, Language, Structure};
use serde_json::{json, Value};
use tempfile::TempDir;

pub fn bundled_data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(file)
}

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// Programmatic items. Contexts end in a marker ("is surface" / "is inverse",
/// "表层" / "逆向") that the scope tables below key on.
pub fn scope_item(language: Language, structure: Structure, k: usize) -> StimulusItem {
    let (target, ss, is) = match (language, structure) {
        (Language::En, Structure::UE) => ("Every child climbed a tree.", format!("story {k} is surface"), format!("story {k} is inverse")),
        (Language::En, Structure::EU) => ("A child climbed every tree.", format!("story {k} is surface"), format!("story {k} is inverse")),
        (Language::Zh, Structure::UE) => ("每个孩子都爬了一棵树。", format!("故事{k}是表层"), format!("故事{k}是逆向")),
        (Language::Zh, Structure::EU) => ("有一个孩子爬了每一棵树。", format!("故事{k}是表层"), format!("故事{k}是逆向")),
    };
    StimulusItem {
        id: format!("{}-{}-{k:02}", language.as_str(), structure.as_str().to_lowercase()),
        language,
        structure,
        target: target.into(),
        context_ss: ss,
        context_is: is,
        pair_id: None,
    }
}

pub fn scope_items(language: Language, per_cell: usize) -> Vec<StimulusItem> {
    Structure::ALL
        .iter()
        .flat_map(|&s| (1..=per_cell).map(move |k| scope_item(language, s, k)))
        .collect()
}

/// Trigram table: UE targets favoured after SS contexts, EU targets after IS contexts.
pub fn scope_trigram(p: f64) -> Value {
    json!({
        "vocab": ["<unk>"],
        "kind": "trigram",
        "default_prob": 0.01,
        "table": {
            "is surface": {"Every": p},
            "is inverse": {"A": p},
            "表 层": {"每": p},
            "逆 向": {"有": p}
        }
    })
}

/// Trigram table favouring SS contexts for both structures.
pub fn surface_trigram(p: f64) -> Value {
    json!({
        "vocab": ["<unk>"],
        "kind": "trigram",
        "default_prob": 0.01,
        "table": {
            "is surface": {"Every": p, "A": p},
            "表 层": {"每": p, "有": p}
        }
    })
}

/// Masked table with the same preferences as [`scope_trigram`], keyed on
/// the neighbours of the first target token.
pub fn scope_masked(p: f64) -> Value {
    json!({
        "vocab": ["<unk>"],
        "kind": "masked_table",
        "mask_token": "[MASK]",
        "default_prob": 0.01,
        "table": {
            "surface child": {"Every": p},
            "inverse child": {"A": p},
            "层 个": {"每": p},
            "向 一": {"有": p}
        }
    })
}

pub fn uniform(v: usize) -> Value {
    json!({"vocab": (0..v).map(|i| format!("w{i}")).collect::<Vec<_>>(), "kind": "uniform"})
}

pub fn backend_toml(id: &str, kind: &str, reference: &str, family: &str) -> String {
    format!(
        "\n[[backends]]\nbackend_id = \"{id}\"\nkind = \"{kind}\"\nmodel_name = \"{id}\"\nfamily = \"{family}\"\nmax_context_tokens = 512\nreference = \"{reference}\"\n"
    )
}

pub fn remote_backend_toml(id: &str, url: &str) -> String {
    format!(
        "\n[[backends]]\nbackend_id = \"{id}\"\nkind = \"CAUSAL\"\nmodel_name = \"{id}\"\nendpoint = \"{url}\"\nmax_context_tokens = 512\nmax_retries = 0\ntimeout_secs = 2\n"
    )
}

/// A closed local port: connecting to it fails immediately.
pub fn dead_endpoint() -> String {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    format!("http://127.0.0.1:{port}/score")
}

/// A temporary run directory holding inputs, references and `config.toml`.
pub struct Fixture {
    pub dir: TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write(&self, rel: &str, content: &str) {
        let path = self.path(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, content).unwrap();
    }

    pub fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn write_items(&self, rel: &str, items: &[StimulusItem]) {
        let file = StimulusFile {
            header: None,
            items: items.to_vec(),
        };
        self.write(rel, &file.to_jsonl());
    }

    pub fn write_judgments(&self, rel: &str, judgments: &[HumanJudgment]) {
        self.write(rel, &judgments_to_csv(judgments));
    }

    pub fn write_reference(&self, name: &str, spec: &Value) -> String {
        let rel = format!("ref/{name}.json");
        self.write(&rel, &serde_json::to_string_pretty(spec).unwrap());
        rel
    }

    /// Programmatic scope fixture in both languages plus the given backends.
    pub fn scope(per_cell: usize, n_boot: usize, backends: &[(&str, &str, Value)]) -> Self {
        let f = Self::new();
        f.write_items("en.jsonl", &scope_items(Language::En, per_cell));
        f.write_items("zh.jsonl", &scope_items(Language::Zh, per_cell));
        let mut config = format!(
            "stimuli_en = \"en.jsonl\"\nstimuli_zh = \"zh.jsonl\"\nn_boot = {n_boot}\nseed = 7\noutput_dir = \"out\"\n"
        );
        for (id, kind, spec) in backends {
            let rel = f.write_reference(id, spec);
            config.push_str(&backend_toml(id, kind, &rel, id));
        }
        f.write("config.toml", &config);
        f
    }

    /// The bundled synthetic dataset with the given extra config lines.
    pub fn bundled(extra: &str) -> Self {
        let f = Self::new();
        let config = format!(
            "stimuli_en = {:?}\nstimuli_zh = {:?}\njudgments = {:?}\nn_boot = 200\noutput_dir = \"out\"\n{extra}",
            bundled_data("synthetic_en.jsonl"),
            bundled_data("synthetic_zh.jsonl"),
            bundled_data("synthetic_judgments.csv"),
        );
        f.write("config.toml", &config);
        f
    }

    pub fn config(&self) -> PathBuf {
        self.path("config.toml")
    }

    pub fn run(&self) -> Run {
        Run::load(&self.config(), &Overrides::default()).unwrap()
    }

    pub fn run_with(&self, overrides: &Overrides) -> Run {
        Run::load(&self.config(), overrides).unwrap()
    }

    /// Run the binary; returns (exit code, stdout, stderr).
    pub fn cli(&self, args: &[&str]) -> (i32, String, String) {
        let out = Command::new(env!("CARGO_BIN_EXE_scopeprobe"))
            .args(args)
            .arg("--config")
            .arg(self.config())
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        (
            out.status.code().unwrap_or(-1),
            String::from_utf8_lossy(&out.stdout).into_owned(),
            String::from_utf8_lossy(&out.stderr).into_owned(),
        )
    }
}

/// Three participants per group rate every item of the group's material language.
pub fn judgments(items: &[StimulusItem], rating: impl Fn(&StimulusItem, Condition) -> u8) -> Vec<HumanJudgment> {
    let mut out = Vec::new();
    for group in HumanGroup::ALL {
        for item in items.iter().filter(|i| i.language == group.material_language()) {
            for c in Condition::ALL {
                for p in 1..=3 {
                    out.push(HumanJudgment {
                        group,
                        participant_id: format!("{group}-p{p}"),
                        item_id: item.id.clone(),
                        structure: item.structure,
                        condition: c,
                        rating: rating(item, c),
                    });
                }
            }
        }
    }
    out
}

/// The reading the scope tables favour: SS for UE, IS for EU.
pub fn preferred(item: &StimulusItem) -> Condition {
    match item.structure {
        Structure::UE => Condition::SS,
        Structure::EU => Condition::IS,
    }
}

/// Add a `judgments` entry to the fixture's config.
pub fn with_judgments(f: &Fixture, rel: &str, rows: &[HumanJudgment]) {
    f.write_judgments(rel, rows);
    let config = f.read("config.toml").replacen("output_dir", &format!("judgments = \"{rel}\"\noutput_dir"), 1);
    f.write("config.toml", &config);
}

/// Rows of a CSV file as header-keyed maps.
pub fn csv_rows(text: &str) -> Vec<std::collections::BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    reader
        .records()
        .map(|r| header.iter().cloned().zip(r.unwrap().iter().map(String::from)).collect())
        .collect()
}
