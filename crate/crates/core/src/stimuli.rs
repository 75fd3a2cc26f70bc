//! Truth-value-judgment stimuli and human rating datasets.
//!
//! Stimulus files are line-delimited JSON, one item per line, with the keys
//! `id`, `language`, `structure`, `target`, `context_ss`, `context_is` and an
//! optional `pair_id`. A file may start with a header record
//! `{"dataset": .., "language": "en"|"zh"|"mixed", "source": ..}`; without a
//! header every item in the file must share one language.
//!
//! Human judgments are CSV with the header
//! `group,participant_id,item_id,structure,condition,rating`.
//!
//! All text is NFC-normalized on load.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::{Condition, Language, Structure};

const ITEM_KEYS: [&str; 7] = [
    "id",
    "language",
    "structure",
    "target",
    "context_ss",
    "context_is",
    "pair_id",
];

const JUDGMENT_HEADER: [&str; 6] = [
    "group",
    "participant_id",
    "item_id",
    "structure",
    "condition",
    "rating",
];

const BUNDLED_EN: &str = include_str!("../data/synthetic_en.jsonl");
const BUNDLED_ZH: &str = include_str!("../data/synthetic_zh.jsonl");
const BUNDLED_JUDGMENTS: &str = include_str!("../data/synthetic_judgments.csv");

#[derive(Debug, Error)]
pub enum StimuliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record, line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing field: {field}, line {line}")]
    MissingField { field: &'static str, line: usize },
    #[error("empty field: {field}, line {line}")]
    EmptyField { field: &'static str, line: usize },
    #[error("unknown field: {field}, line {line}")]
    UnknownField { field: String, line: usize },
    #[error("identical contexts for item '{id}', line {line}")]
    IdenticalContexts { id: String, line: usize },
    #[error("duplicate id '{id}': lines {first} and {second}")]
    DuplicateId {
        id: String,
        first: usize,
        second: usize,
    },
    #[error("language '{found}' on line {line} conflicts with file language '{expected}'")]
    LanguageMismatch {
        found: Language,
        expected: Language,
        line: usize,
    },
    #[error("bad header, line 1: {0}")]
    BadHeader(String),
    #[error("bad judgment header: expected {expected}, found {found}")]
    BadJudgmentHeader { expected: String, found: String },
    #[error("malformed judgment, line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("unknown group tag '{tag}', line {line}; expected one of L1_EN, L1_ZH, L2_EN, L2_ZH")]
    UnknownGroup { tag: String, line: usize },
    #[error("rating {rating} out of range [1,7], line {line}")]
    RatingOutOfRange { rating: i64, line: usize },
    #[error("duplicate judgment {key}: lines {first} and {second}")]
    DuplicateJudgment {
        key: String,
        first: usize,
        second: usize,
    },
    #[error("{}", join_issues(.0))]
    Invalid(Vec<ValidationIssue>),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// One failed dataset-level check found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    EmptyDataset,
    DuplicateId(String),
    DanglingPairId(String),
    EmptyField { id: String, field: &'static str },
    IdenticalContexts(String),
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::EmptyDataset => f.write_str("empty dataset"),
            ValidationIssue::DuplicateId(id) => write!(f, "duplicate id: {id}"),
            ValidationIssue::DanglingPairId(id) => write!(f, "dangling pair_id: {id}"),
            ValidationIssue::EmptyField { id, field } => write!(f, "empty field: {field}, item {id}"),
            ValidationIssue::IdenticalContexts(id) => write!(f, "identical contexts: {id}"),
        }
    }
}

/// One doubly quantified target sentence with its two story contexts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusItem {
    pub id: String,
    pub language: Language,
    pub structure: Structure,
    pub target: String,
    pub context_ss: String,
    pub context_is: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

impl StimulusItem {
    pub fn context(&self, condition: Condition) -> &str {
        match condition {
            Condition::SS => &self.context_ss,
            Condition::IS => &self.context_is,
        }
    }
}

/// Dataset-level language: a single language or explicitly mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageTag {
    En,
    Zh,
    Mixed,
}

impl From<Language> for LanguageTag {
    fn from(l: Language) -> Self {
        match l {
            Language::En => LanguageTag::En,
            Language::Zh => LanguageTag::Zh,
        }
    }
}

/// Optional first record of a stimulus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub dataset: String,
    pub language: LanguageTag,
    #[serde(default)]
    pub source: String,
}

/// A parsed stimulus file: optional header plus items in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StimulusFile {
    pub header: Option<DatasetHeader>,
    pub items: Vec<StimulusItem>,
}

impl StimulusFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StimuliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| StimuliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, StimuliError> {
        let mut file = StimulusFile::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut file_language: Option<(Language, bool)> = None; // (language, from header)
        let mut mixed = false;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(raw).map_err(|e| StimuliError::Malformed {
                line,
                message: e.to_string(),
            })?;
            let Value::Object(obj) = value else {
                return Err(StimuliError::Malformed {
                    line,
                    message: "expected a JSON object".into(),
                });
            };

            if obj.contains_key("dataset") {
                if line != 1 || file.header.is_some() {
                    return Err(StimuliError::Malformed {
                        line,
                        message: "header record allowed only on line 1".into(),
                    });
                }
                let header: DatasetHeader = serde_json::from_value(Value::Object(obj))
                    .map_err(|e| StimuliError::BadHeader(e.to_string()))?;
                let header = DatasetHeader {
                    dataset: nfc(&header.dataset),
                    language: header.language,
                    source: nfc(&header.source),
                };
                match header.language {
                    LanguageTag::Mixed => mixed = true,
                    LanguageTag::En => file_language = Some((Language::En, true)),
                    LanguageTag::Zh => file_language = Some((Language::Zh, true)),
                }
                file.header = Some(header);
                continue;
            }

            let item = parse_item(&obj, line)?;
            if let Some(&first) = seen.get(&item.id) {
                return Err(StimuliError::DuplicateId {
                    id: item.id,
                    first,
                    second: line,
                });
            }
            if !mixed {
                match file_language {
                    None => file_language = Some((item.language, false)),
                    Some((expected, _)) if expected != item.language => {
                        return Err(StimuliError::LanguageMismatch {
                            found: item.language,
                            expected,
                            line,
                        })
                    }
                    Some(_) => {}
                }
            }
            seen.insert(item.id.clone(), line);
            file.items.push(item);
        }
        Ok(file)
    }

    /// Canonical serialization: fixed key order, compact JSON, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&serde_json::to_string(h).expect("header serializes"));
            out.push('\n');
        }
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        out
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

fn parse_item(obj: &Map<String, Value>, line: usize) -> Result<StimulusItem, StimuliError> {
    if let Some(extra) = obj.keys().find(|k| !ITEM_KEYS.contains(&k.as_str())) {
        return Err(StimuliError::UnknownField {
            field: extra.clone(),
            line,
        });
    }
    let text_field = |field: &'static str| -> Result<String, StimuliError> {
        match obj.get(field) {
            None | Some(Value::Null) => Err(StimuliError::MissingField { field, line }),
            Some(Value::String(s)) => {
                if s.trim().is_empty() {
                    Err(StimuliError::EmptyField { field, line })
                } else {
                    Ok(nfc(s))
                }
            }
            Some(other) => Err(StimuliError::Malformed {
                line,
                message: format!("field {field} must be a string, found {other}"),
            }),
        }
    };
    let id = text_field("id")?;
    let language = match text_field("language")?.as_str() {
        "en" => Language::En,
        "zh" => Language::Zh,
        other => {
            return Err(StimuliError::Malformed {
                line,
                message: format!("language must be \"en\" or \"zh\", found \"{other}\""),
            })
        }
    };
    let structure = Structure::from_str(&text_field("structure")?)
        .map_err(|message| StimuliError::Malformed { line, message })?;
    let target = text_field("target")?;
    let context_ss = text_field("context_ss")?;
    let context_is = text_field("context_is")?;
    let pair_id = match obj.get("pair_id") {
        None | Some(Value::Null) => None,
        Some(_) => Some(text_field("pair_id")?),
    };
    if context_ss == context_is {
        return Err(StimuliError::IdenticalContexts { id, line });
    }
    Ok(StimulusItem {
        id,
        language,
        structure,
        target,
        context_ss,
        context_is,
        pair_id,
    })
}

/// Load every stimulus item from a line-delimited JSON file, in file order.
pub fn load_stimuli(path: impl AsRef<Path>) -> Result<Vec<StimulusItem>, StimuliError> {
    StimulusFile::load(path).map(|f| f.items)
}

/// Summary of a validated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub language: LanguageTag,
    /// Item counts keyed by `"<LANG>-<STRUCTURE>"`, e.g. `"EN-UE"`.
    pub item_count_by_structure: BTreeMap<String, usize>,
    pub source: String,
}

impl DatasetManifest {
    pub fn total(&self) -> usize {
        self.item_count_by_structure.values().sum()
    }

    pub fn with_provenance(mut self, name: impl Into<String>, source: impl Into<String>) -> Self {
        self.name = name.into();
        self.source = source.into();
        self
    }
}

pub fn cell_key(language: Language, structure: Structure) -> String {
    format!("{}-{}", language.label(), structure.as_str())
}

/// Check dataset-wide invariants and count items per language x structure cell.
///
/// Every failed check is collected into [`StimuliError::Invalid`].
pub fn validate_dataset(items: &[StimulusItem]) -> Result<DatasetManifest, StimuliError> {
    let mut issues = Vec::new();
    if items.is_empty() {
        return Err(StimuliError::Invalid(vec![ValidationIssue::EmptyDataset]));
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    for item in items {
        *ids.entry(item.id.as_str()).or_default() += 1;
    }
    let mut dupes: Vec<&str> = ids.iter().filter(|(_, &n)| n > 1).map(|(id, _)| *id).collect();
    dupes.sort_unstable();
    issues.extend(dupes.into_iter().map(|id| ValidationIssue::DuplicateId(id.to_string())));

    for item in items {
        for (field, value) in [
            ("target", &item.target),
            ("context_ss", &item.context_ss),
            ("context_is", &item.context_is),
        ] {
            if value.trim().is_empty() {
                issues.push(ValidationIssue::EmptyField {
                    id: item.id.clone(),
                    field,
                });
            }
        }
        if item.context_ss == item.context_is {
            issues.push(ValidationIssue::IdenticalContexts(item.id.clone()));
        }
        if let Some(pair) = &item.pair_id {
            if !ids.contains_key(pair.as_str()) {
                issues.push(ValidationIssue::DanglingPairId(pair.clone()));
            }
        }
    }
    if !issues.is_empty() {
        return Err(StimuliError::Invalid(issues));
    }

    let mut counts = BTreeMap::new();
    for item in items {
        *counts.entry(cell_key(item.language, item.structure)).or_insert(0) += 1;
    }
    let first = items[0].language;
    let language = if items.iter().all(|i| i.language == first) {
        first.into()
    } else {
        LanguageTag::Mixed
    };
    Ok(DatasetManifest {
        name: String::new(),
        language,
        item_count_by_structure: counts,
        source: String::new(),
    })
}

/// Participant population of a human rating dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum HumanGroup {
    L1_EN,
    L1_ZH,
    L2_EN,
    L2_ZH,
}

impl HumanGroup {
    pub const ALL: [HumanGroup; 4] = [
        HumanGroup::L1_EN,
        HumanGroup::L1_ZH,
        HumanGroup::L2_EN,
        HumanGroup::L2_ZH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HumanGroup::L1_EN => "L1_EN",
            HumanGroup::L1_ZH => "L1_ZH",
            HumanGroup::L2_EN => "L2_EN",
            HumanGroup::L2_ZH => "L2_ZH",
        }
    }

    /// Language of the materials this group was tested on.
    pub fn material_language(self) -> Language {
        match self {
            HumanGroup::L1_EN | HumanGroup::L2_EN => Language::En,
            HumanGroup::L1_ZH | HumanGroup::L2_ZH => Language::Zh,
        }
    }

    /// HS1..HS4 pairing label for the group/material comparison.
    pub fn pairing(self) -> &'static str {
        match self {
            HumanGroup::L1_ZH => "HS1",
            HumanGroup::L2_ZH => "HS2",
            HumanGroup::L1_EN => "HS3",
            HumanGroup::L2_EN => "HS4",
        }
    }
}

impl fmt::Display for HumanGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HumanGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HumanGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One participant's 1-7 rating of one item in one context condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanJudgment {
    pub group: HumanGroup,
    pub participant_id: String,
    pub item_id: String,
    pub structure: Structure,
    pub condition: Condition,
    pub rating: u8,
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<HumanJudgment>, StimuliError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| StimuliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_judgments(&text)
}

pub fn parse_judgments(text: &str) -> Result<Vec<HumanJudgment>, StimuliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| StimuliError::MalformedRow {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(JUDGMENT_HEADER.iter().copied()) {
        return Err(StimuliError::BadJudgmentHeader {
            expected: JUDGMENT_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut out = Vec::new();
    let mut seen: HashMap<(HumanGroup, String, String, Condition), usize> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| StimuliError::MalformedRow {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let malformed = |message: String| StimuliError::MalformedRow { line, message };

        let group = HumanGroup::from_str(&record[0]).map_err(|tag| StimuliError::UnknownGroup { tag, line })?;
        let participant_id = nfc(&record[1]);
        let item_id = nfc(&record[2]);
        if participant_id.is_empty() || item_id.is_empty() {
            return Err(malformed("participant_id and item_id must be non-empty".into()));
        }
        let structure = Structure::from_str(&record[3]).map_err(malformed)?;
        let condition = Condition::from_str(&record[4]).map_err(malformed)?;
        let rating: i64 = record[5]
            .parse()
            .map_err(|_| malformed(format!("rating '{}' is not an integer", &record[5])))?;
        if !(1..=7).contains(&rating) {
            return Err(StimuliError::RatingOutOfRange { rating, line });
        }

        let key = (group, participant_id.clone(), item_id.clone(), condition);
        if let Some(&first) = seen.get(&key) {
            return Err(StimuliError::DuplicateJudgment {
                key: format!("({group}, {participant_id}, {item_id}, {condition})"),
                first,
                second: line,
            });
        }
        seen.insert(key, line);
        out.push(HumanJudgment {
            group,
            participant_id,
            item_id,
            structure,
            condition,
            rating: rating as u8,
        });
    }
    Ok(out)
}

pub fn judgments_to_csv(judgments: &[HumanJudgment]) -> String {
    let mut out = JUDGMENT_HEADER.join(",");
    out.push('\n');
    for j in judgments {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            j.group, j.participant_id, j.item_id, j.structure, j.condition, j.rating
        ));
    }
    out
}

/// The synthetic 8-item bundle shipped with the crate: English file then Chinese file.
///
/// Two items per language x structure cell. The first item of each cell uses
/// the published sample texts, the second is a schema-conformant variant.
pub fn bundled_dataset() -> (StimulusFile, StimulusFile) {
    (
        StimulusFile::parse(BUNDLED_EN).expect("bundled English stimuli are valid"),
        StimulusFile::parse(BUNDLED_ZH).expect("bundled Chinese stimuli are valid"),
    )
}

pub fn bundled_items() -> Vec<StimulusItem> {
    let (en, zh) = bundled_dataset();
    en.items.into_iter().chain(zh.items).collect()
}

/// Synthetic ratings for the bundled items, all four participant groups.
pub fn bundled_judgments() -> Vec<HumanJudgment> {
    parse_judgments(BUNDLED_JUDGMENTS).expect("bundled judgments are valid")
}

pub fn bundled_sources() -> [(&'static str, &'static str); 3] {
    [
        ("synthetic_en.jsonl", BUNDLED_EN),
        ("synthetic_zh.jsonl", BUNDLED_ZH),
        ("synthetic_judgments.csv", BUNDLED_JUDGMENTS),
    ]
}
