use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Material language. Serialized lowercase (`"en"`, `"zh"`) in stimulus files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "en")]
    En,
    #[serde(rename = "zh")]
    Zh,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::En, Language::Zh];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }

    /// Upper-case label used in reports and manifest cell keys.
    pub fn label(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Zh => "ZH",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" | "EN" => Ok(Language::En),
            "zh" | "ZH" => Ok(Language::Zh),
            other => Err(format!("unknown language '{other}' (expected en or zh)")),
        }
    }
}

/// Quantifier order of the target sentence.
///
/// `UE` is universal-before-existential ("Every child climbed a tree"),
/// `EU` is existential-before-universal ("A child climbed every tree").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Structure {
    UE,
    EU,
}

impl Structure {
    pub const ALL: [Structure; 2] = [Structure::UE, Structure::EU];

    pub fn as_str(self) -> &'static str {
        match self {
            Structure::UE => "UE",
            Structure::EU => "EU",
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UE" => Ok(Structure::UE),
            "EU" => Ok(Structure::EU),
            other => Err(format!("unknown structure '{other}' (expected UE or EU)")),
        }
    }
}

/// Context condition: the story favors the surface (SS) or inverse (IS) scope reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    SS,
    IS,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::SS, Condition::IS];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::SS => "SS",
            Condition::IS => "IS",
        }
    }

    pub fn other(self) -> Condition {
        match self {
            Condition::SS => Condition::IS,
            Condition::IS => Condition::SS,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SS" => Ok(Condition::SS),
            "IS" => Ok(Condition::IS),
            other => Err(format!("unknown condition '{other}' (expected SS or IS)")),
        }
    }
}
