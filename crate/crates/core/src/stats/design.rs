//! Long-format data and sum-coded design matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::StatsError;

pub const INTERCEPT: &str = "(Intercept)";

/// Response, categorical predictors and cluster labels, one entry per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub response: Vec<f64>,
    pub factors: BTreeMap<String, Vec<String>>,
    pub clusters: Vec<String>,
}

impl Dataset {
    /// Rows are their own clusters until [`Dataset::with_clusters`] is called.
    pub fn new(response: Vec<f64>) -> Self {
        let clusters = (0..response.len()).map(|i| format!("row{i}")).collect();
        Self {
            response,
            factors: BTreeMap::new(),
            clusters,
        }
    }

    pub fn with_factor<S: Into<String>>(mut self, name: &str, levels: impl IntoIterator<Item = S>) -> Self {
        self.factors
            .insert(name.to_string(), levels.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_clusters<S: Into<String>>(mut self, clusters: impl IntoIterator<Item = S>) -> Self {
        self.clusters = clusters.into_iter().map(Into::into).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn check(&self) -> Result<(), StatsError> {
        let n = self.response.len();
        if n == 0 {
            return Err(StatsError::EmptyData);
        }
        if self.clusters.len() != n {
            return Err(StatsError::LengthMismatch(format!("{} cluster labels for {n} rows", self.clusters.len())));
        }
        for (name, col) in &self.factors {
            if col.len() != n {
                return Err(StatsError::LengthMismatch(format!("factor {name} has {} values for {n} rows", col.len())));
            }
        }
        if let Some(y) = self.response.iter().find(|y| !y.is_finite()) {
            return Err(StatsError::NonFinite(format!("response value {y}")));
        }
        Ok(())
    }

    /// Sorted distinct levels of a factor.
    pub fn levels(&self, factor: &str) -> Result<Vec<String>, StatsError> {
        let col = self
            .factors
            .get(factor)
            .ok_or_else(|| StatsError::UnknownFactor(factor.to_string()))?;
        Ok(col.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect())
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            response: rows.iter().map(|&i| self.response[i]).collect(),
            factors: self
                .factors
                .iter()
                .map(|(k, col)| (k.clone(), rows.iter().map(|&i| col[i].clone()).collect()))
                .collect(),
            clusters: rows.iter().map(|&i| self.clusters[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Main(String),
    Interaction(String, String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(a) => f.write_str(a),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
        }
    }
}

/// Right-hand side of a model: main effects and two-way interactions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FactorSpec {
    pub terms: Vec<Term>,
}

impl FactorSpec {
    pub fn intercept_only() -> Self {
        Self::default()
    }

    pub fn main(factors: &[&str]) -> Self {
        Self {
            terms: factors.iter().map(|f| Term::Main(f.to_string())).collect(),
        }
    }

    /// Both main effects and their interaction.
    pub fn crossed(a: &str, b: &str) -> Self {
        Self {
            terms: vec![
                Term::Main(a.into()),
                Term::Main(b.into()),
                Term::Interaction(a.into(), b.into()),
            ],
        }
    }

    /// Parse `"a + b + a:b"` or `"a * b"`; `"1"` or `""` is intercept-only.
    pub fn parse(rhs: &str) -> Result<Self, StatsError> {
        let mut terms = Vec::new();
        let mut push = |t: Term| {
            if !terms.contains(&t) {
                terms.push(t);
            }
        };
        for part in rhs.split('+').map(str::trim).filter(|p| !p.is_empty() && *p != "1") {
            if let Some((a, b)) = part.split_once('*') {
                let (a, b) = (a.trim(), b.trim());
                push(Term::Main(a.into()));
                push(Term::Main(b.into()));
                push(Term::Interaction(a.into(), b.into()));
            } else if let Some((a, b)) = part.split_once(':') {
                push(Term::Interaction(a.trim().into(), b.trim().into()));
            } else if part.chars().all(|c| c.is_alphanumeric() || c == '_') {
                push(Term::Main(part.into()));
            } else {
                return Err(StatsError::BadFormula(rhs.to_string()));
            }
        }
        Ok(Self { terms })
    }

    /// Factors referenced by any term, in first-mention order.
    pub fn factors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for term in &self.terms {
            let names: Vec<&String> = match term {
                Term::Main(a) => vec![a],
                Term::Interaction(a, b) => vec![a, b],
            };
            for n in names {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out
    }

    pub fn formula(&self, response: &str) -> String {
        if self.terms.is_empty() {
            return format!("{response} ~ 1");
        }
        let rhs: Vec<String> = self.terms.iter().map(ToString::to_string).collect();
        format!("{response} ~ {}", rhs.join(" + "))
    }
}

/// Sum-coded columns of one factor: level `j < k-1` gets `+1` in column `j`,
/// the last level gets `-1` in every column.
fn sum_code(level_index: usize, k: usize) -> Vec<f64> {
    (0..k - 1)
        .map(|j| {
            if level_index == j {
                1.0
            } else if level_index == k - 1 {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// A built design matrix with its column names and factor levels.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub columns: Vec<String>,
    pub levels: BTreeMap<String, Vec<String>>,
    pub terms: Vec<Term>,
}

impl Design {
    /// Build the sum-coded design. Levels are the sorted distinct values
    /// seen in `data` unless `fixed_levels` supplies them.
    pub fn build(
        data: &Dataset,
        spec: &FactorSpec,
        fixed_levels: Option<&BTreeMap<String, Vec<String>>>,
    ) -> Result<Self, StatsError> {
        data.check()?;
        let mut levels = BTreeMap::new();
        for f in spec.factors() {
            let lv = match fixed_levels.and_then(|m| m.get(&f)) {
                Some(lv) => lv.clone(),
                None => data.levels(&f)?,
            };
            if lv.len() < 2 {
                return Err(StatsError::TooFewLevels { factor: f, levels: lv });
            }
            levels.insert(f, lv);
        }

        // Per-row coded vectors for each factor.
        let mut coded: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
        for (f, lv) in &levels {
            let col = data.factors.get(f).ok_or_else(|| StatsError::UnknownFactor(f.clone()))?;
            let rows = col
                .iter()
                .map(|v| {
                    lv.iter()
                        .position(|l| l == v)
                        .map(|i| sum_code(i, lv.len()))
                        .ok_or_else(|| StatsError::UnknownLevel {
                            factor: f.clone(),
                            level: v.clone(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            coded.insert(f.as_str(), rows);
        }

        let n = data.len();
        let mut columns = vec![INTERCEPT.to_string()];
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        for term in &spec.terms {
            match term {
                Term::Main(a) => {
                    let lv = &levels[a];
                    for (j, level) in lv.iter().take(lv.len() - 1).enumerate() {
                        columns.push(format!("{a}[{level}]"));
                        cols.push(coded[a.as_str()].iter().map(|r| r[j]).collect());
                    }
                }
                Term::Interaction(a, b) => {
                    let (la, lb) = (&levels[a], &levels[b]);
                    for (i, level_a) in la.iter().take(la.len() - 1).enumerate() {
                        for (j, level_b) in lb.iter().take(lb.len() - 1).enumerate() {
                            columns.push(format!("{a}[{level_a}]:{b}[{level_b}]"));
                            cols.push(
                                coded[a.as_str()]
                                    .iter()
                                    .zip(&coded[b.as_str()])
                                    .map(|(ra, rb)| ra[i] * rb[j])
                                    .collect(),
                            );
                        }
                    }
                }
            }
        }
        let x = DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]);
        Ok(Self {
            x,
            columns,
            levels,
            terms: spec.terms.clone(),
        })
    }

    pub fn response(data: &Dataset) -> DVector<f64> {
        DVector::from_column_slice(&data.response)
    }

    /// Error if any level of a main effect, or any level combination of an
    /// interaction, has no rows.
    pub fn check_cells(&self, data: &Dataset) -> Result<(), StatsError> {
        for term in &self.terms {
            let names: Vec<&str> = match term {
                Term::Main(a) => vec![a.as_str()],
                Term::Interaction(a, b) => vec![a.as_str(), b.as_str()],
            };
            check_grid(&names, &self.levels, data)?;
        }
        Ok(())
    }
}

fn check_grid(names: &[&str], levels: &BTreeMap<String, Vec<String>>, data: &Dataset) -> Result<(), StatsError> {
    let present: BTreeSet<Vec<&str>> = (0..data.len())
        .map(|r| names.iter().map(|f| data.factors[*f][r].as_str()).collect())
        .collect();
    let mut combo = vec![0usize; names.len()];
    loop {
        let cell: Vec<&str> = names.iter().zip(&combo).map(|(f, &i)| levels[*f][i].as_str()).collect();
        if !present.contains(&cell) {
            let label = names
                .iter()
                .zip(&cell)
                .map(|(f, l)| format!("{f}={l}"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(StatsError::EmptyCell(label));
        }
        // Odometer increment over the level grid.
        let mut pos = names.len();
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            combo[pos] += 1;
            if combo[pos] < levels[names[pos]].len() {
                break;
            }
            combo[pos] = 0;
        }
    }
}
