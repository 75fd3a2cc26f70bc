//! Fixed-effects ANOVA with Type II sums of squares and Tukey HSD post-hocs.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::design::{Dataset, Design, FactorSpec, Term};
use super::dist::{f_sf, t_two_sided, tukey_pvalue};
use super::fit::ols;
use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaEffect {
    pub term: String,
    pub ss: f64,
    /// (numerator, denominator) degrees of freedom.
    pub df: (usize, usize),
    pub f: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyContrast {
    /// A factor name, or `a:b` for comparisons between cells.
    pub term: String,
    pub pair: (String, String),
    /// Mean of the first level minus the second.
    pub difference: f64,
    pub q: f64,
    /// Two-sided t-test p-value without multiplicity adjustment.
    pub raw_p: f64,
    pub adjusted_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factors: Vec<String>,
    pub effects: Vec<AnovaEffect>,
    pub residual_ss: f64,
    pub residual_df: usize,
    pub posthoc: Vec<TukeyContrast>,
}

impl AnovaResult {
    pub fn effect(&self, term: &str) -> Option<&AnovaEffect> {
        self.effects.iter().find(|e| e.term == term)
    }

    pub fn posthoc_for<'a>(&'a self, term: &'a str) -> impl Iterator<Item = &'a TukeyContrast> + 'a {
        self.posthoc.iter().filter(move |c| c.term == term)
    }
}

/// Post-hoc terms default to every main effect when `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnovaOptions {
    pub posthoc: Option<Vec<String>>,
}

fn spec_for(factors: &[&str]) -> Result<FactorSpec, StatsError> {
    match factors {
        [a] => Ok(FactorSpec::main(&[a])),
        [a, b] => Ok(FactorSpec::crossed(a, b)),
        _ => Err(StatsError::BadOption(format!(
            "anova takes one or two factors, got {}",
            factors.len()
        ))),
    }
}

fn cell_rows(data: &Dataset, factors: &[&str]) -> BTreeMap<Vec<String>, Vec<usize>> {
    let mut cells: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for r in 0..data.len() {
        let key = factors.iter().map(|f| data.factors[*f][r].clone()).collect();
        cells.entry(key).or_default().push(r);
    }
    cells
}

struct Fitted {
    rss: f64,
    fitted: DVector<f64>,
}

fn fit_terms(data: &Dataset, terms: Vec<Term>, levels: &BTreeMap<String, Vec<String>>) -> Result<Fitted, StatsError> {
    let design = Design::build(data, &FactorSpec { terms }, Some(levels))?;
    let y = Design::response(data);
    let fit = ols(&design.x, &y, &design.columns)?;
    Ok(Fitted {
        rss: fit.rss,
        fitted: &design.x * fit.beta,
    })
}

/// Type II sum of squares for each term: the RSS increase when the term is
/// dropped from the model containing every term that does not contain it.
fn type2_table(data: &Dataset, spec: &FactorSpec, levels: &BTreeMap<String, Vec<String>>) -> Result<(Vec<(Term, f64, usize)>, f64, usize), StatsError> {
    let full = Design::build(data, spec, Some(levels))?;
    let y = Design::response(data);
    let full_fit = ols(&full.x, &y, &full.columns)?;
    let residual_df = data
        .len()
        .checked_sub(full.columns.len())
        .filter(|&d| d > 0)
        .ok_or_else(|| StatsError::TooFewObservations("no residual degrees of freedom".into()))?;

    let mut rows = Vec::new();
    for term in &spec.terms {
        let contains = |t: &Term| match (term, t) {
            (Term::Main(a), Term::Interaction(x, y)) => a == x || a == y,
            _ => t == term,
        };
        let without: Vec<Term> = spec.terms.iter().filter(|t| !contains(t)).cloned().collect();
        let with: Vec<Term> = without.iter().cloned().chain([term.clone()]).collect();
        let ss = (fit_terms(data, without, levels)?.rss - fit_terms(data, with, levels)?.rss).max(0.0);
        let df = term_df(term, levels);
        rows.push((term.clone(), ss, df));
    }
    Ok((rows, full_fit.rss, residual_df))
}

fn term_df(term: &Term, levels: &BTreeMap<String, Vec<String>>) -> usize {
    match term {
        Term::Main(a) => levels[a].len() - 1,
        Term::Interaction(a, b) => (levels[a].len() - 1) * (levels[b].len() - 1),
    }
}

fn f_stat(ss: f64, df: usize, rss: f64, residual_df: usize, constant: bool) -> (f64, f64) {
    if constant || ss == 0.0 {
        return (0.0, 1.0);
    }
    let ms_error = rss / residual_df as f64;
    if ms_error == 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let f = (ss / df as f64) / ms_error;
    (f, f_sf(f, df as f64, residual_df as f64))
}

/// One- or two-factor ANOVA on `data.response`. Two factors include their
/// interaction and need at least two observations in every cell.
pub fn anova(data: &Dataset, factors: &[&str], options: &AnovaOptions) -> Result<AnovaResult, StatsError> {
    data.check()?;
    let spec = spec_for(factors)?;
    let mut levels = BTreeMap::new();
    for f in factors {
        let lv = data.levels(f)?;
        if lv.len() < 2 {
            return Err(StatsError::TooFewLevels {
                factor: f.to_string(),
                levels: lv,
            });
        }
        levels.insert(f.to_string(), lv);
    }
    let design = Design::build(data, &spec, Some(&levels))?;
    design.check_cells(data)?;
    if factors.len() == 2 {
        for (cell, rows) in cell_rows(data, factors) {
            if rows.len() < 2 {
                let label = factors
                    .iter()
                    .zip(&cell)
                    .map(|(f, l)| format!("{f}={l}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(StatsError::TooFewObservations(format!(
                    "cell {label} has {} observation(s); interaction needs at least 2",
                    rows.len()
                )));
            }
        }
    }

    let constant = data.response.iter().all(|&v| v == data.response[0]);
    let (rows, residual_ss, residual_df) = type2_table(data, &spec, &levels)?;
    let effects = rows
        .into_iter()
        .map(|(term, ss, df)| {
            let (f, p_value) = f_stat(ss, df, residual_ss, residual_df, constant);
            AnovaEffect {
                term: term.to_string(),
                ss,
                df: (df, residual_df),
                f,
                p_value,
            }
        })
        .collect();

    let requested = options
        .posthoc
        .clone()
        .unwrap_or_else(|| factors.iter().map(|f| f.to_string()).collect());
    let ms_error = residual_ss / residual_df as f64;
    let mut posthoc = Vec::new();
    for term in &requested {
        posthoc.extend(tukey(data, factors, term, ms_error, residual_df, constant)?);
    }

    Ok(AnovaResult {
        factors: factors.iter().map(|f| f.to_string()).collect(),
        effects,
        residual_ss,
        residual_df,
        posthoc,
    })
}

/// A level (or cell) mean with its variance multiplier: Var(mean) = MSE * v.
struct LevelMean {
    label: String,
    mean: f64,
    v: f64,
}

fn cell_mean(data: &Dataset, rows: &[usize]) -> f64 {
    rows.iter().map(|&r| data.response[r]).sum::<f64>() / rows.len() as f64
}

/// Unweighted marginal means of `term` (a factor or `a:b` cells).
fn level_means(data: &Dataset, factors: &[&str], term: &str) -> Result<Vec<LevelMean>, StatsError> {
    let cells = cell_rows(data, factors);
    if let Some((a, b)) = term.split_once(':') {
        if !(factors.contains(&a) && factors.contains(&b)) {
            return Err(StatsError::UnknownFactor(term.to_string()));
        }
        return Ok(cells
            .iter()
            .map(|(key, rows)| LevelMean {
                label: factors
                    .iter()
                    .zip(key)
                    .map(|(f, l)| format!("{f}={l}"))
                    .collect::<Vec<_>>()
                    .join(","),
                mean: cell_mean(data, rows),
                v: 1.0 / rows.len() as f64,
            })
            .collect());
    }
    let idx = factors
        .iter()
        .position(|f| *f == term)
        .ok_or_else(|| StatsError::UnknownFactor(term.to_string()))?;
    let mut by_level: BTreeMap<&str, Vec<&Vec<usize>>> = BTreeMap::new();
    for (key, rows) in &cells {
        by_level.entry(key[idx].as_str()).or_default().push(rows);
    }
    Ok(by_level
        .into_iter()
        .map(|(level, groups)| {
            let m = groups.len() as f64;
            LevelMean {
                label: level.to_string(),
                mean: groups.iter().map(|rows| cell_mean(data, rows)).sum::<f64>() / m,
                v: groups.iter().map(|rows| 1.0 / rows.len() as f64).sum::<f64>() / (m * m),
            }
        })
        .collect())
}

fn tukey(data: &Dataset, factors: &[&str], term: &str, ms_error: f64, df: usize, constant: bool) -> Result<Vec<TukeyContrast>, StatsError> {
    let means = level_means(data, factors, term)?;
    let k = means.len();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&means[i], &means[j]);
            let difference = a.mean - b.mean;
            // Tukey-Kramer: q = |diff| / sqrt(MSE (v_i + v_j) / 2).
            let se = (ms_error * (a.v + b.v) / 2.0).sqrt();
            let (q, raw_p, adjusted_p) = if constant || difference == 0.0 {
                (0.0, 1.0, 1.0)
            } else if se == 0.0 {
                (f64::INFINITY, 0.0, 0.0)
            } else {
                let q = difference.abs() / se;
                let raw = t_two_sided(q / std::f64::consts::SQRT_2, df as f64);
                // The family-wise p can never fall below the per-pair p.
                (q, raw, tukey_pvalue(q, k, df as f64).max(raw))
            };
            out.push(TukeyContrast {
                term: term.to_string(),
                pair: (a.label.clone(), b.label.clone()),
                difference,
                q,
                raw_p,
                adjusted_p,
            });
        }
    }
    Ok(out)
}

/// Permutation p-value for one ANOVA term (Freedman-Lane: residuals of the
/// model without the term are shuffled and added back to its fitted values).
pub fn anova_permutation_p(data: &Dataset, factors: &[&str], term: &str, n_perm: usize, seed: u64) -> Result<f64, StatsError> {
    let observed = anova(data, factors, &AnovaOptions { posthoc: Some(vec![]) })?;
    let f_obs = observed
        .effect(term)
        .ok_or_else(|| StatsError::UnknownFactor(term.to_string()))?
        .f;
    let spec = spec_for(factors)?;
    let levels: BTreeMap<String, Vec<String>> = factors
        .iter()
        .map(|f| Ok((f.to_string(), data.levels(f)?)))
        .collect::<Result<_, StatsError>>()?;
    let reduced: Vec<Term> = spec.terms.iter().filter(|t| t.to_string() != term).cloned().collect();
    let base = fit_terms(data, reduced, &levels)?;
    let y = Design::response(data);
    let mut resid: Vec<f64> = (&y - &base.fitted).iter().copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    let mut shuffled = data.clone();
    for _ in 0..n_perm {
        resid.shuffle(&mut rng);
        shuffled.response = base.fitted.iter().zip(&resid).map(|(f, r)| f + r).collect();
        let (rows, rss, rdf) = type2_table(&shuffled, &spec, &levels)?;
        let (_, ss, df) = rows
            .into_iter()
            .find(|(t, _, _)| t.to_string() == term)
            .expect("term present in spec");
        let (f, _) = f_stat(ss, df, rss, rdf, false);
        if f >= f_obs * (1.0 - 1e-12) {
            exceed += 1;
        }
    }
    Ok((exceed as f64 + 1.0) / (n_perm as f64 + 1.0))
}
