//! Sum-coded regressions with item-clustered bootstrap inference.
//!
//! Clusters (items) are resampled with replacement within strata formed by
//! the factors that are constant inside every cluster, so each replicate
//! keeps every between-item level. Replicate `r` draws from a ChaCha stream
//! derived from `(seed, r)`, which makes results independent of thread count.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{Dataset, Design, FactorSpec, INTERCEPT};
use super::fit::{logistic, ols};
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { n_boot: 2000, seed: 20_240_601 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    /// 95% percentile interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub formula: String,
    pub family: Family,
    /// Estimates on the response scale (linear) or log-odds (logistic).
    pub coefficients: BTreeMap<String, Coefficient>,
    pub coding: String,
    pub cluster: String,
    pub n_boot: usize,
    pub seed: u64,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Separation detected; estimates carry a small ridge penalty.
    pub separation: bool,
    /// Constant response: slopes are exactly zero.
    pub degenerate: bool,
    /// Replicates that could not be fitted and were dropped.
    pub failed_replicates: usize,
    pub levels: BTreeMap<String, Vec<String>>,
    pub columns: Vec<String>,
    #[serde(skip)]
    replicates: Vec<Vec<f64>>,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.get(name)
    }

    /// Bootstrap draws of every coefficient, in `columns` order.
    pub fn replicates(&self) -> &[Vec<f64>] {
        &self.replicates
    }

    fn estimates(&self) -> Vec<f64> {
        self.columns.iter().map(|c| self.coefficients[c].estimate).collect()
    }
}

/// Relative level below which a fitted value is rounding noise around an exact zero.
const ZERO_TOLERANCE: f64 = 1e-9;

/// `x` with rounding noise relative to `scale` flushed to exactly 0.
fn snap(x: f64, scale: f64) -> f64 {
    if x.abs() <= ZERO_TOLERANCE * scale.max(1.0) {
        0.0
    } else {
        x
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().filter(|x| x.is_finite()).fold(0.0, |m, x| m.max(x.abs()))
}

fn snap_all(v: &mut [f64]) {
    let scale = max_abs(v);
    v.iter_mut().for_each(|x| *x = snap(*x, scale));
}

/// Two-sided percentile-bootstrap p-value: twice the smaller tail mass of the
/// bootstrap distribution on either side of zero, with the +1 correction.
pub fn percentile_pvalue(draws: &[f64]) -> f64 {
    if draws.is_empty() {
        return f64::NAN;
    }
    let below = draws.iter().filter(|&&d| d <= 0.0).count();
    let above = draws.iter().filter(|&&d| d >= 0.0).count();
    let tail = below.min(above) as f64;
    (2.0 * (tail + 1.0) / (draws.len() as f64 + 1.0)).min(1.0)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(estimate: f64, draws: &[f64]) -> Coefficient {
    if draws.is_empty() {
        return Coefficient {
            estimate,
            std_error: f64::NAN,
            p_value: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
        };
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 {
        draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Coefficient {
        estimate,
        std_error: var.sqrt(),
        p_value: percentile_pvalue(draws),
        ci_low: quantile(&sorted, 0.025),
        ci_high: quantile(&sorted, 0.975),
    }
}

/// Cluster row indices grouped into strata of between-cluster factor levels.
fn strata(data: &Dataset) -> Vec<Vec<Vec<usize>>> {
    let mut clusters: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (row, c) in data.clusters.iter().enumerate() {
        clusters.entry(c.as_str()).or_default().push(row);
    }
    let between: Vec<&String> = data
        .factors
        .iter()
        .filter(|(_, col)| {
            clusters
                .values()
                .all(|rows| rows.iter().all(|&r| col[r] == col[rows[0]]))
        })
        .map(|(name, _)| name)
        .collect();
    let mut out: BTreeMap<Vec<&str>, Vec<Vec<usize>>> = BTreeMap::new();
    for rows in clusters.into_values() {
        let key = between.iter().map(|f| data.factors[*f][rows[0]].as_str()).collect();
        out.entry(key).or_default().push(rows);
    }
    out.into_values().collect()
}

/// Resampling `G` clusters with replacement understates the variance of a
/// stratum mean by `(G - 1) / G`. Replicate deviations from the point
/// estimate are scaled by `sqrt(G / (G - 1))`, with `G` the harmonic mean
/// stratum size over strata holding at least two clusters.
fn small_sample_inflation(strata: &[Vec<Vec<usize>>]) -> f64 {
    let sizes: Vec<f64> = strata.iter().map(|s| s.len() as f64).filter(|&g| g >= 2.0).collect();
    if sizes.is_empty() {
        return 1.0;
    }
    let g = sizes.len() as f64 / sizes.iter().map(|g| 1.0 / g).sum::<f64>();
    (g / (g - 1.0)).sqrt()
}

fn resample(strata: &[Vec<Vec<usize>>], seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    let mut rows = Vec::new();
    for stratum in strata {
        for _ in 0..stratum.len() {
            rows.extend_from_slice(&stratum[rng.gen_range(0..stratum.len())]);
        }
    }
    rows
}

struct PointFit {
    beta: Vec<f64>,
    separated: bool,
}

fn point_fit(data: &Dataset, spec: &FactorSpec, family: Family, levels: Option<&BTreeMap<String, Vec<String>>>) -> Result<(PointFit, Design), StatsError> {
    let design = Design::build(data, spec, levels)?;
    let y = Design::response(data);
    let fit = match family {
        Family::Gaussian => PointFit {
            beta: ols(&design.x, &y, &design.columns)?.beta.iter().copied().collect(),
            separated: false,
        },
        Family::Binomial => {
            let f = logistic(&design.x, &y, &design.columns)?;
            PointFit {
                beta: f.beta.iter().copied().collect(),
                separated: f.separated,
            }
        }
    };
    Ok((fit, design))
}

fn is_constant(y: &[f64]) -> bool {
    y.iter().all(|&v| v == y[0])
}

fn fit_model(data: &Dataset, spec: &FactorSpec, family: Family, opts: BootstrapOptions, response: &str) -> Result<RegressionResult, StatsError> {
    data.check()?;
    if opts.n_boot == 0 {
        return Err(StatsError::BadOption("n_boot must be positive".into()));
    }
    // Empty cells are reported before they can surface as aliased columns.
    Design::build(data, spec, None)?.check_cells(data)?;
    let (fit, design) = point_fit(data, spec, family, None)?;
    let degenerate = is_constant(&data.response);

    let constant_fit = |beta: &mut Vec<f64>| {
        // Constant response: the intercept carries everything.
        if family == Family::Gaussian {
            beta.iter_mut().for_each(|b| *b = 0.0);
            beta[0] = data.response[0];
        } else {
            beta.iter_mut().skip(1).for_each(|b| *b = 0.0);
        }
    };
    let mut beta = fit.beta;
    if degenerate {
        constant_fit(&mut beta);
    }
    snap_all(&mut beta);

    let groups = strata(data);
    let draws: Vec<Option<Vec<f64>>> = (0..opts.n_boot)
        .into_par_iter()
        .map(|r| {
            let rows = resample(&groups, opts.seed, r);
            let sample = data.select(&rows);
            let (f, _) = point_fit(&sample, spec, family, Some(&design.levels)).ok()?;
            let mut b = f.beta;
            if is_constant(&sample.response) {
                constant_fit(&mut b);
                if family == Family::Binomial {
                    // Intercept of a constant binary sample is only ridge-bounded.
                    b[0] = f64::NAN;
                }
            }
            Some(b)
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    let inflate = small_sample_inflation(&groups);
    let replicates: Vec<Vec<f64>> = draws
        .into_iter()
        .flatten()
        .map(|b| {
            let mut r: Vec<f64> = b.iter().zip(&beta).map(|(d, e)| e + inflate * (d - e)).collect();
            snap_all(&mut r);
            r
        })
        .collect();

    let coefficients = design
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = replicates.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
            (name.clone(), summarize(beta[j], &col))
        })
        .collect();

    Ok(RegressionResult {
        formula: spec.formula(response),
        family,
        coefficients,
        coding: "sum".into(),
        cluster: "item".into(),
        n_boot: opts.n_boot,
        seed: opts.seed,
        n_obs: data.len(),
        n_clusters: groups.iter().map(Vec::len).sum(),
        separation: fit.separated,
        degenerate,
        failed_replicates: failed,
        levels: design.levels.clone(),
        columns: design.columns.clone(),
        replicates,
    })
}

/// Logistic regression of binary preference labels (1 = SS preferred).
pub fn fit_preference_model(data: &Dataset, spec: &FactorSpec, opts: BootstrapOptions) -> Result<RegressionResult, StatsError> {
    fit_model(data, spec, Family::Binomial, opts, "preference")
}

/// Linear regression of surprisals.
pub fn fit_surprisal_model(data: &Dataset, spec: &FactorSpec, opts: BootstrapOptions) -> Result<RegressionResult, StatsError> {
    fit_model(data, spec, Family::Gaussian, opts, "surprisal")
}

/// Holm step-down adjustment; output in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub factor: String,
    pub pair: (String, String),
    /// Effect of the first level minus the second, on the model scale.
    pub estimate: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
}

/// Effect of each level of `factor` as a linear combination of coefficients.
fn level_effect(result: &RegressionResult, factor: &str, level_index: usize, beta: &[f64]) -> f64 {
    let levels = &result.levels[factor];
    let k = levels.len();
    let col = |lv: &str| {
        let name = format!("{factor}[{lv}]");
        result.columns.iter().position(|c| *c == name).expect("main-effect column")
    };
    if level_index < k - 1 {
        beta[col(&levels[level_index])]
    } else {
        -levels[..k - 1].iter().map(|lv| beta[col(lv)]).sum::<f64>()
    }
}

/// All pairwise level contrasts of a main effect, with bootstrap p-values
/// Holm-adjusted across the pairs.
pub fn pairwise_contrasts(result: &RegressionResult, factor: &str) -> Result<Vec<Contrast>, StatsError> {
    let levels = result
        .levels
        .get(factor)
        .ok_or_else(|| StatsError::UnknownFactor(factor.to_string()))?;
    if !result.columns.iter().any(|c| c.starts_with(&format!("{factor}[")) && !c.contains(':')) {
        return Err(StatsError::UnknownFactor(factor.to_string()));
    }
    let estimates = result.estimates();
    let mut out = Vec::new();
    for a in 0..levels.len() {
        for b in a + 1..levels.len() {
            let contrast = |beta: &[f64]| level_effect(result, factor, a, beta) - level_effect(result, factor, b, beta);
            let draws: Vec<f64> = result
                .replicates
                .iter()
                .map(|r| snap(contrast(r), max_abs(r)))
                .filter(|v| v.is_finite())
                .collect();
            out.push(Contrast {
                factor: factor.to_string(),
                pair: (levels[a].clone(), levels[b].clone()),
                estimate: snap(contrast(&estimates), max_abs(&estimates)),
                p_value: percentile_pvalue(&draws),
                adjusted_p: 0.0,
            });
        }
    }
    let adjusted = holm_adjust(&out.iter().map(|c| c.p_value).collect::<Vec<_>>());
    for (c, p) in out.iter_mut().zip(adjusted) {
        c.adjusted_p = p;
    }
    Ok(out)
}

/// Intercept-only convenience: the grand mean (linear) or log-odds (logistic).
pub fn intercept(result: &RegressionResult) -> f64 {
    result.coefficients[INTERCEPT].estimate
}

/// Predicted values from a coefficient vector; exposed for oracle checks.
pub fn predict(design: &Design, beta: &[f64]) -> DVector<f64> {
    &design.x * DVector::from_column_slice(beta)
}
