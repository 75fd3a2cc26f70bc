//! Point estimation: least squares via Householder QR, logistic regression via
//! penalized Newton (IRLS).

use nalgebra::{DMatrix, DVector};

use super::StatsError;

const ALIAS_TOL: f64 = 1e-9;

/// Columns (by name) that lie in the span of the columns before them.
pub fn aliased_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let (n, p) = x.shape();
    if n < p {
        // More columns than rows: report the surplus trailing columns too.
        let mut head = aliased_columns(&x.columns(0, n).into_owned(), &names[..n]);
        head.extend(names[n..].iter().cloned());
        return head;
    }
    let r = x.clone().qr().r();
    (0..p)
        .filter(|&j| {
            let norm = x.column(j).norm();
            norm == 0.0 || r[(j, j)].abs() <= ALIAS_TOL * norm
        })
        .map(|j| names[j].clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    pub rss: f64,
}

/// Least squares through the thin QR factorization; rank deficiency is an
/// error listing the aliased columns.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit, StatsError> {
    let aliased = aliased_columns(x, names);
    if !aliased.is_empty() {
        return Err(StatsError::RankDeficient(aliased));
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    let beta = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| StatsError::RankDeficient(names.to_vec()))?;
    let resid = y - x * &beta;
    Ok(OlsFit {
        rss: resid.norm_squared(),
        beta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: DVector<f64>,
    /// Separation was detected and the estimate is ridge-penalized.
    pub separated: bool,
    pub iterations: usize,
}

/// Penalty applied when separation makes the unpenalized MLE infinite.
pub const SEPARATION_RIDGE: f64 = 1e-6;

const MAX_LINEAR_PREDICTOR: f64 = 30.0;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta
        .iter()
        .zip(y.iter())
        .map(|(&e, &yi)| {
            // log(1 + e^e) computed without overflow.
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            yi * e - softplus
        })
        .sum();
    ll - 0.5 * ridge * beta.norm_squared()
}

enum Newton {
    Converged(DVector<f64>, usize),
    Diverged,
}

fn newton(x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64, max_iter: usize) -> Newton {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut ll = penalized_loglik(x, y, &beta, ridge);
    for iter in 1..=max_iter {
        let eta = x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        let grad = x.transpose() * (y - &mu) - &beta * ridge;
        let mut hess = x.transpose() * DMatrix::from_diagonal(&w) * x;
        for j in 0..p {
            hess[(j, j)] += ridge;
        }
        let Some(chol) = hess.cholesky() else {
            return Newton::Diverged;
        };
        let step = chol.solve(&grad);
        // Step halving keeps the penalized likelihood monotone.
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = penalized_loglik(x, y, &candidate, ridge);
        while cand_ll < ll - 1e-12 && scale > 1e-8 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ll = penalized_loglik(x, y, &candidate, ridge);
        }
        let change = (&candidate - &beta).amax();
        beta = candidate;
        ll = cand_ll;
        if !beta.iter().all(|b| b.is_finite()) {
            return Newton::Diverged;
        }
        if change < 1e-10 {
            return Newton::Converged(beta, iter);
        }
    }
    Newton::Diverged
}

/// Maximum likelihood logistic regression. When the data are (quasi-)
/// separated, refits with a ridge of [`SEPARATION_RIDGE`] and flags the result.
pub fn logistic(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LogisticFit, StatsError> {
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(StatsError::NonBinary(*v));
    }
    let aliased = aliased_columns(x, names);
    if !aliased.is_empty() {
        return Err(StatsError::RankDeficient(aliased));
    }
    if let Newton::Converged(beta, iterations) = newton(x, y, 0.0, 100) {
        let max_eta = (x * &beta).amax();
        if max_eta <= MAX_LINEAR_PREDICTOR {
            return Ok(LogisticFit {
                beta,
                separated: false,
                iterations,
            });
        }
    }
    match newton(x, y, SEPARATION_RIDGE, 500) {
        Newton::Converged(beta, iterations) => Ok(LogisticFit {
            beta,
            separated: true,
            iterations,
        }),
        Newton::Diverged => Err(StatsError::NoConvergence),
    }
}
