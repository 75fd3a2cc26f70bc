//! Distribution functions: studentized range, F and t tail probabilities.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

// 16-point Gauss-Legendre nodes and weights on [-1, 1] (positive half).
const GL_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

/// Composite 16-point Gauss-Legendre over `[a, b]` with `panels` equal panels.
fn integrate(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let width = (b - a) / panels as f64;
    let half = 0.5 * width;
    let mut total = 0.0;
    for i in 0..panels {
        let mid = a + (i as f64 + 0.5) * width;
        let mut panel = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
            panel += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += panel * half;
    }
    total
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// P(range of `k` iid standard normals < `w`).
fn range_cdf_normal(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    // The minimum of the sample sits at z; the other k - 1 fall in [z, z + w].
    let value = integrate(-8.5, 8.5, 26, |z| {
        let inner = normal_cdf(z + w) - normal_cdf(z);
        if inner <= 0.0 {
            0.0
        } else {
            normal_pdf(z) * inner.powi(km1)
        }
    });
    (k as f64 * value).clamp(0.0, 1.0)
}

/// CDF of the studentized range distribution with `k` groups and `df`
/// error degrees of freedom.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2, "studentized range needs at least two groups");
    if q.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if q <= 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return 1.0;
    }
    if df > 25_000.0 {
        return range_cdf_normal(q, k);
    }
    // s = sqrt(chi2_df / df) has density df^(df/2) s^(df-1) e^(-df s^2 / 2) / (Gamma(df/2) 2^(df/2 - 1)).
    let log_norm = 0.5 * df * df.ln() - ln_gamma(0.5 * df) - (0.5 * df - 1.0) * std::f64::consts::LN_2;
    let spread = 12.0 / df.sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread;
    let value = integrate(lo, hi, 30, |s| {
        if s <= 0.0 {
            return 0.0;
        }
        let log_density = log_norm + (df - 1.0) * s.ln() - 0.5 * df * s * s;
        log_density.exp() * range_cdf_normal(q * s, k)
    });
    value.clamp(0.0, 1.0)
}

/// Upper tail of the studentized range: the Tukey HSD p-value for statistic `q`.
pub fn tukey_pvalue(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - ptukey(q, k, df)).clamp(0.0, 1.0)
}

/// P(F > f) for an F(d1, d2) variate.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    FisherSnedecor::new(d1, d2)
        .map(|d| d.sf(f).clamp(0.0, 1.0))
        .unwrap_or(f64::NAN)
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    StudentsT::new(0.0, 1.0, df)
        .map(|d| (2.0 * d.sf(t.abs())).clamp(0.0, 1.0))
        .unwrap_or(f64::NAN)
}
