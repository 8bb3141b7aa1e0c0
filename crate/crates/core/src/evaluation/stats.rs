use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation (n − 1 denominator).
pub fn mean_std(values: &[f64]) -> Result<MeanStd, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(MeanStd { mean, std, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    /// Alternative: mean(a) < mean(b).
    OneLess,
    /// Alternative: mean(a) > mean(b).
    OneGreater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub sided: Sided,
    pub alpha: f64,
}

impl TTestResult {
    pub fn significant(&self) -> bool {
        self.p < self.alpha
    }
}

pub const ALPHA: f64 = 0.05;

/// Regularized incomplete beta `I_x(a, b)`. For tiny `x` the hypergeometric
/// series is summed in log space, where the library routine underflows.
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x >= 1e-6 {
        return beta_reg(a, b, x);
    }
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..200 {
        let n = n as f64;
        term *= (a + b + n) / (a + 1.0 + n) * x;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    (a * x.ln() + b * (-x).ln_1p() - a.ln() - ln_beta(a, b) + sum.ln()).exp()
}

/// `P(T ≤ t)` and `P(T ≥ t)` for Student's t with `df` degrees of freedom,
/// from the regularized incomplete beta function.
pub fn student_t_tails(t: f64, df: f64) -> (f64, f64) {
    if t.is_infinite() {
        return if t > 0.0 { (1.0, 0.0) } else { (0.0, 1.0) };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    if t < 0.0 {
        (tail, 1.0 - tail)
    } else {
        (1.0 - tail, tail)
    }
}

/// Two-sample t-test; Welch's unequal-variance form unless `pooled`.
pub fn t_test(a: &[f64], b: &[f64], sided: Sided, pooled: bool) -> Result<TTestResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples {
            a: a.len(),
            b: b.len(),
        });
    }
    let (sa, sb) = (mean_std(a)?, mean_std(b)?);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa.std * sa.std, sb.std * sb.std);
    let diff = sa.mean - sb.mean;
    let (se2, df) = if pooled {
        let sp = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
        (sp * (1.0 / na + 1.0 / nb), na + nb - 2.0)
    } else {
        let (qa, qb) = (va / na, vb / nb);
        let se2 = qa + qb;
        let denom = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
        (se2, if denom > 0.0 { se2 * se2 / denom } else { na + nb - 2.0 })
    };
    if se2 == 0.0 && diff == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let t = if se2 == 0.0 {
        diff.signum() * f64::INFINITY
    } else {
        diff / se2.sqrt()
    };
    let (lower, upper) = student_t_tails(t, df);
    let p = match sided {
        Sided::OneLess => lower,
        Sided::OneGreater => upper,
        Sided::TwoSided => (2.0 * lower.min(upper)).min(1.0),
    };
    Ok(TTestResult {
        t,
        df,
        p,
        sided,
        alpha: ALPHA,
    })
}
