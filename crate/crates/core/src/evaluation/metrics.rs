use super::EvalError;
use crate::numcore::Tensor;

fn check(pred: &[f64], target: &[f64]) -> Result<(), EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// `(1/U) Σ |ŷ − y|`
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    check(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `sqrt((1/U) Σ (ŷ − y)²)`
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    check(pred, target)?;
    let ms = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(ms.sqrt())
}

/// Collapses overlapping forecasts onto calendar days.
///
/// `windows` is `[S, N, F]` (one channel) for consecutive samples; the
/// result is `[N, S + F − 1]`, each day the mean of every forecast that
/// covers it.
pub fn deoverlap(windows: &Tensor) -> Result<Tensor, EvalError> {
    let s = windows.shape();
    if s.len() != 3 {
        return Err(EvalError::Shape(s.to_vec()));
    }
    let (ns, n, f) = (s[0], s[1], s[2]);
    let days = ns + f - 1;
    let mut sum = vec![0.0; n * days];
    let mut count = vec![0usize; n * days];
    for k in 0..ns {
        for i in 0..n {
            for h in 0..f {
                let at = i * days + k + h;
                sum[at] += windows.data()[(k * n + i) * f + h];
                count[at] += 1;
            }
        }
    }
    let data = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    Ok(Tensor::new(vec![n, days], data)?)
}

/// MAE and RMSE on calendar days after [`deoverlap`].
pub fn deoverlapped_scores(pred: &Tensor, target: &Tensor) -> Result<(f64, f64), EvalError> {
    let p = deoverlap(pred)?;
    let t = deoverlap(target)?;
    Ok((mae(p.data(), t.data())?, rmse(p.data(), t.data())?))
}

/// MAE and RMSE over every forecast element, overlaps included.
pub fn window_scores(pred: &Tensor, target: &Tensor) -> Result<(f64, f64), EvalError> {
    Ok((mae(pred.data(), target.data())?, rmse(pred.data(), target.data())?))
}
