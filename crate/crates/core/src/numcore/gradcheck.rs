//! Central finite differences, the reference the tape is checked against.

use super::Tensor;

/// Numerical gradient of a scalar function of several tensors.
///
/// Each entry of each input is perturbed by `±step` and the function is
/// re-evaluated; no tape is involved.
pub fn central_difference(
    mut f: impl FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    step: f64,
) -> Vec<Tensor> {
    let mut xs = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..xs.len() {
        let mut g = Tensor::zeros(xs[t].shape());
        for i in 0..xs[t].len() {
            let orig = xs[t].data()[i];
            xs[t].data_mut()[i] = orig + step;
            let up = f(&xs);
            xs[t].data_mut()[i] = orig - step;
            let down = f(&xs);
            xs[t].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over all entries.
///
/// `floor` keeps entries whose true gradient is zero from dividing
/// round-off by round-off.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
