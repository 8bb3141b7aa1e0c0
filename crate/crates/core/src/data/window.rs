use chrono::NaiveDate;

use super::{DataError, NormalizedPanel};
use crate::numcore::Tensor;

/// One input/target pair cut from a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[N, T, C]`
    pub x: Tensor,
    /// `[N, F, C]`, starting the day after `x` ends.
    pub y: Tensor,
    pub start_date: NaiveDate,
    /// Day index of the first input step within the source panel.
    pub start_day: usize,
}

/// Number of calendar days covered by the forecasts of `samples`
/// consecutive windows with horizon `horizon`.
pub fn forecast_span(samples: usize, horizon: usize) -> usize {
    if samples == 0 {
        0
    } else {
        samples + horizon - 1
    }
}

/// Slides a `window + horizon` frame one day at a time over the panel.
pub fn make_windows(
    panel: &NormalizedPanel,
    window: usize,
    horizon: usize,
) -> Result<Vec<WindowSample>, DataError> {
    let days = panel.days();
    let needed = window + horizon;
    if window == 0 || horizon == 0 || days < needed {
        return Err(DataError::PanelTooShort {
            days,
            needed: needed.max(1),
        });
    }
    let n = panel.regions.len();
    let c = panel.channels.len();
    let block = |start: usize, len: usize| {
        let mut data = Vec::with_capacity(n * len * c);
        for r in 0..n {
            for d in start..start + len {
                data.extend((0..c).map(|ch| panel.get(r, d, ch)));
            }
        }
        Tensor::new(vec![n, len, c], data).expect("sized")
    };
    Ok((0..=days - needed)
        .map(|s| WindowSample {
            x: block(s, window),
            y: block(s + window, horizon),
            start_date: panel.dates[s],
            start_day: s,
        })
        .collect())
}

/// Rebuilds `[N, days, C]` values from consecutive windows; each day is
/// taken from the first window that covers it.
pub fn reassemble(samples: &[WindowSample]) -> Option<Tensor> {
    let first = samples.first()?;
    let (n, t, c) = (first.x.shape()[0], first.x.shape()[1], first.x.shape()[2]);
    let f = first.y.shape()[1];
    let days = samples.len() + t + f - 1;
    let mut out = Tensor::zeros(&[n, days, c]);
    let mut filled = vec![false; days];
    for (s, sample) in samples.iter().enumerate() {
        for k in 0..t + f {
            let day = s + k;
            if filled[day] {
                continue;
            }
            filled[day] = true;
            for r in 0..n {
                for ch in 0..c {
                    let v = if k < t {
                        sample.x.get(&[r, k, ch])
                    } else {
                        sample.y.get(&[r, k - t, ch])
                    };
                    out.set(&[r, day, ch], v);
                }
            }
        }
    }
    Some(out)
}
