//! Generated panels with known structure, for tests and demos.

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ChannelSet, NormalizedPanel};

/// Panel whose value at `(region, day, channel)` is `f(region, day, channel)`.
pub fn panel_from_fn(
    regions: usize,
    days: usize,
    channels: ChannelSet,
    start: NaiveDate,
    mut f: impl FnMut(usize, usize, usize) -> f64,
) -> NormalizedPanel {
    let c = channels.len();
    let mut values = Vec::with_capacity(regions * days * c);
    for r in 0..regions {
        for d in 0..days {
            for ch in 0..c {
                values.push(f(r, d, ch));
            }
        }
    }
    NormalizedPanel::new(
        (0..days).map(|d| start + Duration::days(d as i64)).collect(),
        (0..regions).map(|r| format!("R{r}")).collect(),
        channels,
        values,
    )
}

/// Linear diffusion over a weighted graph driven by an oscillating source.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffusion {
    /// Row `i` lists the weights with which node `i` receives from others.
    pub graph: Vec<Vec<f64>>,
    /// Fraction of each node's value replaced by its neighbours' per day.
    pub rate: f64,
    /// Daily decay factor applied after mixing.
    pub retain: f64,
    pub source_node: usize,
    pub period: f64,
    pub amplitude: f64,
    pub noise: f64,
}

impl Diffusion {
    /// `[days][node]` trajectory after a burn-in of `burn_in` days.
    pub fn simulate(&self, days: usize, burn_in: usize, seed: u64) -> Vec<Vec<f64>> {
        let n = self.graph.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite sigma");
        let mut x = vec![0.0; n];
        let mut out = Vec::with_capacity(days);
        for day in 0..days + burn_in {
            let mut next = vec![0.0; n];
            for i in 0..n {
                let wsum: f64 = self.graph[i].iter().sum();
                let inflow = if wsum > 0.0 {
                    self.graph[i].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() / wsum
                } else {
                    x[i]
                };
                next[i] = self.retain * ((1.0 - self.rate) * x[i] + self.rate * inflow);
            }
            let phase = 2.0 * std::f64::consts::PI * day as f64 / self.period;
            next[self.source_node] += self.amplitude * (1.0 + phase.sin());
            for v in &mut next {
                *v += noise.sample(&mut rng);
            }
            x = next;
            if day >= burn_in {
                out.push(x.clone());
            }
        }
        out
    }
}
