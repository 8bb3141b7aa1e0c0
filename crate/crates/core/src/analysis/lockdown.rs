use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{io, AnalysisError};
use crate::graph::{mobility_indicator, AdjacencySnapshot};

/// A mandatory-lockdown period for one region, both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockdownWindow {
    #[serde(rename = "region")]
    pub region_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Reads a CSV with header `region,start,end` (ISO dates).
pub fn read_lockdown_windows(path: &Path) -> Result<Vec<LockdownWindow>, AnalysisError> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let windows: Vec<LockdownWindow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| AnalysisError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    for w in &windows {
        if w.start > w.end {
            return Err(AnalysisError::BadWindow {
                region: w.region_id.clone(),
            });
        }
    }
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LockdownOptions {
    pub pre_days: u64,
    pub post_days: u64,
    /// Per-region post-window length.
    pub post_override: BTreeMap<String, u64>,
    /// Use only this encoder block's maps; by default all blocks are averaged.
    pub block: Option<usize>,
}

impl Default for LockdownOptions {
    fn default() -> Self {
        Self {
            pre_days: 24,
            post_days: 24,
            post_override: BTreeMap::new(),
            block: None,
        }
    }
}

/// One row of the indicator table. Empty cells mean no snapshot fell in
/// that part of the window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndicatorTableRow {
    pub region: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub during: Option<f64>,
    pub pre_average: Option<f64>,
    pub pre_first: Option<f64>,
    pub post_average: Option<f64>,
    pub post_last: Option<f64>,
    /// Some date in the pre, lockdown or post range has no snapshot.
    pub partial: bool,
}

struct Span {
    values: Vec<f64>,
    complete: bool,
}

impl Span {
    fn collect(by_date: &BTreeMap<NaiveDate, f64>, from: NaiveDate, to: NaiveDate) -> Self {
        let values: Vec<f64> = by_date.range(from..=to).map(|(_, &v)| v).collect();
        let expected = (to - from).num_days() + 1;
        Self {
            complete: values.len() as i64 == expected.max(0),
            values,
        }
    }

    fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.values.iter().sum::<f64>() / self.values.len() as f64)
    }
}

/// Mobility indicator around each lockdown window, from maps indexed by
/// their sample's start date.
pub fn lockdown_indicator_table(
    snapshots: &[AdjacencySnapshot],
    windows: &[LockdownWindow],
    opts: &LockdownOptions,
) -> Result<Vec<IndicatorTableRow>, AnalysisError> {
    let mut grouped: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for s in snapshots.iter().filter(|s| opts.block.map_or(true, |b| s.block == b)) {
        let e = grouped.entry(s.sample_start).or_default();
        e.0 += mobility_indicator(&s.weights);
        e.1 += 1;
    }
    let by_date: BTreeMap<NaiveDate, f64> = grouped.into_iter().map(|(d, (s, c))| (d, s / c as f64)).collect();
    windows
        .iter()
        .map(|w| {
            if w.start > w.end {
                return Err(AnalysisError::BadWindow {
                    region: w.region_id.clone(),
                });
            }
            let post_days = opts.post_override.get(&w.region_id).copied().unwrap_or(opts.post_days);
            let during = Span::collect(&by_date, w.start, w.end);
            let pre = if opts.pre_days == 0 {
                Span { values: vec![], complete: true }
            } else {
                Span::collect(&by_date, w.start - Days::new(opts.pre_days), w.start - Days::new(1))
            };
            let post = if post_days == 0 {
                Span { values: vec![], complete: true }
            } else {
                Span::collect(&by_date, w.end + Days::new(1), w.end + Days::new(post_days))
            };
            Ok(IndicatorTableRow {
                region: w.region_id.clone(),
                start: w.start,
                end: w.end,
                during: during.mean(),
                pre_average: pre.mean(),
                pre_first: pre.values.first().copied(),
                post_average: post.mean(),
                post_last: post.values.last().copied(),
                partial: !(during.complete && pre.complete && post.complete),
            })
        })
        .collect()
}

/// CSV in the column order `region,start,end,pre_first,pre_average,during,post_average,post_last,partial`.
pub fn indicator_table_csv(rows: &[IndicatorTableRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut s = String::from("region,start,end,pre_first,pre_average,during,post_average,post_last,partial\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.region,
            r.start,
            r.end,
            cell(r.pre_first),
            cell(r.pre_average),
            cell(r.during),
            cell(r.post_average),
            cell(r.post_last),
            r.partial
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SquareMatrix;
    use proptest::prelude::*;

    fn day0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 2, 1).unwrap()
    }

    fn date(k: u64) -> NaiveDate {
        day0() + Days::new(k)
    }

    /// A 10×10 map with exactly `k` positive entries, so Π = k / 100.
    fn with_positive(k: usize, day: u64) -> AdjacencySnapshot {
        AdjacencySnapshot {
            block: 0,
            sample_start: date(day),
            weights: SquareMatrix::from_vec(10, (0..100).map(|i| if i < k { 0.5 } else { 0.0 }).collect()).unwrap(),
        }
    }

    fn window(start: u64, end: u64) -> LockdownWindow {
        LockdownWindow {
            region_id: "LU".into(),
            start: date(start),
            end: date(end),
        }
    }

    /// Mean of the integers a..=b.
    fn series_mean(a: u64, b: u64) -> f64 {
        (a + b) as f64 / 2.0
    }

    #[test]
    fn constant_field() {
        let snaps: Vec<_> = (0..90).map(|d| with_positive(25, d)).collect();
        let rows = lockdown_indicator_table(&snaps, &[window(30, 40)], &LockdownOptions::default()).unwrap();
        let r = &rows[0];
        for v in [r.during, r.pre_average, r.pre_first, r.post_average, r.post_last] {
            assert_eq!(v, Some(0.25));
        }
        assert!(!r.partial);
    }

    #[test]
    fn single_sample_window() {
        let snaps: Vec<_> = (0..90).map(|d| with_positive(d as usize, d)).collect();
        let rows = lockdown_indicator_table(&snaps, &[window(50, 50)], &LockdownOptions::default()).unwrap();
        assert_eq!(rows[0].during, Some(0.5));
    }

    #[test]
    fn linear_ramp_matches_arithmetic_series() {
        let snaps: Vec<_> = (0..100).map(|d| with_positive(d as usize, d)).collect();
        let rows = lockdown_indicator_table(&snaps, &[window(30, 35)], &LockdownOptions::default()).unwrap();
        let r = &rows[0];
        let close = |v: Option<f64>, want: f64| (v.unwrap() - want).abs() < 1e-12;
        assert!(close(r.during, series_mean(30, 35) / 100.0));
        assert!(close(r.pre_average, series_mean(6, 29) / 100.0));
        assert!(close(r.pre_first, 6.0 / 100.0));
        assert!(close(r.post_average, series_mean(36, 59) / 100.0));
        assert!(close(r.post_last, 59.0 / 100.0));
        assert!(!r.partial);
    }

    #[test]
    fn post_override_and_blocks() {
        let mut snaps: Vec<_> = (0..100).map(|d| with_positive(d as usize, d)).collect();
        // a second block with Π = 0 everywhere halves the block average
        snaps.extend((0..100).map(|d| AdjacencySnapshot {
            block: 1,
            ..with_positive(0, d)
        }));
        let mut opts = LockdownOptions::default();
        opts.post_override.insert("LU".into(), 40);
        opts.block = Some(0);
        let r = &lockdown_indicator_table(&snaps, &[window(30, 35)], &opts).unwrap()[0];
        assert!((r.post_last.unwrap() - 0.75).abs() < 1e-12);
        assert!((r.post_average.unwrap() - series_mean(36, 75) / 100.0).abs() < 1e-12);
        opts.block = None;
        let r = &lockdown_indicator_table(&snaps, &[window(30, 35)], &opts).unwrap()[0];
        assert!((r.during.unwrap() - series_mean(30, 35) / 200.0).abs() < 1e-12);
    }

    #[test]
    fn uncovered_window_is_partial() {
        let snaps: Vec<_> = (0..40).map(|d| with_positive(10, d)).collect();
        let r = &lockdown_indicator_table(&snaps, &[window(10, 20)], &LockdownOptions::default()).unwrap()[0];
        assert!(r.partial);
        assert_eq!(r.pre_first, Some(0.1));
        let r = &lockdown_indicator_table(&snaps, &[window(200, 210)], &LockdownOptions::default()).unwrap()[0];
        assert!(r.partial && r.during.is_none() && r.post_last.is_none());
        let csv = indicator_table_csv(&[r.clone()]);
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,,,,true"));
    }

    #[test]
    fn windows_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, "region,start,end\nLU,2020-03-16,2020-05-04\n").unwrap();
        let w = read_lockdown_windows(&p).unwrap();
        assert_eq!(w[0].region_id, "LU");
        assert_eq!(w[0].end, NaiveDate::from_ymd_opt(2020, 5, 4).unwrap());
        std::fs::write(&p, "region,start,end\nLU,2020-05-16,2020-05-04\n").unwrap();
        assert!(matches!(read_lockdown_windows(&p), Err(AnalysisError::BadWindow { .. })));
    }

    proptest! {
        #[test]
        fn values_are_bounded_by_their_window(counts in proptest::collection::vec(0usize..=100, 80), s in 0u64..70, len in 0u64..10) {
            let snaps: Vec<_> = counts.iter().enumerate().map(|(d, &k)| with_positive(k, d as u64)).collect();
            let e = (s + len).min(79);
            let r = &lockdown_indicator_table(&snaps, &[window(s, e)], &LockdownOptions::default()).unwrap()[0];
            let pis = |a: u64, b: u64| -> (f64, f64) {
                let v: Vec<f64> = (a..=b).filter(|&d| d < 80).map(|d| counts[d as usize] as f64 / 100.0).collect();
                (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            };
            let (lo, hi) = pis(s, e);
            let d = r.during.unwrap();
            prop_assert!(lo - 1e-12 <= d && d <= hi + 1e-12);
            if let Some(p) = r.pre_average {
                let (lo, hi) = pis(s.saturating_sub(24), s - 1);
                prop_assert!(lo - 1e-12 <= p && p <= hi + 1e-12);
            }
            if let Some(p) = r.post_average {
                let (lo, hi) = pis(e + 1, e + 24);
                prop_assert!(lo - 1e-12 <= p && p <= hi + 1e-12);
            }
        }
    }
}
