use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::region::csv_error;
use super::{DataError, RegionTable};

/// Input variables: incidence, mortality, hospitalization rate, mobility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    I,
    M,
    H,
    B,
}

impl Channel {
    /// Whether the raw values are counts that get scaled per 10k persons.
    pub fn is_count(self) -> bool {
        !matches!(self, Channel::B)
    }

    pub fn letter(self) -> char {
        match self {
            Channel::I => 'I',
            Channel::M => 'M',
            Channel::H => 'H',
            Channel::B => 'B',
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Channel {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" => Ok(Channel::I),
            "M" => Ok(Channel::M),
            "H" => Ok(Channel::H),
            "B" => Ok(Channel::B),
            other => Err(DataError::BadChannels(other.to_string())),
        }
    }
}

/// Ordered, duplicate-free channel list that always contains incidence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelSet(Vec<Channel>);

impl ChannelSet {
    pub fn new(channels: Vec<Channel>) -> Result<Self, DataError> {
        let unique: HashSet<_> = channels.iter().collect();
        if channels.is_empty() || unique.len() != channels.len() || !channels.contains(&Channel::I)
        {
            let label: String = channels.iter().map(|c| c.letter()).collect();
            return Err(DataError::BadChannels(label));
        }
        Ok(Self(channels))
    }

    pub fn channels(&self) -> &[Channel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn incidence_index(&self) -> usize {
        self.0.iter().position(|&c| c == Channel::I).expect("validated")
    }

    pub fn position(&self, c: Channel) -> Option<usize> {
        self.0.iter().position(|&x| x == c)
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{}", c.letter())?;
        }
        Ok(())
    }
}

impl FromStr for ChannelSet {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chans = s
            .trim()
            .chars()
            .map(|c| c.to_string().parse())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(chans)
    }
}

/// Daily raw values for every (region, day, channel); `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub dates: Vec<NaiveDate>,
    pub regions: Vec<String>,
    pub channels: ChannelSet,
    values: Vec<Option<f64>>,
}

impl RawPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        regions: Vec<String>,
        channels: ChannelSet,
        values: Vec<Option<f64>>,
    ) -> Self {
        assert_eq!(values.len(), dates.len() * regions.len() * channels.len());
        Self {
            dates,
            regions,
            channels,
            values,
        }
    }

    fn idx(&self, region: usize, day: usize, channel: usize) -> usize {
        (region * self.dates.len() + day) * self.channels.len() + channel
    }

    pub fn get(&self, region: usize, day: usize, channel: usize) -> Option<f64> {
        self.values[self.idx(region, day, channel)]
    }

    pub fn set(&mut self, region: usize, day: usize, channel: usize, v: Option<f64>) {
        let i = self.idx(region, day, channel);
        self.values[i] = v;
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }
}

/// Reads one `date,region,value` CSV per channel and aligns them on a
/// contiguous daily axis spanning every date seen.
pub fn load_panel(
    sources: &[(Channel, PathBuf)],
    table: &RegionTable,
) -> Result<RawPanel, DataError> {
    let channels = ChannelSet::new(sources.iter().map(|(c, _)| *c).collect())?;
    let mut per_channel = Vec::with_capacity(sources.len());
    let mut all_dates = BTreeSet::new();
    for (_, path) in sources {
        let rows = read_series_csv(path, table)?;
        all_dates.extend(rows.keys().map(|(d, _)| *d));
        per_channel.push(rows);
    }
    let (first, last) = match (all_dates.first(), all_dates.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(DataError::PanelTooShort { days: 0, needed: 1 }),
    };
    let days = (last - first).num_days() as usize + 1;
    let dates: Vec<NaiveDate> = (0..days).map(|d| first + Duration::days(d as i64)).collect();
    let mut panel = RawPanel::new(
        dates,
        table.ids(),
        channels,
        vec![None; days * table.len() * sources.len()],
    );
    for (c, rows) in per_channel.iter().enumerate() {
        for (&(date, region), &value) in rows {
            let day = (date - first).num_days() as usize;
            panel.set(region, day, c, value);
        }
    }
    Ok(panel)
}

fn read_series_csv(
    path: &Path,
    table: &RegionTable,
) -> Result<HashMap<(NaiveDate, usize), Option<f64>>, DataError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["date", "region", "value"] {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `date,region,value`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = HashMap::new();
    let mut last_date: HashMap<usize, NaiveDate> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |msg: String| DataError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d")
            .map_err(|e| parse_err(format!("bad date `{}`: {e}", &rec[0])))?;
        let name = rec[1].trim();
        let region = table.index_of(name).ok_or_else(|| DataError::UnknownRegion {
            path: path.to_path_buf(),
            line,
            region: name.to_string(),
        })?;
        let raw = rec[2].trim();
        let value = if raw.is_empty() || raw == "NA" {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("bad value `{raw}`")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value `{raw}`")));
            }
            Some(v)
        };
        if rows.insert((date, region), value).is_some() {
            return Err(DataError::Duplicate {
                path: path.to_path_buf(),
                line,
                date,
                region: name.to_string(),
            });
        }
        if let Some(prev) = last_date.insert(region, date) {
            if date <= prev {
                return Err(DataError::NonMonotone {
                    path: path.to_path_buf(),
                    line,
                    region: name.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ImputationKind {
    Interpolated,
    BoundaryFill,
    /// Negative count replaced by zero.
    ClampedNegative { original: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationEntry {
    pub region: String,
    pub channel: Channel,
    pub date: NaiveDate,
    pub kind: ImputationKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImputationLog {
    pub entries: Vec<ImputationEntry>,
}

impl ImputationLog {
    pub fn imputed_cells(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !matches!(e.kind, ImputationKind::ClampedNegative { .. }))
            .count()
    }

    pub fn mislabeled(&self) -> usize {
        self.entries.len() - self.imputed_cells()
    }
}

/// Fills every gap: interior gaps by linear interpolation, leading and
/// trailing gaps by the nearest observation. Negative counts are clamped to
/// zero first (mobility may legitimately be negative and is left alone).
pub fn impute(panel: &RawPanel) -> Result<(RawPanel, ImputationLog), DataError> {
    let mut out = panel.clone();
    let mut log = ImputationLog::default();
    let days = panel.days();
    for r in 0..panel.regions.len() {
        for (c, &chan) in panel.channels.channels().iter().enumerate() {
            let mut series: Vec<Option<f64>> = (0..days).map(|d| panel.get(r, d, c)).collect();
            if chan.is_count() {
                for (d, v) in series.iter_mut().enumerate() {
                    if let Some(x) = *v {
                        if x < 0.0 {
                            log::warn!(
                                "mislabeled negative count {x} for ({}, {chan}) on {}",
                                panel.regions[r],
                                panel.dates[d]
                            );
                            log.entries.push(ImputationEntry {
                                region: panel.regions[r].clone(),
                                channel: chan,
                                date: panel.dates[d],
                                kind: ImputationKind::ClampedNegative { original: x },
                            });
                            *v = Some(0.0);
                        }
                    }
                }
            }
            let observed: Vec<usize> = (0..days).filter(|&d| series[d].is_some()).collect();
            if observed.len() < 2 {
                return Err(DataError::TooFewObservations {
                    region: panel.regions[r].clone(),
                    channel: chan,
                    observed: observed.len(),
                });
            }
            let first = observed[0];
            let last = *observed.last().expect("non-empty");
            let mut fill = |d: usize, v: f64, kind: ImputationKind| {
                out.set(r, d, c, Some(v));
                log.entries.push(ImputationEntry {
                    region: panel.regions[r].clone(),
                    channel: chan,
                    date: panel.dates[d],
                    kind,
                });
            };
            let head = series[first].expect("observed");
            let tail = series[last].expect("observed");
            for d in 0..first {
                fill(d, head, ImputationKind::BoundaryFill);
            }
            for d in last + 1..days {
                fill(d, tail, ImputationKind::BoundaryFill);
            }
            for w in observed.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (va, vb) = (series[a].expect("obs"), series[b].expect("obs"));
                for d in a + 1..b {
                    let frac = (d - a) as f64 / (b - a) as f64;
                    fill(d, va + (vb - va) * frac, ImputationKind::Interpolated);
                }
            }
            for &d in &observed {
                out.set(r, d, c, series[d]);
            }
        }
    }
    Ok((out, log))
}

/// Complete panel of per-10k rates (mobility passes through unscaled).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPanel {
    pub dates: Vec<NaiveDate>,
    pub regions: Vec<String>,
    pub channels: ChannelSet,
    values: Vec<f64>,
}

impl NormalizedPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        regions: Vec<String>,
        channels: ChannelSet,
        values: Vec<f64>,
    ) -> Self {
        assert_eq!(values.len(), dates.len() * regions.len() * channels.len());
        Self {
            dates,
            regions,
            channels,
            values,
        }
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn get(&self, region: usize, day: usize, channel: usize) -> f64 {
        self.values[(region * self.dates.len() + day) * self.channels.len() + channel]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Restricts to a subset of channels, in the subset's order.
    pub fn select(&self, subset: &ChannelSet) -> Result<Self, DataError> {
        let idx: Vec<usize> = subset
            .channels()
            .iter()
            .map(|&c| {
                self.channels
                    .position(c)
                    .ok_or_else(|| DataError::BadChannels(format!("{c} not in panel")))
            })
            .collect::<Result<_, _>>()?;
        let mut values = Vec::with_capacity(self.regions.len() * self.days() * idx.len());
        for r in 0..self.regions.len() {
            for d in 0..self.days() {
                values.extend(idx.iter().map(|&c| self.get(r, d, c)));
            }
        }
        Ok(Self::new(
            self.dates.clone(),
            self.regions.clone(),
            subset.clone(),
            values,
        ))
    }
}

/// `value / population × 10000` for count channels.
pub fn normalize_per_capita(panel: &RawPanel, table: &RegionTable) -> Result<NormalizedPanel, DataError> {
    let mut values = Vec::with_capacity(panel.values.len());
    for (r, name) in panel.regions.iter().enumerate() {
        let pop = table
            .index_of(name)
            .map(|i| table.regions()[i].population as f64)
            .ok_or_else(|| DataError::InvalidRegion(format!("`{name}` missing from table")))?;
        for d in 0..panel.days() {
            for (c, &chan) in panel.channels.channels().iter().enumerate() {
                let v = panel.get(r, d, c).ok_or_else(|| {
                    DataError::InvalidRegion(format!("panel not imputed at ({name}, {chan}, day {d})"))
                })?;
                values.push(if chan.is_count() { v / pop * 10_000.0 } else { v });
            }
        }
    }
    Ok(NormalizedPanel::new(
        panel.dates.clone(),
        panel.regions.clone(),
        panel.channels.clone(),
        values,
    ))
}

/// Long-format CSV `date,region,channel,value`; floats use shortest
/// round-trip formatting so reading back is exact.
pub fn write_normalized_panel(panel: &NormalizedPanel, path: &Path) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["date", "region", "channel", "value"])
        .map_err(|e| csv_error(path, e))?;
    for (r, region) in panel.regions.iter().enumerate() {
        for (d, date) in panel.dates.iter().enumerate() {
            for (c, chan) in panel.channels.channels().iter().enumerate() {
                w.write_record([
                    date.to_string(),
                    region.clone(),
                    chan.to_string(),
                    format!("{}", panel.get(r, d, c)),
                ])
                .map_err(|e| csv_error(path, e))?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_normalized_panel(path: &Path) -> Result<NormalizedPanel, DataError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<(NaiveDate, String, Channel, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| DataError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        let chan: Channel = rec[2].parse()?;
        let v: f64 = rec[3].parse().map_err(|_| bad(format!("bad value `{}`", &rec[3])))?;
        rows.push((date, rec[1].to_string(), chan, v));
    }
    let mut regions: Vec<String> = Vec::new();
    let mut channels: Vec<Channel> = Vec::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut seen_dates = HashSet::new();
    for (d, r, c, _) in &rows {
        if regions.last() != Some(r) && !regions.contains(r) {
            regions.push(r.clone());
        }
        if !channels.contains(c) {
            channels.push(*c);
        }
        if seen_dates.insert(*d) {
            dates.push(*d);
        }
    }
    let expected = regions.len() * dates.len() * channels.len();
    if rows.len() != expected {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("expected {expected} rows, found {}", rows.len()),
        });
    }
    // rows are written region-major, then date, then channel
    let values = rows.into_iter().map(|(_, _, _, v)| v).collect();
    Ok(NormalizedPanel::new(
        dates,
        regions,
        ChannelSet::new(channels)?,
        values,
    ))
}
