use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "region")]
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub population: u64,
}

/// Sites with their coordinates (degrees) and population.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    regions: Vec<Region>,
}

impl RegionTable {
    pub fn new(regions: Vec<Region>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for r in &regions {
            if !seen.insert(r.id.as_str()) {
                return Err(DataError::InvalidRegion(format!("duplicate id `{}`", r.id)));
            }
            if !(r.lat.abs() <= 90.0) || !(r.lon.abs() <= 180.0) {
                return Err(DataError::InvalidRegion(format!(
                    "`{}` has coordinates ({}, {}) out of range",
                    r.id, r.lat, r.lon
                )));
            }
            if r.population == 0 {
                return Err(DataError::InvalidRegion(format!(
                    "`{}` has zero population",
                    r.id
                )));
            }
        }
        if regions.is_empty() {
            return Err(DataError::InvalidRegion("no regions".into()));
        }
        Ok(Self { regions })
    }

    /// Reads a `region,lat,lon,population` CSV.
    pub fn from_csv(path: &Path) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut regions = Vec::new();
        for row in rdr.deserialize() {
            regions.push(row.map_err(|e| csv_error(path, e))?);
        }
        Self::new(regions)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.id.clone()).collect()
    }
}

pub(super) fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => DataError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}
