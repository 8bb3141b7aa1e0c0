use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;

use super::{GraphError, SquareMatrix};

/// One saved adjacency map with its provenance header.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySnapshot {
    pub block: usize,
    pub sample_start: NaiveDate,
    pub weights: SquareMatrix,
}

impl AdjacencySnapshot {
    pub fn to_csv_string(&self) -> String {
        let n = self.weights.n();
        let mut s = format!("# N={n} block={} sample_start={}\n", self.block, self.sample_start);
        for i in 0..n {
            let row: Vec<String> = self.weights.row(i).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, GraphError> {
        let parse_err = |line: usize, msg: String| GraphError::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let body = header
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let (mut n, mut block, mut start) = (None, None, None);
        for field in body.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("bad header field `{field}`")))?;
            match k {
                "N" => n = v.parse::<usize>().ok(),
                "block" => block = v.parse::<usize>().ok(),
                "sample_start" => start = NaiveDate::parse_from_str(v, "%Y-%m-%d").ok(),
                _ => return Err(parse_err(1, format!("unknown header key `{k}`"))),
            }
        }
        let (n, block, sample_start) = match (n, block, start) {
            (Some(n), Some(b), Some(s)) => (n, b, s),
            _ => return Err(parse_err(1, "header needs N, block and sample_start".into())),
        };
        let mut data = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(i + 2, e.to_string()))?;
            if vals.len() != n {
                return Err(GraphError::InconsistentSize { expected: n, found: vals.len() });
            }
            data.extend(vals);
            rows += 1;
        }
        if rows != n {
            return Err(GraphError::InconsistentSize { expected: n, found: rows });
        }
        Ok(Self {
            block,
            sample_start,
            weights: SquareMatrix::from_vec(n, data).expect("n rows of n"),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), GraphError> {
        let io = |source| GraphError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv_string().as_bytes()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}
