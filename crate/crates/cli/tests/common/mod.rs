#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};

pub const REGIONS: [(&str, f64, f64, u64); 3] = [
    ("AT", 47.5, 14.5, 100_000),
    ("BE", 50.5, 4.5, 250_000),
    ("LU", 49.8, 6.1, 60_000),
];

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
}

/// Writes a region table, incidence and mobility series over `days` days.
/// `gap` removes one incidence observation (region index, day).
pub fn write_data(dir: &Path, days: usize, gap: Option<(usize, usize)>) {
    let mut regions = String::from("region,lat,lon,population\n");
    for (id, lat, lon, pop) in REGIONS {
        let _ = writeln!(regions, "{id},{lat},{lon},{pop}");
    }
    std::fs::write(dir.join("regions.csv"), regions).unwrap();
    let mut inc = String::from("date,region,value\n");
    let mut mob = String::from("date,region,value\n");
    for (r, (id, ..)) in REGIONS.iter().enumerate() {
        for d in 0..days {
            let date = start() + Duration::days(d as i64);
            let phase = 2.0 * std::f64::consts::PI * d as f64 / 14.0 + r as f64;
            let value = (40.0 + 15.0 * phase.sin() + 0.1 * d as f64).round();
            if gap != Some((r, d)) {
                let _ = writeln!(inc, "{date},{id},{value}");
            }
            let _ = writeln!(mob, "{date},{id},{:.1}", -10.0 + 5.0 * phase.cos());
        }
    }
    std::fs::write(dir.join("incidence.csv"), inc).unwrap();
    std::fs::write(dir.join("mobility.csv"), mob).unwrap();
}

/// Small, fast experiment over the fixture data. Each `(key, value)` in
/// `overrides` replaces or adds a top-level setting.
pub fn write_config(dir: &Path, overrides: &[(&str, &str)]) -> PathBuf {
    let mut top: Vec<(String, String)> = [
        ("region_set", r#""EU""#),
        ("region_table", r#""regions.csv""#),
        ("channel_sets", r#"["I"]"#),
        ("window", "12"),
        ("horizons", "[3]"),
        ("variants", r#"["Trans"]"#),
        ("seeds", "[0]"),
        ("folds", r#"["1"]"#),
        ("output_dir", r#""out""#),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    for (k, v) in overrides {
        match top.iter_mut().find(|(key, _)| key == k) {
            Some(e) => e.1 = v.to_string(),
            None => top.push((k.to_string(), v.to_string())),
        }
    }
    let mut text: String = top.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    text.push_str(
        r#"
[data]
I = "incidence.csv"
B = "mobility.csv"

[train]
peak_lr = 0.005
warmup_steps = 10
max_steps = 30
batch_size = 8
eval_every = 10

[model]
d_model = 8
heads = 2
layers = 1
"#,
    );
    let p = dir.join("experiment.toml");
    std::fs::write(&p, text).unwrap();
    p
}
