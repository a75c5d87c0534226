use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::{DataError, TimeSeriesTable};

/// Meteorological seasons, southern-hemisphere convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    /// December, January, February.
    Summer,
    Autumn,
    Winter,
    Spring,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Summer, Season::Autumn, Season::Winter, Season::Spring];

    pub fn of(t: &NaiveDateTime) -> Self {
        match t.month() {
            12 | 1 | 2 => Season::Summer,
            3..=5 => Season::Autumn,
            6..=8 => Season::Winter,
            _ => Season::Spring,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Summer => "summer",
            Season::Autumn => "autumn",
            Season::Winter => "winter",
            Season::Spring => "spring",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `bins + 1` edges; values equal to the last edge land in the last bin.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean per season and hour of day; `None` where no sample falls.
    pub season_hour_mean: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub rows: usize,
    pub columns: Vec<ColumnStats>,
}

/// Histograms and season-by-hour means of every column, in per-unit.
pub fn dataset_stats(table: &TimeSeriesTable, bins: usize) -> StatReport {
    let bins = bins.max(1);
    let columns = table
        .columns
        .iter()
        .enumerate()
        .map(|(c, key)| {
            let values: Vec<f64> = table.values.iter().map(|r| r[c]).collect();
            let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let (lo, hi) = if values.is_empty() {
                (0.0, 1.0)
            } else if max > min {
                (min, max)
            } else {
                (min, min + 1.0)
            };
            let width = (hi - lo) / bins as f64;
            let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
            let mut counts = vec![0; bins];
            for &v in &values {
                let k = (((v - lo) / width).floor() as usize).min(bins - 1);
                counts[k] += 1;
            }
            let mut sums = vec![vec![(0.0, 0usize); 24]; 4];
            for (t, &v) in table.timestamps.iter().zip(&values) {
                let cell = &mut sums[Season::of(t).index()][t.hour() as usize];
                cell.0 += v;
                cell.1 += 1;
            }
            let season_hour_mean = sums
                .into_iter()
                .map(|row| row.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
                .collect();
            let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
            ColumnStats { column: key.to_string(), min, max, mean, edges, counts, season_hour_mean }
        })
        .collect();
    StatReport { rows: table.len(), columns }
}

/// Writes `histograms.csv`, `season_hour.csv` and `stats.json` into `dir`.
pub fn write_stats(dir: impl AsRef<Path>, report: &StatReport) -> Result<(), DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(DataError::io(dir))?;

    let path = dir.join("histograms.csv");
    let mut out = String::from("column,bin_lo,bin_hi,count\n");
    for c in &report.columns {
        for (k, n) in c.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", c.column, c.edges[k], c.edges[k + 1], n));
        }
    }
    std::fs::write(&path, out).map_err(DataError::io(&path))?;

    let path = dir.join("season_hour.csv");
    let mut out = String::from("column,season,hour,mean\n");
    for c in &report.columns {
        for s in Season::ALL {
            for (h, m) in c.season_hour_mean[s.index()].iter().enumerate() {
                let m = m.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{},{}\n", c.column, s.name(), h, m));
            }
        }
    }
    std::fs::write(&path, out).map_err(DataError::io(&path))?;

    let path = dir.join("stats.json");
    let mut f = std::fs::File::create(&path).map_err(DataError::io(&path))?;
    writeln!(f, "{}", serde_json::to_string_pretty(report)?).map_err(DataError::io(&path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::{parse_timestamp, ColumnKey, ElementKind, Quantity};
    use chrono::Duration;

    fn hourly(days: i64, f: impl Fn(&NaiveDateTime) -> f64) -> TimeSeriesTable {
        let t0 = parse_timestamp("2021-01-01T00:00:00").unwrap();
        let timestamps: Vec<_> = (0..days * 24).map(|h| t0 + Duration::hours(h)).collect();
        let values = timestamps.iter().map(|t| vec![f(t)]).collect();
        TimeSeriesTable { timestamps, columns: vec![ColumnKey::new(ElementKind::StatGen, 3, Quantity::P)], values }
    }

    #[test]
    fn constant_column_fills_one_bin() {
        let report = dataset_stats(&hourly(400, |_| 0.25), 10);
        let c = &report.columns[0];
        assert_eq!(c.counts.iter().filter(|&&n| n > 0).count(), 1);
        assert_eq!(c.counts.iter().sum::<usize>(), 9600);
        for row in &c.season_hour_mean {
            for m in row {
                assert_eq!(*m, Some(0.25));
            }
        }
    }

    #[test]
    fn solar_like_column_is_zero_outside_daylight() {
        let table = hourly(365, |t| if (8..=18).contains(&t.hour()) { 1.0 + t.ordinal() as f64 * 1e-3 } else { 0.0 });
        let c = &dataset_stats(&table, 20).columns[0];
        for season in &c.season_hour_mean {
            for (h, m) in season.iter().enumerate() {
                let m = m.unwrap();
                if (8..=18).contains(&h) {
                    assert!(m > 0.0);
                } else {
                    assert_eq!(m, 0.0);
                }
            }
        }
    }

    #[test]
    fn southern_seasons() {
        let s = |d: &str| Season::of(&parse_timestamp(d).unwrap());
        assert_eq!(s("2021-01-15T00:00:00"), Season::Summer);
        assert_eq!(s("2021-12-01T00:00:00"), Season::Summer);
        assert_eq!(s("2021-07-01T00:00:00"), Season::Winter);
        assert_eq!(s("2021-10-01T00:00:00"), Season::Spring);
    }

    #[test]
    fn files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        write_stats(dir.path(), &dataset_stats(&hourly(3, |t| t.hour() as f64), 4)).unwrap();
        let hist = std::fs::read_to_string(dir.path().join("histograms.csv")).unwrap();
        assert_eq!(hist.lines().count(), 5);
        let sh = std::fs::read_to_string(dir.path().join("season_hour.csv")).unwrap();
        assert_eq!(sh.lines().count(), 1 + 4 * 24);
    }
}
