use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::batch::{input_columns, BatchTable, ColumnKey, PowerUnits, Preamble, Slot};
use crate::grid::{Grid, PerUnit};
use crate::powerflow::InputVector;

/// Aligned, gap-free input series in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTable {
    /// Strictly increasing.
    pub timestamps: Vec<NaiveDateTime>,
    pub columns: Vec<ColumnKey>,
    pub values: Vec<Vec<f64>>,
}

impl TimeSeriesTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn column(&self, key: ColumnKey) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|k| *k == key)?;
        Some(self.values.iter().map(|row| row[c]).collect())
    }

    /// Every `stride`-th row starting from the first.
    pub fn every(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let keep = |k: &usize| k.is_multiple_of(stride);
        Self {
            timestamps: self.timestamps.iter().enumerate().filter(|(k, _)| keep(k)).map(|(_, t)| *t).collect(),
            columns: self.columns.clone(),
            values: self.values.iter().enumerate().filter(|(k, _)| keep(k)).map(|(_, r)| r.clone()).collect(),
        }
    }

    pub fn to_inputs(&self, grid: &Grid) -> Vec<InputVector> {
        self.timestamps
            .iter()
            .zip(&self.values)
            .map(|(ts, row)| {
                let mut x = InputVector::zeros(grid.n_buses());
                x.timestamp = Some(*ts);
                for (key, v) in self.columns.iter().zip(row) {
                    if let Some(Slot::Input(c)) = key.slot() {
                        x.set(key.bus, c, *v);
                    }
                }
                x
            })
            .collect()
    }

    /// Per-unit batch table with one column per series.
    pub fn to_batch(&self, base_mva: f64) -> BatchTable {
        BatchTable {
            preamble: Preamble::units(PowerUnits::PerUnit, base_mva),
            columns: self.columns.iter().map(ToString::to_string).collect(),
            timestamps: self.timestamps.clone(),
            rows: self.values.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect(),
        }
    }
}

/// What alignment dropped, for the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Columns outside the naming convention or not holding inputs.
    pub unmapped_columns: Vec<String>,
    /// Grid input columns neither file provides; they stay at zero.
    pub uncovered_columns: Vec<String>,
    /// Rows not on a whole hour.
    pub off_hour_rows: usize,
    /// Hourly stamps present in only one of the files.
    pub unmatched_generation: usize,
    pub unmatched_load: usize,
    /// Shared stamps dropped because a cell was missing.
    pub gap_timestamps: Vec<String>,
    pub warnings: Vec<String>,
}

struct Source {
    /// (column in the file, key)
    columns: Vec<(usize, ColumnKey)>,
    scale: PerUnit,
    rows: BTreeMap<NaiveDateTime, usize>,
    off_hour: usize,
}

fn prepare(
    table: &BatchTable,
    grid: &Grid,
    taken: &mut Vec<ColumnKey>,
    report: &mut IngestReport,
) -> Result<Source, DataError> {
    let units = table.preamble.power_units()?;
    let scale = match units {
        PowerUnits::PerUnit => PerUnit::new(1.0),
        PowerUnits::Physical => PerUnit::new(table.preamble.base_mva().unwrap_or(grid.base_mva)),
    };
    let mut columns = Vec::new();
    for (c, name) in table.columns.iter().enumerate() {
        match ColumnKey::parse(name) {
            Some(key) if matches!(key.slot(), Some(Slot::Input(_))) => {
                key.check(grid)?;
                if taken.contains(&key) {
                    report.unmapped_columns.push(name.clone());
                    report.warnings.push(format!("column `{name}` appears in both files; the first is used"));
                } else {
                    taken.push(key);
                    columns.push((c, key));
                }
            }
            _ => report.unmapped_columns.push(name.clone()),
        }
    }
    let mut rows = BTreeMap::new();
    let mut off_hour = 0;
    for (k, ts) in table.timestamps.iter().enumerate() {
        let ts = ts.with_second(0).and_then(|t| t.with_nanosecond(0)).unwrap_or(*ts);
        if ts.minute() != 0 {
            off_hour += 1;
            continue;
        }
        rows.entry(ts).or_insert(k);
    }
    Ok(Source { columns, scale, rows, off_hour })
}

/// Joins generation and load tables on whole-hour timestamps and converts
/// to per-unit. Rows off the hour, stamps present in one file only and
/// shared stamps with a missing cell are dropped and reported.
pub fn ingest_timeseries(
    generation: &BatchTable,
    load: &BatchTable,
    grid: &Grid,
) -> Result<(TimeSeriesTable, IngestReport), DataError> {
    let mut report = IngestReport::default();
    let mut taken = Vec::new();
    let gen = prepare(generation, grid, &mut taken, &mut report)?;
    let ld = prepare(load, grid, &mut taken, &mut report)?;
    report.off_hour_rows = gen.off_hour + ld.off_hour;
    report.unmatched_generation = gen.rows.keys().filter(|t| !ld.rows.contains_key(t)).count();
    report.unmatched_load = ld.rows.keys().filter(|t| !gen.rows.contains_key(t)).count();

    let mut order: Vec<(usize, ColumnKey)> = Vec::new();
    let all = input_columns(grid);
    for key in &all {
        if let Some(p) = taken.iter().position(|k| k == key) {
            order.push((p, *key));
        } else {
            report.uncovered_columns.push(key.to_string());
        }
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (ts, &gi) in &gen.rows {
        let Some(&li) = ld.rows.get(ts) else { continue };
        let mut cells = Vec::with_capacity(taken.len());
        for (src, row) in [(&gen, &generation.rows[gi]), (&ld, &load.rows[li])] {
            for &(c, key) in &src.columns {
                let v = row[c].map(|v| if key.is_power() { src.scale.to_pu(v) } else { v });
                cells.push(v);
            }
        }
        if cells.iter().any(Option::is_none) {
            report.gap_timestamps.push(crate::batch::format_timestamp(ts));
            continue;
        }
        timestamps.push(*ts);
        values.push(order.iter().map(|&(p, _)| cells[p].expect("checked above")).collect());
    }
    if timestamps.is_empty() {
        report.warnings.push("no shared hourly timestamps between generation and load data".into());
    }
    let columns = order.into_iter().map(|(_, k)| k).collect();
    Ok((TimeSeriesTable { timestamps, columns, values }, report))
}

pub fn ingest_files(
    generation: impl AsRef<Path>,
    load: impl AsRef<Path>,
    grid: &Grid,
) -> Result<(TimeSeriesTable, IngestReport), DataError> {
    let g = BatchTable::read(generation)?;
    let l = BatchTable::read(load)?;
    ingest_timeseries(&g, &l, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::BatchError;
    use crate::fixtures;
    use crate::powerflow::InputColumn;
    use chrono::Duration;

    fn stamp(s: &str) -> NaiveDateTime {
        crate::batch::parse_timestamp(s).unwrap()
    }

    fn table(columns: &[&str], start: &str, step_min: i64, count: usize, value: impl Fn(usize, usize) -> Option<f64>) -> BatchTable {
        let t0 = stamp(start);
        BatchTable {
            preamble: Preamble::units(PowerUnits::Physical, 100.0),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            timestamps: (0..count).map(|k| t0 + Duration::minutes(step_min * k as i64)).collect(),
            rows: (0..count).map(|k| (0..columns.len()).map(|c| value(k, c)).collect()).collect(),
        }
    }

    #[test]
    fn hourly_generation_meets_ten_minute_loads() {
        let grid = fixtures::three_bus();
        let gen = table(&["vgen_1_p"], "2021-05-01T00:00:00", 60, 72, |k, _| Some(k as f64));
        let load = table(&["load_2_p", "load_2_q"], "2021-05-01T00:00:00", 10, 72 * 6, |k, c| Some((k + c) as f64));
        let (ts, report) = ingest_timeseries(&gen, &load, &grid).unwrap();
        assert_eq!(ts.len(), 72);
        assert_eq!(report.off_hour_rows, 72 * 5);
        assert_eq!(report.unmatched_generation + report.unmatched_load, 0);
        let x = ts.to_inputs(&grid);
        assert_eq!(x[3].get(1, InputColumn::VoltGenP), 0.03);
        assert_eq!(x[3].get(2, InputColumn::LoadP), 0.18);
        assert_eq!(x[3].get(2, InputColumn::LoadQ), 0.19);
        assert!(ts.timestamps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn disjoint_ranges_give_an_empty_table_and_a_warning() {
        let grid = fixtures::three_bus();
        let gen = table(&["vgen_1_p"], "2021-05-01T00:00:00", 60, 24, |_, _| Some(1.0));
        let load = table(&["load_2_p"], "2022-05-01T00:00:00", 60, 24, |_, _| Some(1.0));
        let (ts, report) = ingest_timeseries(&gen, &load, &grid).unwrap();
        assert!(ts.is_empty());
        assert_eq!(report.unmatched_generation, 24);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.uncovered_columns, vec!["vgen_0_p".to_string(), "load_2_q".to_string()]);
    }

    #[test]
    fn gaps_are_dropped_and_listed() {
        let grid = fixtures::three_bus();
        let gen = table(&["vgen_1_p"], "2021-05-01T00:00:00", 60, 5, |k, _| (k != 2).then_some(1.0));
        let load = table(&["load_2_p", "load_2_q", "weather_temp"], "2021-05-01T00:00:00", 60, 5, |_, _| Some(1.0));
        let (ts, report) = ingest_timeseries(&gen, &load, &grid).unwrap();
        assert_eq!(ts.len(), 4);
        assert_eq!(report.gap_timestamps, vec!["2021-05-01T02:00:00".to_string()]);
        assert_eq!(report.unmapped_columns, vec!["weather_temp".to_string()]);
    }

    #[test]
    fn column_for_absent_element_is_rejected() {
        let grid = fixtures::three_bus();
        let gen = table(&["sgen_1_p"], "2021-05-01T00:00:00", 60, 2, |_, _| Some(1.0));
        let load = table(&["load_2_p"], "2021-05-01T00:00:00", 60, 2, |_, _| Some(1.0));
        let err = ingest_timeseries(&gen, &load, &grid).unwrap_err();
        assert!(matches!(err, DataError::Batch(BatchError::UnknownElement { .. })));
    }

    #[test]
    fn missing_unit_preamble_is_rejected() {
        let grid = fixtures::three_bus();
        let mut gen = table(&["vgen_1_p"], "2021-05-01T00:00:00", 60, 2, |_, _| Some(1.0));
        gen.preamble = Preamble::default();
        let load = table(&["load_2_p"], "2021-05-01T00:00:00", 60, 2, |_, _| Some(1.0));
        assert!(matches!(ingest_timeseries(&gen, &load, &grid), Err(DataError::Batch(BatchError::MissingPreamble(_)))));
    }

    #[test]
    fn nominal_profile_is_the_column_mean() {
        let grid = fixtures::three_bus();
        let gen = table(&["vgen_1_p"], "2021-05-01T00:00:00", 60, 2, |k, _| Some(if k == 0 { 0.0 } else { 200.0 }));
        let load = table(&["load_2_p", "load_2_q"], "2021-05-01T00:00:00", 60, 2, |_, _| Some(50.0));
        let (ts, _) = ingest_timeseries(&gen, &load, &grid).unwrap();
        let x = super::super::nominal_profile(&ts, &grid).unwrap();
        assert_eq!(x.get(1, InputColumn::VoltGenP), 1.0);
        assert_eq!(x.get(2, InputColumn::LoadP), 0.5);
        assert_eq!(x.timestamp, None);
    }
}
