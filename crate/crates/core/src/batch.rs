//! Columnar batch files: one row per timestamp, columns named
//! `<elem>_<bus>_<quantity>` and a `#`-prefixed preamble declaring units.
//!
//! ```text
//! # power_units: MW
//! # base_mva: 100
//! timestamp,load_3_p,load_3_q,vgen_1_p,vgen_1_vset,comp_8_q
//! 2021-03-21T00:00:00,47.8,-3.9,40,1.045,12.5
//! ```
//!
//! Voltage setpoints are always per-unit. Powers follow `power_units`
//! (`MW` for MW/MVar, `pu` for per-unit on `base_mva`).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusId, Grid, PerUnit};
use crate::powerflow::{ControlVector, InputColumn, InputVector};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("preamble is missing `{0}`")]
    MissingPreamble(&'static str),
    #[error("column `{column}` references a {element} at bus {bus}, which the grid does not have")]
    UnknownElement { column: String, element: &'static str, bus: BusId },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerUnits {
    #[serde(rename = "MW")]
    Physical,
    #[serde(rename = "pu")]
    PerUnit,
}

impl fmt::Display for PowerUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerUnits::Physical => "MW",
            PowerUnits::PerUnit => "pu",
        })
    }
}

impl FromStr for PowerUnits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "MW" | "MVar" | "MW/MVar" => Ok(PowerUnits::Physical),
            "pu" | "p.u." => Ok(PowerUnits::PerUnit),
            other => Err(format!("unknown power unit `{other}` (expected MW or pu)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementKind {
    Load,
    StatGen,
    VoltGen,
    Compensator,
}

impl ElementKind {
    pub fn prefix(self) -> &'static str {
        match self {
            ElementKind::Load => "load",
            ElementKind::StatGen => "sgen",
            ElementKind::VoltGen => "vgen",
            ElementKind::Compensator => "comp",
        }
    }

    fn describe(self) -> &'static str {
        match self {
            ElementKind::Load => "load",
            ElementKind::StatGen => "static generator",
            ElementKind::VoltGen => "voltage-controlling generator",
            ElementKind::Compensator => "compensator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    P,
    Q,
    VSet,
}

/// Where a batch column lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Input(InputColumn),
    /// Control column 0 (setpoint) or 1 (compensator reactive power).
    Control(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnKey {
    pub element: ElementKind,
    pub bus: BusId,
    pub quantity: Quantity,
}

impl ColumnKey {
    pub fn new(element: ElementKind, bus: BusId, quantity: Quantity) -> Self {
        Self { element, bus, quantity }
    }

    /// Parses `<elem>_<bus>_<quantity>`; `None` for names outside the
    /// convention.
    pub fn parse(name: &str) -> Option<Self> {
        let mut parts = name.trim().split('_');
        let element = match parts.next()? {
            "load" => ElementKind::Load,
            "sgen" => ElementKind::StatGen,
            "vgen" => ElementKind::VoltGen,
            "comp" => ElementKind::Compensator,
            _ => return None,
        };
        let bus = parts.next()?.parse().ok()?;
        let quantity = match parts.next()? {
            "p" => Quantity::P,
            "q" => Quantity::Q,
            "vset" => Quantity::VSet,
            _ => return None,
        };
        if parts.next().is_some() {
            return None;
        }
        let key = Self { element, bus, quantity };
        key.slot().map(|_| key)
    }

    pub fn slot(&self) -> Option<Slot> {
        use ElementKind::*;
        use Quantity::*;
        Some(match (self.element, self.quantity) {
            (Load, P) => Slot::Input(InputColumn::LoadP),
            (Load, Q) => Slot::Input(InputColumn::LoadQ),
            (StatGen, P) => Slot::Input(InputColumn::StatGenP),
            (StatGen, Q) => Slot::Input(InputColumn::StatGenQ),
            (VoltGen, P) => Slot::Input(InputColumn::VoltGenP),
            (VoltGen, VSet) => Slot::Control(0),
            (Compensator, Q) => Slot::Control(1),
            _ => return None,
        })
    }

    /// True for MW/MVar-valued columns.
    pub fn is_power(&self) -> bool {
        self.quantity != Quantity::VSet
    }

    /// Checks that the bus hosts the referenced element.
    pub fn check(&self, grid: &Grid) -> Result<(), BatchError> {
        let e = grid.bus_elements();
        let present = |slots: &[Option<usize>]| slots.get(self.bus).copied().flatten().is_some();
        let ok = match self.element {
            ElementKind::Load => present(&e.load),
            ElementKind::StatGen => present(&e.stat_gen),
            ElementKind::VoltGen => present(&e.volt_gen),
            ElementKind::Compensator => present(&e.compensator),
        };
        if ok {
            Ok(())
        } else {
            Err(BatchError::UnknownElement { column: self.to_string(), element: self.element.describe(), bus: self.bus })
        }
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = match self.quantity {
            Quantity::P => "p",
            Quantity::Q => "q",
            Quantity::VSet => "vset",
        };
        write!(f, "{}_{}_{}", self.element.prefix(), self.bus, q)
    }
}

/// Input columns defined by the grid, bus-major in input-column order.
pub fn input_columns(grid: &Grid) -> Vec<ColumnKey> {
    let e = grid.bus_elements();
    let mut out = Vec::new();
    for b in 0..grid.n_buses() {
        if e.load[b].is_some() {
            out.push(ColumnKey::new(ElementKind::Load, b, Quantity::P));
            out.push(ColumnKey::new(ElementKind::Load, b, Quantity::Q));
        }
        if e.stat_gen[b].is_some() {
            out.push(ColumnKey::new(ElementKind::StatGen, b, Quantity::P));
            out.push(ColumnKey::new(ElementKind::StatGen, b, Quantity::Q));
        }
        if e.volt_gen[b].is_some() {
            out.push(ColumnKey::new(ElementKind::VoltGen, b, Quantity::P));
        }
    }
    out
}

/// Control columns defined by the grid: setpoints then compensators, each
/// in bus order.
pub fn control_columns(grid: &Grid) -> Vec<ColumnKey> {
    let e = grid.bus_elements();
    let n = grid.n_buses();
    (0..n)
        .filter(|&b| e.volt_gen[b].is_some())
        .map(|b| ColumnKey::new(ElementKind::VoltGen, b, Quantity::VSet))
        .chain((0..n).filter(|&b| e.compensator[b].is_some()).map(|b| ColumnKey::new(ElementKind::Compensator, b, Quantity::Q)))
        .collect()
}

pub fn read_input(x: &InputVector, key: ColumnKey) -> f64 {
    match key.slot() {
        Some(Slot::Input(c)) => x.get(key.bus, c),
        _ => panic!("{key} is not an input column"),
    }
}

pub fn read_control(y: &ControlVector, key: ColumnKey) -> f64 {
    match key.slot() {
        Some(Slot::Control(c)) => y.values[key.bus][c],
        _ => panic!("{key} is not a control column"),
    }
}

/// Parsed `# key: value` preamble lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Preamble(pub BTreeMap<String, String>);

impl Preamble {
    pub fn units(power_units: PowerUnits, base_mva: f64) -> Self {
        let mut map = BTreeMap::new();
        map.insert("power_units".to_string(), power_units.to_string());
        map.insert("base_mva".to_string(), format!("{base_mva}"));
        Self(map)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn power_units(&self) -> Result<PowerUnits, BatchError> {
        let raw = self.get("power_units").ok_or(BatchError::MissingPreamble("power_units"))?;
        raw.parse().map_err(|message| BatchError::Parse { line: 0, message })
    }

    pub fn base_mva(&self) -> Option<f64> {
        self.get("base_mva").and_then(|s| s.trim().parse().ok())
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for (k, v) in &self.0 {
            writeln!(out, "# {k}: {v}")?;
        }
        Ok(())
    }
}

/// Splits a file into its preamble and the CSV body.
pub fn split_preamble(text: &str) -> (Preamble, String, usize) {
    let mut preamble = Preamble::default();
    let mut body = String::with_capacity(text.len());
    let mut skipped = 0;
    let mut in_preamble = true;
    for line in text.lines() {
        if in_preamble {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    preamble.0.insert(k.trim().to_string(), v.trim().to_string());
                }
                skipped += 1;
                continue;
            }
            in_preamble = false;
        }
        body.push_str(line);
        body.push('\n');
    }
    (preamble, body, skipped)
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f"))
        .ok()
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Generic timestamped table with optional (missing) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTable {
    pub preamble: Preamble,
    pub columns: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl BatchTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, BatchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| BatchError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, BatchError> {
        let (preamble, body, skipped) = split_preamble(text);
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(BatchError::Parse { line: skipped + 1, message: "first column must be `timestamp`".into() });
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut timestamps = Vec::new();
        let mut rows = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let record = record?;
            let line = skipped + 2 + k;
            let ts = parse_timestamp(&record[0])
                .ok_or_else(|| BatchError::Parse { line, message: format!("bad timestamp `{}`", &record[0]) })?;
            let mut row = Vec::with_capacity(columns.len());
            for c in 0..columns.len() {
                let cell = record.get(c + 1).unwrap_or("");
                let value = match cell {
                    "" | "NaN" | "nan" | "NA" => None,
                    s => Some(s.parse::<f64>().map_err(|e| BatchError::Parse {
                        line,
                        message: format!("column `{}`: {e}", columns[c]),
                    })?),
                };
                row.push(value.filter(|v| v.is_finite()));
            }
            timestamps.push(ts);
            rows.push(row);
        }
        Ok(Self { preamble, columns, timestamps, rows })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), BatchError> {
        let path = path.as_ref();
        let io = |source| BatchError::Io { path: path.display().to_string(), source };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        self.write_to(&mut out).map_err(io)?;
        out.flush().map_err(io)
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        self.preamble.write_to(out)?;
        let mut w = csv::Writer::from_writer(out);
        let header = std::iter::once("timestamp").chain(self.columns.iter().map(String::as_str));
        w.write_record(header)?;
        for (ts, row) in self.timestamps.iter().zip(&self.rows) {
            let mut record = Vec::with_capacity(row.len() + 1);
            record.push(format_timestamp(ts));
            record.extend(row.iter().map(|v| v.map(|v| format!("{v}")).unwrap_or_default()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Builds a per-unit input table for the given instances.
    pub fn from_inputs(grid: &Grid, inputs: &[InputVector]) -> Self {
        let keys = input_columns(grid);
        let timestamps = synthetic_timestamps(inputs);
        let rows = inputs.iter().map(|x| keys.iter().map(|&k| Some(read_input(x, k))).collect()).collect();
        Self {
            preamble: Preamble::units(PowerUnits::PerUnit, grid.base_mva),
            columns: keys.iter().map(ToString::to_string).collect(),
            timestamps,
            rows,
        }
    }

    /// Builds a per-unit control table for the given instances.
    pub fn from_controls(grid: &Grid, timestamps: Vec<NaiveDateTime>, controls: &[ControlVector]) -> Self {
        let keys = control_columns(grid);
        let rows = controls.iter().map(|y| keys.iter().map(|&k| Some(read_control(y, k))).collect()).collect();
        Self {
            preamble: Preamble::units(PowerUnits::PerUnit, grid.base_mva),
            columns: keys.iter().map(ToString::to_string).collect(),
            timestamps,
            rows,
        }
    }

    fn scale_for(&self, grid: &Grid) -> Result<PerUnit, BatchError> {
        let units = self.preamble.power_units()?;
        Ok(match units {
            PowerUnits::PerUnit => PerUnit::new(1.0),
            PowerUnits::Physical => PerUnit::new(self.preamble.base_mva().unwrap_or(grid.base_mva)),
        })
    }

    /// Reads every row as an input vector (per-unit). Control columns are
    /// ignored; other unknown columns are an error. Missing cells read as 0.
    pub fn to_inputs(&self, grid: &Grid) -> Result<Vec<InputVector>, BatchError> {
        let scale = self.scale_for(grid)?;
        let slots = self.slots(grid)?;
        Ok(self
            .timestamps
            .iter()
            .zip(&self.rows)
            .map(|(ts, row)| {
                let mut x = InputVector::zeros(grid.n_buses());
                x.timestamp = Some(*ts);
                for (&(key, slot), v) in slots.iter().zip(row) {
                    if let (Some(Slot::Input(c)), Some(v)) = (slot, v) {
                        x.set(key.bus, c, scale.to_pu(*v));
                    }
                }
                x
            })
            .collect())
    }

    /// Reads every row as a control vector. Unset masked entries default to
    /// the nominal controls.
    pub fn to_controls(&self, grid: &Grid) -> Result<Vec<ControlVector>, BatchError> {
        let scale = self.scale_for(grid)?;
        let slots = self.slots(grid)?;
        Ok(self
            .rows
            .iter()
            .map(|row| {
                let mut y = ControlVector::nominal(grid);
                for (&(key, slot), v) in slots.iter().zip(row) {
                    if let (Some(Slot::Control(c)), Some(v)) = (slot, v) {
                        y.values[key.bus][c] = if key.is_power() { scale.to_pu(*v) } else { *v };
                    }
                }
                y
            })
            .collect())
    }

    fn slots(&self, grid: &Grid) -> Result<Vec<(ColumnKey, Option<Slot>)>, BatchError> {
        self.columns
            .iter()
            .map(|name| {
                let key = ColumnKey::parse(name)
                    .ok_or_else(|| BatchError::Parse { line: 0, message: format!("unrecognized column `{name}`") })?;
                key.check(grid)?;
                Ok((key, key.slot()))
            })
            .collect()
    }
}

/// Timestamps of the given inputs; instances without one are numbered
/// hourly from 2000-01-01.
pub fn synthetic_timestamps(inputs: &[InputVector]) -> Vec<NaiveDateTime> {
    let epoch = NaiveDateTime::parse_from_str("2000-01-01T00:00:00", TIMESTAMP_FORMAT).expect("valid epoch");
    inputs
        .iter()
        .enumerate()
        .map(|(k, x)| x.timestamp.unwrap_or(epoch + chrono::Duration::hours(k as i64)))
        .collect()
}

/// Reads a whole file into lines, used by callers that need the raw
/// preamble without parsing the body.
pub fn read_preamble(path: impl AsRef<Path>) -> Result<Preamble, BatchError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| BatchError::Io { path: path.display().to_string(), source })?;
    let mut preamble = Preamble::default();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|source| BatchError::Io { path: path.display().to_string(), source })?;
        match line.strip_prefix('#') {
            Some(rest) => {
                if let Some((k, v)) = rest.split_once(':') {
                    preamble.0.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
            None => break,
        }
    }
    Ok(preamble)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    #[test]
    fn column_names_round_trip() {
        for name in ["load_12_p", "vgen_3_vset", "comp_40_q", "sgen_7_q", "vgen_0_p"] {
            assert_eq!(ColumnKey::parse(name).unwrap().to_string(), name);
        }
        for bad in ["load_12", "load_x_p", "comp_4_p", "foo_1_p", "load_1_p_x", "vgen_2_q"] {
            assert!(ColumnKey::parse(bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn physical_units_are_converted() {
        let grid = fixtures::small14();
        let load_bus = grid.loads[0].bus;
        let text = format!("# power_units: MW\n# base_mva: 100\ntimestamp,load_{load_bus}_p\n2021-01-01T00:00:00,50\n");
        let table = BatchTable::parse(&text).unwrap();
        let xs = table.to_inputs(&grid).unwrap();
        assert_eq!(xs[0].get(load_bus, InputColumn::LoadP), 0.5);
    }

    #[test]
    fn missing_units_preamble() {
        let grid = fixtures::small14();
        let table = BatchTable::parse("timestamp,load_1_p\n2021-01-01T00:00:00,5\n").unwrap();
        assert!(matches!(table.to_inputs(&grid), Err(BatchError::MissingPreamble("power_units"))));
    }

    #[test]
    fn column_for_missing_element_is_an_error() {
        let grid = fixtures::two_bus();
        let table = BatchTable::parse("# power_units: pu\ntimestamp,comp_1_q\n2021-01-01T00:00:00,5\n").unwrap();
        assert!(matches!(table.to_controls(&grid), Err(BatchError::UnknownElement { .. })));
    }

    proptest! {
        #[test]
        fn inputs_survive_a_file_round_trip(seed in 0u64..1000) {
            let grid = fixtures::small14();
            let nominal = fixtures::small14_nominal(&grid);
            let xs = crate::datagen::sample_synthetic(&grid, &nominal, 3, 0.3, seed);
            let table = BatchTable::from_inputs(&grid, &xs);
            let mut buf = Vec::new();
            table.write_to(&mut buf).unwrap();
            let back = BatchTable::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(&back, &table);
            let xs2 = back.to_inputs(&grid).unwrap();
            for (a, b) in xs.iter().zip(&xs2) {
                prop_assert_eq!(&a.rows, &b.rows);
            }
        }
    }
}
