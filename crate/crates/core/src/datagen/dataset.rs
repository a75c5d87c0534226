use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::batch::{
    control_columns, format_timestamp, input_columns, parse_timestamp, read_control, read_input, split_preamble,
    synthetic_timestamps, ColumnKey, PowerUnits, Preamble, Slot,
};
use crate::grid::Grid;
use crate::orpd::{solve_orpd, ControlSpace, OrpdOptions};
use crate::powerflow::{ControlVector, InputVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "val" => Some(SplitTag::Val),
            "test" => Some(SplitTag::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub timestamp: NaiveDateTime,
    pub x: InputVector,
    /// Present only for converged rows.
    pub y_star: Option<ControlVector>,
    pub converged: bool,
    pub p_loss_star: Option<f64>,
    pub feasible_at: Option<f64>,
    pub split: Option<SplitTag>,
}

/// Standardization statistics from the training rows. Inputs are
/// standardized per feature column over the entries each grid defines,
/// outputs per control column over the decision entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: [f64; 5],
    pub input_std: [f64; 5],
    pub output_mean: [f64; 2],
    pub output_std: [f64; 2],
}

impl NormStats {
    /// Spreads below this are treated as 1 so constant columns map to zero.
    pub const MIN_STD: f64 = 1e-9;

    pub fn compute(grid: &Grid, rows: &[&LabeledRow]) -> Self {
        let in_mask = InputVector::defined_mask(grid);
        let out_mask = ControlSpace::new(grid).decision_mask(grid.n_buses());
        let mut input: [Vec<f64>; 5] = Default::default();
        let mut output: [Vec<f64>; 2] = Default::default();
        for row in rows {
            for (b, r) in row.x.rows.iter().enumerate() {
                for c in 0..5 {
                    if in_mask[b][c] {
                        input[c].push(r[c]);
                    }
                }
            }
            if let Some(y) = &row.y_star {
                for (b, v) in y.values.iter().enumerate() {
                    for c in 0..2 {
                        if out_mask[b][c] {
                            output[c].push(v[c]);
                        }
                    }
                }
            }
        }
        let finish = |values: &[f64]| {
            if values.is_empty() {
                return (0.0, 1.0);
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            (mean, if std < Self::MIN_STD { 1.0 } else { std })
        };
        let mut stats = Self { input_mean: [0.0; 5], input_std: [1.0; 5], output_mean: [0.0; 2], output_std: [1.0; 2] };
        for c in 0..5 {
            (stats.input_mean[c], stats.input_std[c]) = finish(&input[c]);
        }
        for c in 0..2 {
            (stats.output_mean[c], stats.output_std[c]) = finish(&output[c]);
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub rows: Vec<LabeledRow>,
    pub norm_stats: Option<NormStats>,
}

/// Summary written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub rows: usize,
    pub converged: usize,
    pub converged_fraction: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Timestamps of rows without a label.
    pub dropped_timestamps: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.converged).count() as f64 / self.rows.len() as f64
    }

    pub fn tagged(&self, tag: SplitTag) -> impl Iterator<Item = &LabeledRow> {
        self.rows.iter().filter(move |r| r.split == Some(tag) && r.converged)
    }

    pub fn manifest(&self) -> DatasetManifest {
        let converged = self.rows.iter().filter(|r| r.converged).count();
        DatasetManifest {
            rows: self.rows.len(),
            converged,
            converged_fraction: self.converged_fraction(),
            train: self.tagged(SplitTag::Train).count(),
            val: self.tagged(SplitTag::Val).count(),
            test: self.tagged(SplitTag::Test).count(),
            dropped_timestamps: self.rows.iter().filter(|r| !r.converged).map(|r| format_timestamp(&r.timestamp)).collect(),
        }
    }
}

/// Labels every input with the oracle, in parallel across rows. Output
/// order follows input order.
pub fn label_dataset(grid: &Grid, inputs: &[InputVector], options: &OrpdOptions) -> LabeledDataset {
    let stamps = synthetic_timestamps(inputs);
    let rows = inputs
        .par_iter()
        .zip(stamps.par_iter())
        .map(|(x, ts)| {
            let mut x = x.clone();
            x.timestamp = Some(*ts);
            let (y_star, p_loss, feasible_at, converged) = match solve_orpd(grid, &x, options) {
                Ok(sol) if sol.converged => (Some(sol.y_star), Some(sol.p_loss), sol.feasible_at, true),
                Ok(sol) => (None, None, sol.feasible_at, false),
                Err(e) => {
                    log::warn!("labeling {}: {e}", format_timestamp(ts));
                    (None, None, None, false)
                }
            };
            LabeledRow { timestamp: *ts, x, y_star, converged, p_loss_star: p_loss, feasible_at, split: None }
        })
        .collect::<Vec<_>>();
    let ds = LabeledDataset { rows, norm_stats: None };
    log::info!("labeled {} rows, {:.1}% converged", ds.len(), 100.0 * ds.converged_fraction());
    ds
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "fractions", rename_all = "snake_case")]
pub enum SplitScheme {
    /// Contiguous time blocks in order train, val, test.
    Chronological([f64; 3]),
    /// Seeded permutation.
    Random([f64; 3]),
}

impl SplitScheme {
    fn fractions(&self) -> [f64; 3] {
        match *self {
            SplitScheme::Chronological(f) | SplitScheme::Random(f) => f,
        }
    }
}

/// Tags converged rows train/val/test and recomputes the normalization
/// statistics from the new training block. Block sizes are
/// `round(f·n)` for train and val, the remainder for test.
pub fn split(grid: &Grid, dataset: &LabeledDataset, scheme: SplitScheme, seed: u64) -> Result<LabeledDataset, DataError> {
    let f = scheme.fractions();
    if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::Invalid(format!("split fractions {f:?} must be non-negative and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..dataset.rows.len()).filter(|&k| dataset.rows[k].converged).collect();
    match scheme {
        SplitScheme::Chronological(_) => idx.sort_by_key(|&k| dataset.rows[k].timestamp),
        SplitScheme::Random(_) => idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    let n = idx.len();
    let n_train = (f[0] * n as f64).round() as usize;
    let n_val = ((f[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_test = n.saturating_sub(n_train + n_val);
    for (name, size) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(DataError::EmptyBlock(name));
        }
    }
    let mut out = dataset.clone();
    for row in &mut out.rows {
        row.split = None;
    }
    for (pos, &k) in idx.iter().enumerate() {
        out.rows[k].split = Some(if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_val {
            SplitTag::Val
        } else {
            SplitTag::Test
        });
    }
    let train: Vec<&LabeledRow> = out.tagged(SplitTag::Train).collect();
    out.norm_stats = Some(NormStats::compute(grid, &train));
    Ok(out)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.json"))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes `path` (CSV) plus `<stem>.stats.json` when statistics exist and
/// `<stem>.manifest.json`.
pub fn write_dataset(path: impl AsRef<Path>, grid: &Grid, dataset: &LabeledDataset) -> Result<(), DataError> {
    let path = path.as_ref();
    let inputs = input_columns(grid);
    let controls = control_columns(grid);
    let mut buf = Vec::new();
    Preamble::units(PowerUnits::PerUnit, grid.base_mva).write_to(&mut buf).map_err(DataError::io(path))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["timestamp".to_string()];
        header.extend(inputs.iter().chain(&controls).map(ToString::to_string));
        header.extend(["converged", "p_loss_star", "feasible_at", "split"].map(String::from));
        w.write_record(&header).map_err(|e| DataError::Batch(e.into()))?;
        for row in &dataset.rows {
            let mut rec = vec![format_timestamp(&row.timestamp)];
            rec.extend(inputs.iter().map(|&k| format!("{}", read_input(&row.x, k))));
            rec.extend(controls.iter().map(|&k| fmt_opt(row.y_star.as_ref().map(|y| read_control(y, k)))));
            rec.push(row.converged.to_string());
            rec.push(fmt_opt(row.p_loss_star));
            rec.push(fmt_opt(row.feasible_at));
            rec.push(row.split.map(|s| s.as_str().to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(|e| DataError::Batch(e.into()))?;
        }
        w.flush().map_err(DataError::io(path))?;
    }
    std::fs::write(path, buf).map_err(DataError::io(path))?;

    let stats_path = sidecar(path, "stats");
    if let Some(stats) = &dataset.norm_stats {
        std::fs::write(&stats_path, serde_json::to_string_pretty(stats)? + "\n").map_err(DataError::io(&stats_path))?;
    } else if stats_path.exists() {
        std::fs::remove_file(&stats_path).map_err(DataError::io(&stats_path))?;
    }
    let manifest_path = sidecar(path, "manifest");
    let mut f = std::fs::File::create(&manifest_path).map_err(DataError::io(&manifest_path))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&dataset.manifest())?).map_err(DataError::io(&manifest_path))?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], including its statistics
/// sidecar when present.
pub fn read_dataset(path: impl AsRef<Path>, grid: &Grid) -> Result<LabeledDataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(DataError::io(path))?;
    let (preamble, body, skipped) = split_preamble(&text);
    if preamble.power_units()? != PowerUnits::PerUnit {
        return Err(DataError::Invalid("dataset files are stored in per-unit".into()));
    }
    let bad = |line: usize, message: String| DataError::Batch(crate::batch::BatchError::Parse { line, message });
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| DataError::Batch(e.into()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| bad(skipped + 1, format!("missing column `{name}`")));
    let (c_conv, c_loss, c_feas, c_split) = (col("converged")?, col("p_loss_star")?, col("feasible_at")?, col("split")?);
    let mut keyed = Vec::new();
    for (c, name) in header.iter().enumerate().skip(1) {
        if let Some(key) = ColumnKey::parse(name) {
            key.check(grid)?;
            keyed.push((c, key));
        }
    }
    let num = |line: usize, s: &str| -> Result<Option<f64>, DataError> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|e| bad(line, format!("`{s}`: {e}")))
    };

    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Batch(e.into()))?;
        let line = skipped + 2 + k;
        let timestamp = parse_timestamp(&record[0]).ok_or_else(|| bad(line, format!("bad timestamp `{}`", &record[0])))?;
        let converged = &record[c_conv] == "true";
        let mut x = InputVector::zeros(grid.n_buses());
        x.timestamp = Some(timestamp);
        let mut y = ControlVector::nominal(grid);
        for &(c, key) in &keyed {
            let v = num(line, &record[c])?;
            match (key.slot(), v) {
                (Some(Slot::Input(col)), Some(v)) => x.set(key.bus, col, v),
                (Some(Slot::Control(col)), Some(v)) => y.values[key.bus][col] = v,
                _ => {}
            }
        }
        rows.push(LabeledRow {
            timestamp,
            x,
            y_star: converged.then_some(y),
            converged,
            p_loss_star: num(line, &record[c_loss])?,
            feasible_at: num(line, &record[c_feas])?,
            split: SplitTag::parse(&record[c_split]),
        });
    }
    let stats_path = sidecar(path, "stats");
    let norm_stats = if stats_path.exists() {
        let text = std::fs::read_to_string(&stats_path).map_err(DataError::io(&stats_path))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    Ok(LabeledDataset { rows, norm_stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::sample_synthetic;
    use crate::fixtures;
    use crate::orpd::brute_force_orpd;
    use chrono::Duration;

    fn fake_dataset(n: usize) -> (Grid, LabeledDataset) {
        let grid = fixtures::three_bus();
        let t0 = parse_timestamp("2020-01-01T00:00:00").unwrap();
        let rows = (0..n)
            .map(|k| {
                // Reverse order so chronological sorting matters.
                let timestamp = t0 + Duration::hours((n - k) as i64);
                let mut x = fixtures::three_bus_inputs();
                x.timestamp = Some(timestamp);
                x.set(2, crate::powerflow::InputColumn::LoadP, k as f64);
                let mut y = ControlVector::nominal(&grid);
                y.values[1][0] = 1.0 + k as f64 * 1e-3;
                y.values[2][1] = 0.1 * k as f64;
                LabeledRow {
                    timestamp,
                    x,
                    y_star: Some(y),
                    converged: true,
                    p_loss_star: Some(0.01),
                    feasible_at: Some(0.0),
                    split: None,
                }
            })
            .collect();
        (grid, LabeledDataset { rows, norm_stats: None })
    }

    #[test]
    fn chronological_blocks() {
        let (grid, ds) = fake_dataset(100);
        let out = split(&grid, &ds, SplitScheme::Chronological([0.77, 0.18, 0.05]), 0).unwrap();
        let m = out.manifest();
        assert_eq!((m.train, m.val, m.test), (77, 18, 5));
        let max_train = out.tagged(SplitTag::Train).map(|r| r.timestamp).max().unwrap();
        let min_val = out.tagged(SplitTag::Val).map(|r| r.timestamp).min().unwrap();
        let max_val = out.tagged(SplitTag::Val).map(|r| r.timestamp).max().unwrap();
        let min_test = out.tagged(SplitTag::Test).map(|r| r.timestamp).min().unwrap();
        assert!(max_train < min_val && max_val < min_test);
    }

    #[test]
    fn random_split_is_seeded() {
        let (grid, ds) = fake_dataset(50);
        let scheme = SplitScheme::Random([0.6, 0.2, 0.2]);
        let a = split(&grid, &ds, scheme, 5).unwrap();
        let b = split(&grid, &ds, scheme, 5).unwrap();
        let c = split(&grid, &ds, scheme, 6).unwrap();
        let tags = |d: &LabeledDataset| d.rows.iter().map(|r| r.split).collect::<Vec<_>>();
        assert_eq!(tags(&a), tags(&b));
        assert_ne!(tags(&a), tags(&c));
    }

    #[test]
    fn empty_block_is_an_error() {
        let (grid, ds) = fake_dataset(10);
        let err = split(&grid, &ds, SplitScheme::Chronological([1.0, 0.0, 0.0]), 0).unwrap_err();
        assert!(matches!(err, DataError::EmptyBlock("validation")));
        assert!(split(&grid, &ds, SplitScheme::Random([0.5, 0.2, 0.2]), 0).is_err());
    }

    #[test]
    fn stats_come_from_train_rows_only() {
        let (grid, ds) = fake_dataset(20);
        let out = split(&grid, &ds, SplitScheme::Chronological([0.5, 0.25, 0.25]), 0).unwrap();
        let train: Vec<&LabeledRow> = out.tagged(SplitTag::Train).collect();
        // Oracle: compensator injections of the train rows, averaged by hand.
        let q: Vec<f64> = train.iter().map(|r| r.y_star.as_ref().unwrap().values[2][1]).collect();
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        let var = q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / q.len() as f64;
        let stats = out.norm_stats.as_ref().unwrap();
        assert!((stats.output_mean[1] - mean).abs() < 1e-12);
        assert!((stats.output_std[1] - var.sqrt()).abs() < 1e-12);
        // Perturbing non-train rows leaves the statistics untouched.
        let mut changed = out.clone();
        for row in changed.rows.iter_mut().filter(|r| r.split != Some(SplitTag::Train)) {
            row.y_star.as_mut().unwrap().values[2][1] = 99.0;
        }
        let train: Vec<&LabeledRow> = changed.tagged(SplitTag::Train).collect();
        assert_eq!(&NormStats::compute(&grid, &train), stats);
    }

    #[test]
    fn unconverged_rows_are_never_tagged() {
        let (grid, mut ds) = fake_dataset(30);
        ds.rows[3].converged = false;
        ds.rows[3].y_star = None;
        let out = split(&grid, &ds, SplitScheme::Random([0.5, 0.25, 0.25]), 1).unwrap();
        assert_eq!(out.rows[3].split, None);
        assert_eq!(out.manifest().dropped_timestamps.len(), 1);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let (grid, ds) = fake_dataset(12);
        let mut ds = split(&grid, &ds, SplitScheme::Random([0.5, 0.25, 0.25]), 2).unwrap();
        ds.rows[0].converged = false;
        ds.rows[0].y_star = None;
        ds.rows[0].p_loss_star = None;
        ds.rows[0].split = None;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        write_dataset(&path, &grid, &ds).unwrap();
        assert!(dir.path().join("labels.stats.json").exists());
        assert!(dir.path().join("labels.manifest.json").exists());
        let back = read_dataset(&path, &grid).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn three_bus_labels_match_brute_force() {
        let grid = fixtures::three_bus();
        let inputs = sample_synthetic(&grid, &fixtures::three_bus_inputs(), 4, 0.3, 8);
        let ds = label_dataset(&grid, &inputs, &OrpdOptions::default());
        for (row, x) in ds.rows.iter().zip(&inputs) {
            assert!(row.converged);
            let scan = brute_force_orpd(&grid, x, 50).unwrap();
            assert!(row.p_loss_star.unwrap() <= scan.p_loss * 1.005);
        }
    }

    #[test]
    fn zero_dimensional_rows_all_converge() {
        let grid = fixtures::two_bus();
        let mut nominal = InputVector::zeros(2);
        nominal.set(1, crate::powerflow::InputColumn::LoadP, 0.4);
        let inputs = sample_synthetic(&grid, &nominal, 6, 0.3, 0);
        let ds = label_dataset(&grid, &inputs, &OrpdOptions::default());
        assert_eq!(ds.converged_fraction(), 1.0);
    }
}
