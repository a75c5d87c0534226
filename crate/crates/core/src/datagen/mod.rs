//! Training data: synthetic sampling around a nominal profile, ingestion of
//! recorded time series, oracle labeling, splits and descriptive statistics.

mod dataset;
mod realistic;
mod stats;
mod timeseries;

pub use dataset::{
    label_dataset, read_dataset, split, write_dataset, DatasetManifest, LabeledDataset, LabeledRow, NormStats,
    SplitScheme, SplitTag,
};
pub use realistic::{realistic_profiles, RealisticOptions};
pub use stats::{dataset_stats, write_stats, ColumnStats, Season, StatReport};
pub use timeseries::{ingest_files, ingest_timeseries, IngestReport, TimeSeriesTable};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::batch::BatchError;
use crate::grid::Grid;
use crate::powerflow::{InputColumn, InputVector};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error("{0}")]
    Invalid(String),
    #[error("split leaves the {0} block empty")]
    EmptyBlock(&'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| DataError::Io { path: path.display().to_string(), source }
    }
}

/// Column-wise mean of a non-empty table.
pub fn nominal_profile(table: &TimeSeriesTable, grid: &Grid) -> Result<InputVector, DataError> {
    if table.is_empty() {
        return Err(DataError::Invalid("cannot average an empty table".into()));
    }
    let n = table.len() as f64;
    let mut x = InputVector::zeros(grid.n_buses());
    for (c, key) in table.columns.iter().enumerate() {
        let Some(crate::batch::Slot::Input(col)) = key.slot() else { continue };
        let mean = table.values.iter().map(|row| row[c]).sum::<f64>() / n;
        x.set(key.bus, col, mean);
    }
    Ok(x)
}

/// Draws `count` instances, every defined entry independently uniform in
/// `nominal·[1 − spread, 1 + spread]`. Undefined entries stay zero.
pub fn sample_synthetic(grid: &Grid, nominal: &InputVector, count: usize, spread: f64, seed: u64) -> Vec<InputVector> {
    assert!((0.0..1.0).contains(&spread), "spread must lie in [0, 1)");
    let mask = InputVector::defined_mask(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut x = InputVector::zeros(grid.n_buses());
            for (b, m) in mask.iter().enumerate() {
                for col in InputColumn::ALL {
                    if !m[col.index()] {
                        continue;
                    }
                    let v = nominal.get(b, col);
                    let (a, c) = (v * (1.0 - spread), v * (1.0 + spread));
                    let (lo, hi) = if a <= c { (a, c) } else { (c, a) };
                    let draw = if hi > lo { rng.random_range(lo..=hi) } else { v };
                    x.set(b, col, draw);
                }
            }
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn zero_spread_copies_nominal() {
        let grid = fixtures::small14();
        let nominal = fixtures::small14_nominal(&grid);
        for x in sample_synthetic(&grid, &nominal, 5, 0.0, 3) {
            assert_eq!(x.rows, nominal.rows);
        }
    }

    #[test]
    fn every_entry_within_band() {
        let grid = fixtures::small14();
        let nominal = fixtures::small14_nominal(&grid);
        let mask = InputVector::defined_mask(&grid);
        for x in sample_synthetic(&grid, &nominal, 500, 0.3, 9) {
            for b in 0..grid.n_buses() {
                for col in InputColumn::ALL {
                    let (v, n) = (x.get(b, col), nominal.get(b, col));
                    if !mask[b][col.index()] {
                        assert_eq!(v, 0.0);
                        continue;
                    }
                    let (lo, hi) = (0.7 * n, 1.3 * n);
                    assert!(v >= lo.min(hi) && v <= lo.max(hi), "bus {b} {col:?}: {v} vs nominal {n}");
                }
            }
        }
    }

    #[test]
    fn sample_mean_converges_to_nominal() {
        let grid = fixtures::three_bus();
        let nominal = fixtures::three_bus_inputs();
        let k = 100_000;
        let xs = sample_synthetic(&grid, &nominal, k, 0.3, 1);
        for (b, col) in [(1, InputColumn::VoltGenP), (2, InputColumn::LoadP), (2, InputColumn::LoadQ)] {
            let mean = xs.iter().map(|x| x.get(b, col)).sum::<f64>() / k as f64;
            let n = nominal.get(b, col);
            assert!((mean - n).abs() <= 0.01 * n.abs(), "{mean} vs {n}");
        }
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let grid = fixtures::small14();
        let nominal = fixtures::small14_nominal(&grid);
        let a = sample_synthetic(&grid, &nominal, 20, 0.3, 42);
        let b = sample_synthetic(&grid, &nominal, 20, 0.3, 42);
        let c = sample_synthetic(&grid, &nominal, 20, 0.3, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
