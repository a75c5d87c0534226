//! Recorded-like operating profiles: hourly generation and 10-minute load
//! series with the daily and seasonal structure of a hydro/wind/solar
//! system in the southern hemisphere. Used where real recordings are not
//! available; the output goes through the same ingestion path as real data.

use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::batch::{BatchTable, ColumnKey, ElementKind, PowerUnits, Preamble, Quantity};
use crate::grid::Grid;
use crate::powerflow::{InputColumn, InputVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RealisticOptions {
    pub start: NaiveDateTime,
    pub hours: usize,
    /// Load sampling interval in minutes.
    pub load_interval_min: u32,
    pub seed: u64,
}

impl Default for RealisticOptions {
    fn default() -> Self {
        Self {
            start: crate::batch::parse_timestamp("2021-01-01T00:00:00").expect("valid"),
            hours: 8760,
            load_interval_min: 10,
            seed: 0,
        }
    }
}

/// Fractional hour of day.
fn hour_of(t: &NaiveDateTime) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

/// Annual cycle peaking in mid January (southern summer).
fn summer_cycle(t: &NaiveDateTime) -> f64 {
    (2.0 * PI * (t.ordinal() as f64 - 15.0) / 365.25).cos()
}

fn rescale(series: &mut [f64], target_mean: f64) {
    let mean = series.iter().sum::<f64>() / series.len().max(1) as f64;
    let k = if mean.abs() > 1e-12 { target_mean / mean } else { 0.0 };
    for v in series.iter_mut() {
        *v *= k;
    }
}

fn wind(rng: &mut ChaCha8Rng, stamps: &[NaiveDateTime]) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.9).expect("valid");
    let mut w: f64 = 7.0;
    stamps
        .iter()
        .map(|t| {
            let mean = 7.5 - 1.5 * summer_cycle(t);
            w = (0.95 * w + 0.05 * mean + noise.sample(rng)).max(0.0);
            (((w - 3.0) / 9.0).clamp(0.0, 1.0)).powi(3)
        })
        .collect()
}

fn solar(rng: &mut ChaCha8Rng, stamps: &[NaiveDateTime]) -> Vec<f64> {
    let mut day = None;
    let mut cloud = 1.0;
    stamps
        .iter()
        .map(|t| {
            if day != Some(t.ordinal()) {
                day = Some(t.ordinal());
                cloud = rng.random_range(0.35..1.0);
            }
            let h = hour_of(t);
            let shape = if (8.0..=18.0).contains(&h) { (PI * (h - 7.0) / 12.0).sin() } else { 0.0 };
            shape * cloud * (1.0 + 0.35 * summer_cycle(t))
        })
        .collect()
}

/// Bimodal dispatch: weekly wet/dry regimes, wetter in winter and spring.
fn hydro(rng: &mut ChaCha8Rng, stamps: &[NaiveDateTime]) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.05).expect("valid");
    let mut high = rng.random_bool(0.5);
    let mut week = None;
    stamps
        .iter()
        .map(|t| {
            let w = t.iso_week().week();
            if week != Some(w) {
                week = Some(w);
                let p_high = 0.5 - 0.3 * summer_cycle(t);
                if rng.random_bool(0.3) {
                    high = rng.random_bool(p_high);
                }
            }
            let level = if high { 1.6 } else { 0.4 };
            let daily = 0.12 * (2.0 * PI * (hour_of(t) - 14.0) / 24.0).cos();
            (level + daily + noise.sample(rng)).max(0.0)
        })
        .collect()
}

fn demand(rng: &mut ChaCha8Rng, stamps: &[NaiveDateTime], step_hours: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.02).expect("valid");
    let mut ar = 0.0;
    let keep = 0.9f64.powf(step_hours);
    stamps
        .iter()
        .map(|t| {
            let h = hour_of(t);
            let daily = -0.15 * (2.0 * PI * (h - 3.0) / 24.0).cos() + 0.12 * (-(h - 20.5).powi(2) / 3.0).exp();
            let weekend = if t.weekday().number_from_monday() >= 6 { -0.06 } else { 0.0 };
            ar = keep * ar + noise.sample(rng) * (1.0 - keep * keep).sqrt();
            (1.0 - 0.08 * summer_cycle(t) + daily + weekend + ar).max(0.05)
        })
        .collect()
}

/// Generation (hourly) and load (every `load_interval_min`) tables in MW.
/// Every series averages to its nominal value. Static generators alternate
/// wind and solar by list position; dispatchable generators follow the
/// hydro pattern.
pub fn realistic_profiles(grid: &Grid, nominal: &InputVector, options: &RealisticOptions) -> (BatchTable, BatchTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let base = grid.base_mva;
    let hourly: Vec<NaiveDateTime> = (0..options.hours).map(|h| options.start + Duration::hours(h as i64)).collect();
    let step = options.load_interval_min.max(1) as i64;
    let n_load = options.hours * 60 / step as usize;
    let fine: Vec<NaiveDateTime> = (0..n_load).map(|k| options.start + Duration::minutes(step * k as i64)).collect();

    let mut gen_cols = Vec::new();
    let mut gen_series: Vec<Vec<f64>> = Vec::new();
    for (k, g) in grid.stat_gens.iter().enumerate() {
        let p_nom = nominal.get(g.bus, InputColumn::StatGenP) * base;
        let q_nom = nominal.get(g.bus, InputColumn::StatGenQ) * base;
        let mut p = if k % 2 == 0 { wind(&mut rng, &hourly) } else { solar(&mut rng, &hourly) };
        rescale(&mut p, p_nom);
        let q: Vec<f64> = if p_nom.abs() > 1e-12 { p.iter().map(|v| v * q_nom / p_nom).collect() } else { vec![q_nom; p.len()] };
        gen_cols.push(ColumnKey::new(ElementKind::StatGen, g.bus, Quantity::P));
        gen_series.push(p);
        gen_cols.push(ColumnKey::new(ElementKind::StatGen, g.bus, Quantity::Q));
        gen_series.push(q);
    }
    for g in grid.volt_gens.iter().filter(|g| !g.is_slack) {
        let mut p = hydro(&mut rng, &hourly);
        rescale(&mut p, nominal.get(g.bus, InputColumn::VoltGenP) * base);
        gen_cols.push(ColumnKey::new(ElementKind::VoltGen, g.bus, Quantity::P));
        gen_series.push(p);
    }
    if let Some(g) = grid.volt_gens.iter().find(|g| g.is_slack) {
        let p = nominal.get(g.bus, InputColumn::VoltGenP) * base;
        gen_cols.push(ColumnKey::new(ElementKind::VoltGen, g.bus, Quantity::P));
        gen_series.push(vec![p; hourly.len()]);
    }

    let mut load_cols = Vec::new();
    let mut load_series = Vec::new();
    for l in &grid.loads {
        let p_nom = nominal.get(l.bus, InputColumn::LoadP) * base;
        let q_nom = nominal.get(l.bus, InputColumn::LoadQ) * base;
        let mut p = demand(&mut rng, &fine, step as f64 / 60.0);
        rescale(&mut p, p_nom);
        let q: Vec<f64> = if p_nom.abs() > 1e-12 { p.iter().map(|v| v * q_nom / p_nom).collect() } else { vec![q_nom; p.len()] };
        load_cols.push(ColumnKey::new(ElementKind::Load, l.bus, Quantity::P));
        load_series.push(p);
        load_cols.push(ColumnKey::new(ElementKind::Load, l.bus, Quantity::Q));
        load_series.push(q);
    }

    let table = |cols: Vec<ColumnKey>, series: Vec<Vec<f64>>, stamps: Vec<NaiveDateTime>| {
        let rows = (0..stamps.len()).map(|r| series.iter().map(|s| Some(round6(s[r]))).collect()).collect();
        BatchTable {
            preamble: Preamble::units(PowerUnits::Physical, base),
            columns: cols.iter().map(ToString::to_string).collect(),
            timestamps: stamps,
            rows,
        }
    };
    (table(gen_cols, gen_series, hourly), table(load_cols, load_series, fine))
}

/// Six decimals, as a metering system would record MW values.
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}
