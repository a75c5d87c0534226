//! Bundled networks and small hand-built cases used by tests, the CLI and
//! the acceptance suite. The JSON fixtures are produced by
//! `cargo run --example build_fixtures`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::BatchTable;
use crate::grid::{parse_grid, Bus, Compensator, Grid, Line, Load, StatGenerator, VoltGenerator};
use crate::powerflow::{ControlVector, InputColumn, InputVector};

/// IEEE 14-bus topology with four dispatchable setpoints, two compensators
/// and three static generators. Line shunts carry a conductance so that the
/// loss-optimal voltage level is interior.
pub const SMALL14: &str = include_str!("../fixtures/small14.json");
/// Nominal injections for [`SMALL14`], MW/MVar.
pub const SMALL14_NOMINAL: &str = include_str!("../fixtures/small14_nominal.csv");
/// Slack, one dispatchable generator, one load bus with a compensator.
pub const THREE_BUS: &str = include_str!("../fixtures/three_bus.json");
/// 107 buses (95 at 150 kV, 12 at 500 kV), 156 branches, 15 + 27
/// generators, 55 loads and 6 compensators.
pub const URUGUAY_SHAPED: &str = include_str!("../fixtures/uruguay_shaped.json");
pub const URUGUAY_SHAPED_NOMINAL: &str = include_str!("../fixtures/uruguay_shaped_nominal.csv");

pub fn small14() -> Grid {
    parse_grid(SMALL14).expect("bundled fixture is valid")
}

pub fn small14_nominal(grid: &Grid) -> InputVector {
    let table = BatchTable::parse(SMALL14_NOMINAL).expect("bundled nominal profile parses");
    let mut x = table.to_inputs(grid).expect("bundled nominal profile matches the grid").remove(0);
    x.timestamp = None;
    x
}

pub fn three_bus() -> Grid {
    parse_grid(THREE_BUS).expect("bundled fixture is valid")
}

pub fn uruguay_shaped() -> Grid {
    parse_grid(URUGUAY_SHAPED).expect("bundled fixture is valid")
}

pub fn uruguay_shaped_nominal(grid: &Grid) -> InputVector {
    let table = BatchTable::parse(URUGUAY_SHAPED_NOMINAL).expect("bundled nominal profile parses");
    let mut x = table.to_inputs(grid).expect("bundled nominal profile matches the grid").remove(0);
    x.timestamp = None;
    x
}

pub(crate) fn bus(id: usize, v_min: f64, v_max: f64) -> Bus {
    Bus { id, name: format!("bus{id}"), vn_kv: 150.0, v_min_pu: v_min, v_max_pu: v_max }
}

pub(crate) fn line(from: usize, to: usize, z: Complex64, b_half: f64) -> Line {
    Line {
        from_bus: from,
        to_bus: to,
        y_series: z.inv(),
        y_shunt_from: Complex64::new(0.0, b_half),
        y_shunt_to: Complex64::new(0.0, b_half),
        tap_ratio: 1.0,
        s_max_pu: 10.0,
        angle_diff_min_rad: -std::f64::consts::FRAC_PI_3,
        angle_diff_max_rad: std::f64::consts::FRAC_PI_3,
    }
}

fn slack(bus: usize) -> VoltGenerator {
    VoltGenerator { bus, q_min_pu: -5.0, q_max_pu: 5.0, is_slack: true, v_set_pu: None }
}

/// Two buses joined by a lossless line `y = 1/(j0.1)`, slack on bus 0 and a
/// load on bus 1.
pub fn two_bus() -> Grid {
    Grid {
        base_mva: 100.0,
        buses: vec![bus(0, 0.9, 1.1), bus(1, 0.9, 1.1)],
        lines: vec![line(0, 1, Complex64::new(0.0, 0.1), 0.0)],
        volt_gens: vec![slack(0)],
        stat_gens: vec![],
        loads: vec![Load { bus: 1 }],
        compensators: vec![],
    }
}

/// Slack plus a load bus hosting a compensator: one control dimension.
pub fn one_compensator() -> Grid {
    Grid {
        base_mva: 100.0,
        buses: vec![bus(0, 0.9, 1.1), bus(1, 0.9, 1.1)],
        lines: vec![line(0, 1, Complex64::new(0.04, 0.12), 0.02)],
        volt_gens: vec![slack(0)],
        stat_gens: vec![],
        loads: vec![Load { bus: 1 }],
        compensators: vec![Compensator { bus: 1, q_min_pu: -0.5, q_max_pu: 0.8 }],
    }
}

pub fn one_compensator_inputs() -> InputVector {
    let mut x = InputVector::zeros(2);
    x.set(1, InputColumn::LoadP, 0.8);
    x.set(1, InputColumn::LoadQ, 0.35);
    x
}

pub fn three_bus_inputs() -> InputVector {
    let mut x = InputVector::zeros(3);
    x.set(1, InputColumn::VoltGenP, 0.4);
    x.set(2, InputColumn::LoadP, 0.9);
    x.set(2, InputColumn::LoadQ, 0.4);
    x
}

/// Slack, two dispatchable generators and a compensator on a four-bus ring:
/// three control dimensions.
pub fn four_bus() -> Grid {
    Grid {
        base_mva: 100.0,
        buses: vec![bus(0, 0.92, 1.08), bus(1, 0.92, 1.08), bus(2, 0.92, 1.08), bus(3, 0.92, 1.06)],
        lines: vec![
            line(0, 1, Complex64::new(0.02, 0.08), 0.02),
            line(1, 2, Complex64::new(0.03, 0.10), 0.02),
            line(2, 3, Complex64::new(0.02, 0.09), 0.015),
            line(3, 0, Complex64::new(0.04, 0.12), 0.02),
            line(1, 3, Complex64::new(0.05, 0.15), 0.01),
        ],
        volt_gens: vec![
            slack(0),
            VoltGenerator { bus: 1, q_min_pu: -1.0, q_max_pu: 1.0, is_slack: false, v_set_pu: None },
            VoltGenerator { bus: 2, q_min_pu: -0.6, q_max_pu: 0.6, is_slack: false, v_set_pu: None },
        ],
        stat_gens: vec![],
        loads: vec![Load { bus: 2 }, Load { bus: 3 }],
        compensators: vec![Compensator { bus: 3, q_min_pu: -0.3, q_max_pu: 0.5 }],
    }
}

pub fn four_bus_inputs() -> InputVector {
    let mut x = InputVector::zeros(4);
    x.set(1, InputColumn::VoltGenP, 0.5);
    x.set(2, InputColumn::VoltGenP, 0.2);
    x.set(2, InputColumn::LoadP, 0.4);
    x.set(2, InputColumn::LoadQ, 0.1);
    x.set(3, InputColumn::LoadP, 0.9);
    x.set(3, InputColumn::LoadQ, 0.45);
    x
}

/// A random connected grid with `n` buses and a consistent, lightly loaded
/// operating point. Used for solver property checks.
pub fn random_case(seed: u64, n: usize) -> (Grid, InputVector, ControlVector) {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buses = (0..n).map(|id| bus(id, 0.85, 1.15)).collect();
    let mut lines = Vec::new();
    for b in 1..n {
        let parent = rng.random_range(0..b);
        lines.push(random_line(&mut rng, parent, b));
    }
    for _ in 0..n / 2 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            lines.push(random_line(&mut rng, a, b));
        }
    }
    let mut volt_gens = vec![slack(0)];
    let mut stat_gens = Vec::new();
    let mut loads = Vec::new();
    let mut compensators = Vec::new();
    for b in 1..n {
        match rng.random_range(0..4) {
            0 => volt_gens.push(VoltGenerator { bus: b, q_min_pu: -2.0, q_max_pu: 2.0, is_slack: false, v_set_pu: None }),
            1 => stat_gens.push(StatGenerator { bus: b }),
            _ => {}
        }
        if rng.random_bool(0.7) {
            loads.push(Load { bus: b });
        }
        if rng.random_bool(0.25) {
            compensators.push(Compensator { bus: b, q_min_pu: -0.3, q_max_pu: 0.3 });
        }
    }
    let grid = Grid { base_mva: 100.0, buses, lines, volt_gens, stat_gens, loads, compensators };

    let mut x = InputVector::zeros(n);
    let mask = InputVector::defined_mask(&grid);
    for b in 0..n {
        let m = mask[b];
        if m[0] {
            x.set(b, InputColumn::LoadP, rng.random_range(0.05..0.3));
            x.set(b, InputColumn::LoadQ, rng.random_range(-0.02..0.1));
        }
        if m[2] {
            x.set(b, InputColumn::StatGenP, rng.random_range(0.0..0.15));
            x.set(b, InputColumn::StatGenQ, rng.random_range(-0.02..0.02));
        }
        if m[4] {
            x.set(b, InputColumn::VoltGenP, rng.random_range(0.0..0.2));
        }
    }
    let mut y = ControlVector::zeros(&grid);
    for g in &grid.volt_gens {
        y.values[g.bus][0] = if g.is_slack { 1.0 } else { rng.random_range(0.97..1.05) };
    }
    for c in &grid.compensators {
        y.values[c.bus][1] = rng.random_range(c.q_min_pu..c.q_max_pu);
    }
    (grid, x, y)
}

fn random_line(rng: &mut ChaCha8Rng, from: usize, to: usize) -> Line {
    let r = rng.random_range(0.005..0.05);
    let x = rng.random_range(0.05..0.25);
    let mut l = line(from, to, Complex64::new(r, x), rng.random_range(0.0..0.03));
    l.y_shunt_from.re = rng.random_range(0.0..0.005);
    l.y_shunt_to.re = rng.random_range(0.0..0.005);
    if rng.random_bool(0.3) {
        l.tap_ratio = rng.random_range(0.92..1.08);
    }
    l
}
