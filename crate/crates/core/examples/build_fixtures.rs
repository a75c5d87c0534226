//! Regenerates the JSON/CSV fixtures under `fixtures/`.
//!
//! ```text
//! cargo run -p dispatch-core --example build_fixtures -- crates/core/fixtures
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use dispatch_core::batch::{input_columns, read_input, BatchTable, Preamble, PowerUnits};
use dispatch_core::grid::{validate, Bus, Compensator, Grid, Line, Load, StatGenerator, VoltGenerator};
use dispatch_core::powerflow::{InputColumn, InputVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ANGLE: f64 = std::f64::consts::FRAC_PI_3;
/// Shunt conductance at every branch end of the 14-bus case, per-unit.
const SMALL14_SHUNT_G: f64 = 0.001;

fn branch(from: usize, to: usize, r: f64, x: f64, b_total: f64, tap: f64, s_max: f64, g_sh: f64) -> Line {
    Line {
        from_bus: from,
        to_bus: to,
        y_series: Complex64::new(r, x).inv(),
        y_shunt_from: Complex64::new(g_sh, b_total / 2.0),
        y_shunt_to: Complex64::new(g_sh, b_total / 2.0),
        tap_ratio: tap,
        s_max_pu: s_max,
        angle_diff_min_rad: -ANGLE,
        angle_diff_max_rad: ANGLE,
    }
}

fn vgen(bus: usize, q_min: f64, q_max: f64) -> VoltGenerator {
    VoltGenerator { bus, q_min_pu: q_min, q_max_pu: q_max, is_slack: false, v_set_pu: None }
}

fn small14() -> (Grid, InputVector) {
    let kv = |b: usize| if b < 5 { 132.0 } else { 33.0 };
    let buses = (0..14)
        .map(|id| Bus { id, name: format!("B{}", id + 1), vn_kv: kv(id), v_min_pu: 0.94, v_max_pu: 1.10 })
        .collect();
    let g = SMALL14_SHUNT_G;
    #[rustfmt::skip]
    let lines = vec![
        branch(0, 1, 0.01938, 0.05917, 0.0528, 1.0, 3.0, g),
        branch(0, 4, 0.05403, 0.22304, 0.0492, 1.0, 2.0, g),
        branch(1, 2, 0.04699, 0.19797, 0.0438, 1.0, 2.0, g),
        branch(1, 3, 0.05811, 0.17632, 0.0340, 1.0, 2.0, g),
        branch(1, 4, 0.05695, 0.17388, 0.0346, 1.0, 2.0, g),
        branch(2, 3, 0.06701, 0.17103, 0.0128, 1.0, 2.0, g),
        branch(3, 4, 0.01335, 0.04211, 0.0, 1.0, 2.0, g),
        branch(3, 6, 0.002, 0.20912, 0.0, 0.978, 1.5, g),
        branch(3, 8, 0.002, 0.55618, 0.0, 0.969, 1.0, g),
        branch(4, 5, 0.002, 0.25202, 0.0, 0.932, 1.5, g),
        branch(5, 10, 0.09498, 0.19890, 0.0, 1.0, 1.0, g),
        branch(5, 11, 0.12291, 0.25581, 0.0, 1.0, 1.0, g),
        branch(5, 12, 0.06615, 0.13027, 0.0, 1.0, 1.0, g),
        branch(6, 7, 0.002, 0.17615, 0.0, 1.0, 1.0, g),
        branch(6, 8, 0.002, 0.11001, 0.0, 1.0, 1.5, g),
        branch(8, 9, 0.03181, 0.08450, 0.0, 1.0, 1.0, g),
        branch(8, 13, 0.12711, 0.27038, 0.0, 1.0, 1.0, g),
        branch(9, 10, 0.08205, 0.19207, 0.0, 1.0, 1.0, g),
        branch(11, 12, 0.22092, 0.19988, 0.0, 1.0, 1.0, g),
        branch(12, 13, 0.17093, 0.34802, 0.0, 1.0, 1.0, g),
    ];
    let grid = Grid {
        base_mva: 100.0,
        buses,
        lines,
        volt_gens: vec![
            VoltGenerator { bus: 0, q_min_pu: -1.0, q_max_pu: 2.5, is_slack: true, v_set_pu: Some(1.04) },
            vgen(1, -0.6, 0.8),
            vgen(2, -0.4, 0.6),
            vgen(5, -0.3, 0.4),
            vgen(7, -0.3, 0.4),
        ],
        stat_gens: vec![StatGenerator { bus: 3 }, StatGenerator { bus: 10 }, StatGenerator { bus: 12 }],
        loads: [1, 2, 3, 4, 5, 8, 9, 10, 11, 12, 13].into_iter().map(|bus| Load { bus }).collect(),
        compensators: vec![
            Compensator { bus: 8, q_min_pu: -0.2, q_max_pu: 0.35 },
            Compensator { bus: 13, q_min_pu: -0.1, q_max_pu: 0.2 },
        ],
    };

    let mut x = InputVector::zeros(14);
    let loads = [
        (1, 21.7, 12.7),
        (2, 94.2, 19.0),
        (3, 47.8, -3.9),
        (4, 7.6, 1.6),
        (5, 11.2, 7.5),
        (8, 29.5, 16.6),
        (9, 9.0, 5.8),
        (10, 3.5, 1.8),
        (11, 6.1, 1.6),
        (12, 13.5, 5.8),
        (13, 14.9, 5.0),
    ];
    for (b, p, q) in loads {
        x.set(b, InputColumn::LoadP, p);
        x.set(b, InputColumn::LoadQ, q);
    }
    for (b, p, q) in [(3, 30.0, 0.0), (10, 12.0, 1.0), (12, 20.0, 2.0)] {
        x.set(b, InputColumn::StatGenP, p);
        x.set(b, InputColumn::StatGenQ, q);
    }
    for (b, p) in [(1, 40.0), (2, 25.0), (5, 15.0), (7, 0.0)] {
        x.set(b, InputColumn::VoltGenP, p);
    }
    (grid, x)
}

fn three_bus() -> Grid {
    let bus = |id: usize, v_max: f64| Bus { id, name: format!("N{id}"), vn_kv: 150.0, v_min_pu: 0.92, v_max_pu: v_max };
    Grid {
        base_mva: 100.0,
        buses: vec![bus(0, 1.08), bus(1, 1.08), bus(2, 1.05)],
        lines: vec![
            branch(0, 1, 0.02, 0.08, 0.04, 1.0, 3.0, 0.0),
            branch(1, 2, 0.03, 0.10, 0.03, 1.0, 3.0, 0.0),
            branch(0, 2, 0.04, 0.14, 0.03, 1.0, 3.0, 0.0),
        ],
        volt_gens: vec![
            VoltGenerator { bus: 0, q_min_pu: -3.0, q_max_pu: 3.0, is_slack: true, v_set_pu: Some(1.0) },
            vgen(1, -1.0, 1.0),
        ],
        stat_gens: vec![],
        loads: vec![Load { bus: 2 }],
        compensators: vec![Compensator { bus: 2, q_min_pu: -0.2, q_max_pu: 0.6 }],
    }
}

/// Uruguay-shaped transmission network: a 500 kV backbone ring with chords,
/// one 500/150 kV transformer per backbone bus, and a meshed 150 kV grid.
fn uruguay_shaped() -> (Grid, InputVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    let n_500 = 12;
    let n_150 = 95;
    let n = n_500 + n_150;
    let mut buses = Vec::with_capacity(n);
    for id in 0..n_500 {
        buses.push(Bus { id, name: format!("S{id:02}_500"), vn_kv: 500.0, v_min_pu: 0.95, v_max_pu: 1.05 });
    }
    for id in n_500..n {
        let name = if id < 2 * n_500 { format!("S{:02}_150", id - n_500) } else { format!("B{id:03}") };
        buses.push(Bus { id, name, vn_kv: 150.0, v_min_pu: 0.93, v_max_pu: 1.07 });
    }

    let mut lines = Vec::new();
    let hv = |rng: &mut ChaCha8Rng, a: usize, b: usize| {
        let r = rng.random_range(0.0004..0.0012);
        branch(a, b, r, r * 12.0, rng.random_range(0.1..0.3), 1.0, 15.0, 0.0)
    };
    for k in 0..n_500 {
        lines.push(hv(&mut rng, k, (k + 1) % n_500));
    }
    lines.push(hv(&mut rng, 0, 6));
    lines.push(hv(&mut rng, 3, 9));
    for k in 0..n_500 {
        lines.push(branch(k, n_500 + k, 0.0005, 0.02, 0.0, 1.0, 8.0, 0.0005));
    }
    let mut pairs = std::collections::BTreeSet::new();
    let mv = |rng: &mut ChaCha8Rng, a: usize, b: usize| {
        let r = rng.random_range(0.003..0.012);
        branch(a, b, r, r * rng.random_range(3.5..5.0), rng.random_range(0.005..0.03), 1.0, 3.0, 0.0)
    };
    // Spanning tree over the 150 kV buses: the 12 transformer buses first,
    // chained, then every other bus attached near an existing one.
    for id in (n_500 + 1)..n {
        let lo = if id < 2 * n_500 { id - 1 } else { n_500.max(id.saturating_sub(12)) };
        let parent = if id < 2 * n_500 { id - 1 } else { rng.random_range(lo..id) };
        pairs.insert((parent.min(id), parent.max(id)));
        lines.push(mv(&mut rng, parent, id));
    }
    while lines.len() < 156 {
        let a = rng.random_range(n_500..n);
        let b = rng.random_range(n_500..n);
        let key = (a.min(b), a.max(b));
        if a != b && (a as i64 - b as i64).abs() < 20 && pairs.insert(key) {
            lines.push(mv(&mut rng, a, b));
        }
    }

    let mut order: Vec<usize> = (n_500..n).collect();
    order.shuffle(&mut rng);
    let gen_buses = &order[..42];
    let mut volt_gens: Vec<VoltGenerator> = gen_buses[..15].iter().map(|&b| vgen(b, -1.5, 2.0)).collect();
    volt_gens[0].is_slack = true;
    volt_gens[0].v_set_pu = Some(1.02);
    volt_gens[0].q_min_pu = -5.0;
    volt_gens[0].q_max_pu = 8.0;
    let stat_gens = gen_buses[15..].iter().map(|&bus| StatGenerator { bus }).collect();
    let mut load_order: Vec<usize> = (n_500..n).collect();
    load_order.shuffle(&mut rng);
    let loads: Vec<Load> = load_order[..55].iter().map(|&bus| Load { bus }).collect();
    let mut comp_order: Vec<usize> = (n_500..n).collect();
    comp_order.shuffle(&mut rng);
    let compensators = comp_order[..6].iter().map(|&bus| Compensator { bus, q_min_pu: -0.5, q_max_pu: 0.5 }).collect();

    let grid = Grid { base_mva: 100.0, buses, lines, volt_gens, stat_gens, loads, compensators };

    let mut x = InputVector::zeros(n);
    for l in &grid.loads {
        let p = rng.random_range(10.0..50.0f64).round();
        x.set(l.bus, InputColumn::LoadP, p);
        x.set(l.bus, InputColumn::LoadQ, (0.3 * p).round());
    }
    for g in &grid.stat_gens {
        x.set(g.bus, InputColumn::StatGenP, rng.random_range(5.0..30.0f64).round());
    }
    for g in grid.volt_gens.iter().filter(|g| !g.is_slack) {
        x.set(g.bus, InputColumn::VoltGenP, rng.random_range(40.0..80.0f64).round());
    }
    (grid, x)
}

fn nominal_table(grid: &Grid, x_mw: &InputVector) -> BatchTable {
    let keys = input_columns(grid);
    let ts = NaiveDateTime::parse_from_str("2021-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
    BatchTable {
        preamble: Preamble::units(PowerUnits::Physical, grid.base_mva),
        columns: keys.iter().map(ToString::to_string).collect(),
        timestamps: vec![ts],
        rows: vec![keys.iter().map(|&k| Some(read_input(x_mw, k))).collect()],
    }
}

fn write_grid(dir: &Path, name: &str, grid: &Grid) {
    let report = validate(grid);
    assert!(report.is_empty(), "{name}: {report}");
    std::fs::write(dir.join(name), grid.to_json() + "\n").unwrap();
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/fixtures".into()));
    let (grid, x) = small14();
    write_grid(&dir, "small14.json", &grid);
    nominal_table(&grid, &x).write(dir.join("small14_nominal.csv")).unwrap();
    write_grid(&dir, "three_bus.json", &three_bus());
    let (grid, x) = uruguay_shaped();
    write_grid(&dir, "uruguay_shaped.json", &grid);
    nominal_table(&grid, &x).write(dir.join("uruguay_shaped_nominal.csv")).unwrap();
    eprintln!("fixtures written to {}", dir.display());
}
