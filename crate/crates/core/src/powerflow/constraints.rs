use serde::{Deserialize, Serialize};

use super::{ControlVector, InputVector, PfError, PfSolution};
use crate::grid::Grid;

/// Setpoint tracking is an equality; it holds to this absolute tolerance.
const TRACKING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    VoltageBound,
    AngleDifference,
    SetpointTracking,
    FlowLimit,
    VoltGenReactive,
    CompensatorLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
    /// `|v| = v_set`.
    Tracking,
    /// `|s_ft| <= s_max`.
    FromEnd,
    /// `|s_tf| <= s_max`.
    ToEnd,
}

/// One constraint instance. `violation > 0` means the (relaxed) bound is
/// broken by that amount; non-positive values are slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub kind: ConstraintKind,
    /// Bus id for voltage and tracking entries, line index for angle and
    /// flow entries, generator/compensator list index otherwise.
    pub element: usize,
    pub side: Side,
    pub value: f64,
    pub bound: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub entries: Vec<ConstraintEntry>,
    pub feasible: bool,
    pub relaxation: f64,
}

impl ConstraintReport {
    pub fn violations(&self) -> impl Iterator<Item = &ConstraintEntry> {
        self.entries.iter().filter(|e| e.violation > 0.0)
    }

    pub fn max_violation(&self) -> f64 {
        self.entries.iter().fold(f64::NEG_INFINITY, |m, e| m.max(e.violation))
    }
}

/// Upper bound widened by a fraction `rho`, sign-aware.
pub fn relax_upper(bound: f64, rho: f64) -> f64 {
    if bound >= 0.0 {
        bound * (1.0 + rho)
    } else {
        bound * (1.0 - rho)
    }
}

/// Lower bound widened by a fraction `rho`, sign-aware.
pub fn relax_lower(bound: f64, rho: f64) -> f64 {
    if bound >= 0.0 {
        bound * (1.0 - rho)
    } else {
        bound * (1.0 + rho)
    }
}

/// Evaluates every operating constraint of a converged power-flow solution
/// with all limits widened by `relaxation`. Angle bounds are widened
/// additively by `relaxation` times their width.
pub fn check_constraints(
    grid: &Grid,
    _x: &InputVector,
    y: &ControlVector,
    sol: &PfSolution,
    relaxation: f64,
) -> Result<ConstraintReport, PfError> {
    if !sol.converged {
        return Err(PfError::NotConverged);
    }
    let rho = relaxation;
    let mut entries = Vec::with_capacity(2 * grid.n_buses() + 4 * grid.lines.len());
    let mut two_sided = |kind, element, value: f64, lo: f64, hi: f64| {
        let lo = relax_lower(lo, rho);
        let hi = relax_upper(hi, rho);
        entries.push(ConstraintEntry { kind, element, side: Side::Lower, value, bound: lo, violation: lo - value });
        entries.push(ConstraintEntry { kind, element, side: Side::Upper, value, bound: hi, violation: value - hi });
    };

    for bus in &grid.buses {
        let vm = sol.voltages[bus.id].norm();
        two_sided(ConstraintKind::VoltageBound, bus.id, vm, bus.v_min_pu, bus.v_max_pu);
    }
    for (k, g) in grid.volt_gens.iter().enumerate() {
        two_sided(ConstraintKind::VoltGenReactive, k, sol.gen_q[k], g.q_min_pu, g.q_max_pu);
    }
    for (k, c) in grid.compensators.iter().enumerate() {
        two_sided(ConstraintKind::CompensatorLimit, k, y.q_comp(c.bus), c.q_min_pu, c.q_max_pu);
    }

    for (k, line) in grid.lines.iter().enumerate() {
        let v_f = sol.voltages[line.from_bus];
        let v_t = sol.voltages[line.to_bus];
        let angle = (v_f * v_t.conj()).arg();
        let width = line.angle_diff_max_rad - line.angle_diff_min_rad;
        let lo = line.angle_diff_min_rad - rho * width;
        let hi = line.angle_diff_max_rad + rho * width;
        let kind = ConstraintKind::AngleDifference;
        entries.push(ConstraintEntry { kind, element: k, side: Side::Lower, value: angle, bound: lo, violation: lo - angle });
        entries.push(ConstraintEntry { kind, element: k, side: Side::Upper, value: angle, bound: hi, violation: angle - hi });

        let s_max = relax_upper(line.s_max_pu, rho);
        let (s_ft, s_tf) = sol.flows[k];
        for (side, s) in [(Side::FromEnd, s_ft), (Side::ToEnd, s_tf)] {
            let mag = s.norm();
            entries.push(ConstraintEntry {
                kind: ConstraintKind::FlowLimit,
                element: k,
                side,
                value: mag,
                bound: s_max,
                violation: mag - s_max,
            });
        }
    }

    for g in &grid.volt_gens {
        let vm = sol.voltages[g.bus].norm();
        let v_set = y.v_set(g.bus);
        entries.push(ConstraintEntry {
            kind: ConstraintKind::SetpointTracking,
            element: g.bus,
            side: Side::Tracking,
            value: vm,
            bound: v_set,
            violation: (vm - v_set).abs() - TRACKING_TOL,
        });
    }

    let feasible = entries.iter().all(|e| e.violation <= 0.0);
    Ok(ConstraintReport { entries, feasible, relaxation: rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::powerflow::{solve_pf, PfOptions};
    use proptest::prelude::*;

    fn nominal_solution() -> (Grid, InputVector, ControlVector, PfSolution) {
        let grid = fixtures::small14();
        let x = fixtures::small14_nominal(&grid);
        let y = ControlVector::nominal(&grid);
        let sol = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
        (grid, x, y, sol)
    }

    #[test]
    fn interior_point_feasible_for_any_rho() {
        let (grid, x, y, sol) = nominal_solution();
        for rho in [0.0, 0.018, 0.05, 0.5] {
            let report = check_constraints(&grid, &x, &y, &sol, rho).unwrap();
            assert!(report.feasible, "rho {rho}: {:?}", report.violations().collect::<Vec<_>>());
            assert_eq!(report.violations().count(), 0);
        }
    }

    #[test]
    fn bounds_are_closed() {
        let (mut grid, x, y, sol) = nominal_solution();
        let b = 4;
        let vm = sol.voltages[b].norm();
        grid.buses[b].v_max_pu = vm;
        assert!(check_constraints(&grid, &x, &y, &sol, 0.0).unwrap().feasible);
        grid.buses[b].v_max_pu = vm - 1e-6;
        let report = check_constraints(&grid, &x, &y, &sol, 0.0).unwrap();
        assert!(!report.feasible);
        let v: Vec<_> = report.violations().collect();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].kind, v[0].element, v[0].side), (ConstraintKind::VoltageBound, b, Side::Upper));
    }

    #[test]
    fn rejects_unconverged() {
        let (grid, x, y, mut sol) = nominal_solution();
        sol.converged = false;
        assert_eq!(check_constraints(&grid, &x, &y, &sol, 0.0).unwrap_err(), PfError::NotConverged);
    }

    #[test]
    fn relaxation_flips_small_violation() {
        let (mut grid, x, y, sol) = nominal_solution();
        let k = 0;
        let s = sol.flows[k].0.norm().max(sol.flows[k].1.norm());
        grid.lines[k].s_max_pu = s / 1.01;
        assert!(!check_constraints(&grid, &x, &y, &sol, 0.0).unwrap().feasible);
        assert!(check_constraints(&grid, &x, &y, &sol, 0.018).unwrap().feasible);
    }

    #[test]
    fn sign_aware_relaxation() {
        assert_eq!(relax_upper(1.0, 0.1), 1.1);
        assert_eq!(relax_upper(-1.0, 0.1), -0.9);
        assert_eq!(relax_lower(1.0, 0.1), 0.9);
        assert_eq!(relax_lower(-1.0, 0.1), -1.1);
    }

    proptest! {
        #[test]
        fn feasibility_is_monotone_in_rho(scale in 0.90f64..1.02, r1 in 0.0f64..0.1, dr in 0.0f64..0.1) {
            let (mut grid, x, y, sol) = nominal_solution();
            // Tighten limits around the operating point so the outcome varies.
            for (k, line) in grid.lines.iter_mut().enumerate() {
                let s = sol.flows[k].0.norm().max(sol.flows[k].1.norm());
                line.s_max_pu = (s * scale).max(1e-6);
            }
            let a = check_constraints(&grid, &x, &y, &sol, r1).unwrap();
            let b = check_constraints(&grid, &x, &y, &sol, r1 + dr).unwrap();
            prop_assert!(!a.feasible || b.feasible);
            for (ea, eb) in a.entries.iter().zip(&b.entries) {
                prop_assert!(eb.violation <= ea.violation + 1e-15);
            }
        }
    }
}
