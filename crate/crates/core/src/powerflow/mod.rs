//! AC power flow in polar coordinates, directed line flows, losses and the
//! operating-constraint checker.

mod constraints;
mod newton;

pub use constraints::{check_constraints, relax_lower, relax_upper, ConstraintEntry, ConstraintKind, ConstraintReport, Side};
pub use newton::{solve_pf, PfOptions, PowerFlow};

use chrono::NaiveDateTime;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{line_admittance_view, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("power flow did not converge")]
    NotConverged,
}

/// Columns of the per-bus input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputColumn {
    LoadP = 0,
    LoadQ = 1,
    StatGenP = 2,
    StatGenQ = 3,
    VoltGenP = 4,
}

impl InputColumn {
    pub const ALL: [InputColumn; 5] =
        [InputColumn::LoadP, InputColumn::LoadQ, InputColumn::StatGenP, InputColumn::StatGenQ, InputColumn::VoltGenP];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Exogenous injections, one row `[p_load, q_load, p_stat, q_stat, p_volt]`
/// per bus, per-unit. Entries for elements a bus does not host are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    pub rows: Vec<[f64; 5]>,
    #[serde(default)]
    pub timestamp: Option<NaiveDateTime>,
}

impl InputVector {
    pub fn zeros(n: usize) -> Self {
        Self { rows: vec![[0.0; 5]; n], timestamp: None }
    }

    pub fn n_buses(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, bus: usize, col: InputColumn) -> f64 {
        self.rows[bus][col.index()]
    }

    pub fn set(&mut self, bus: usize, col: InputColumn, value: f64) {
        self.rows[bus][col.index()] = value;
    }

    /// Which entries are defined by the grid's elements.
    pub fn defined_mask(grid: &Grid) -> Vec<[bool; 5]> {
        let e = grid.bus_elements();
        (0..grid.n_buses())
            .map(|b| {
                let load = e.load[b].is_some();
                let stat = e.stat_gen[b].is_some();
                [load, load, stat, stat, e.volt_gen[b].is_some()]
            })
            .collect()
    }

    /// Checks shape and that undefined entries are zero.
    pub fn check(&self, grid: &Grid) -> Result<(), PfError> {
        if self.n_buses() != grid.n_buses() {
            return Err(PfError::Dimension(format!(
                "input has {} rows, grid has {} buses",
                self.n_buses(),
                grid.n_buses()
            )));
        }
        for (b, (row, mask)) in self.rows.iter().zip(Self::defined_mask(grid)).enumerate() {
            for c in 0..5 {
                if !mask[c] && row[c] != 0.0 {
                    return Err(PfError::Dimension(format!(
                        "input entry ({b}, {c}) is nonzero but bus {b} has no such element"
                    )));
                }
                if !row[c].is_finite() {
                    return Err(PfError::Dimension(format!("input entry ({b}, {c}) is not finite")));
                }
            }
        }
        Ok(())
    }
}

/// Per-bus controls `[v_set, q_comp]` with the mask of defined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVector {
    pub values: Vec<[f64; 2]>,
    pub mask: Vec<[bool; 2]>,
}

impl ControlVector {
    /// All-zero controls with the grid's mask: column 0 on volt-generator
    /// buses, column 1 on compensator buses.
    pub fn zeros(grid: &Grid) -> Self {
        let e = grid.bus_elements();
        let mask = (0..grid.n_buses())
            .map(|b| [e.volt_gen[b].is_some(), e.compensator[b].is_some()])
            .collect::<Vec<_>>();
        Self { values: vec![[0.0; 2]; grid.n_buses()], mask }
    }

    /// Flat operating point: setpoints at 1.0 (or their fixed value),
    /// compensators at zero clamped into their range.
    pub fn nominal(grid: &Grid) -> Self {
        let mut y = Self::zeros(grid);
        for g in &grid.volt_gens {
            y.values[g.bus][0] = g.fixed_setpoint().unwrap_or(1.0);
        }
        for c in &grid.compensators {
            y.values[c.bus][1] = 0.0f64.clamp(c.q_min_pu, c.q_max_pu);
        }
        y
    }

    pub fn n_buses(&self) -> usize {
        self.values.len()
    }

    pub fn v_set(&self, bus: usize) -> f64 {
        self.values[bus][0]
    }

    pub fn q_comp(&self, bus: usize) -> f64 {
        self.values[bus][1]
    }

    pub fn check(&self, grid: &Grid) -> Result<(), PfError> {
        if self.n_buses() != grid.n_buses() || self.mask.len() != grid.n_buses() {
            return Err(PfError::Dimension(format!(
                "controls have {} rows, grid has {} buses",
                self.n_buses(),
                grid.n_buses()
            )));
        }
        let reference = Self::zeros(grid);
        if reference.mask != self.mask {
            return Err(PfError::Dimension("control mask does not match the grid".into()));
        }
        for (b, (v, m)) in self.values.iter().zip(&self.mask).enumerate() {
            for c in 0..2 {
                if !m[c] && v[c] != 0.0 {
                    return Err(PfError::Dimension(format!("unmasked control entry ({b}, {c}) is nonzero")));
                }
                if !v[c].is_finite() {
                    return Err(PfError::Dimension(format!("control entry ({b}, {c}) is not finite")));
                }
            }
        }
        Ok(())
    }
}

/// Converged (or last) state of a power-flow solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    /// Bus voltage phasors, slack angle zero.
    pub voltages: Vec<Complex64>,
    /// `(s_ft, s_tf)` for every line.
    pub flows: Vec<(Complex64, Complex64)>,
    /// Reactive output of each voltage-controlling generator, in grid order.
    pub gen_q: Vec<f64>,
    pub slack_p: f64,
    pub p_loss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Both directed flows of every line, evaluated with the π-model formulas.
pub fn line_flows(grid: &Grid, voltages: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    line_admittance_view(grid)
        .iter()
        .map(|l| l.flows(voltages[l.from_bus], voltages[l.to_bus]))
        .collect()
}

/// Active losses: sum over lines of `Re(s_ft + s_tf)`.
pub fn total_losses(flows: &[(Complex64, Complex64)]) -> f64 {
    flows.iter().map(|(a, b)| a.re + b.re).sum()
}
