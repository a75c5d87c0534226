//! Static network description: buses, π-model branches and the elements
//! attached to each bus. Everything in here is per-unit on `base_mva`.

mod admittance;
mod schema;
mod validate;

pub use admittance::{line_admittance_view, LineAdmittance};
pub use schema::{parse_grid, parse_grid_file, GridError};
pub use validate::{validate, Issue, IssueKind, ValidationReport};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Dense bus index in `0..N`.
pub type BusId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub vn_kv: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

/// A π-model branch. `tap_ratio` is 1.0 for plain lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    #[serde(rename = "from")]
    pub from_bus: BusId,
    #[serde(rename = "to")]
    pub to_bus: BusId,
    #[serde(with = "schema::complex_gb")]
    pub y_series: Complex64,
    #[serde(with = "schema::complex_gb")]
    pub y_shunt_from: Complex64,
    #[serde(with = "schema::complex_gb")]
    pub y_shunt_to: Complex64,
    pub tap_ratio: f64,
    pub s_max_pu: f64,
    pub angle_diff_min_rad: f64,
    pub angle_diff_max_rad: f64,
}

/// Generator that regulates its bus voltage magnitude.
///
/// The slack generator's setpoint is never dispatched: it holds
/// `v_set_pu` (1.0 when absent). Any other generator with `v_set_pu` set is
/// likewise pinned and left out of the dispatch decision vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltGenerator {
    pub bus: BusId,
    pub q_min_pu: f64,
    pub q_max_pu: f64,
    #[serde(default)]
    pub is_slack: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set_pu: Option<f64>,
}

impl VoltGenerator {
    /// Setpoint held fixed by the network description, if any.
    pub fn fixed_setpoint(&self) -> Option<f64> {
        match (self.is_slack, self.v_set_pu) {
            (_, Some(v)) => Some(v),
            (true, None) => Some(1.0),
            (false, None) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatGenerator {
    pub bus: BusId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: BusId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compensator {
    pub bus: BusId,
    pub q_min_pu: f64,
    pub q_max_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub volt_gens: Vec<VoltGenerator>,
    #[serde(default)]
    pub stat_gens: Vec<StatGenerator>,
    #[serde(default)]
    pub loads: Vec<Load>,
    #[serde(default)]
    pub compensators: Vec<Compensator>,
}

/// Which element (by position in its list) sits on each bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BusElements {
    pub volt_gen: Vec<Option<usize>>,
    pub stat_gen: Vec<Option<usize>>,
    pub load: Vec<Option<usize>>,
    pub compensator: Vec<Option<usize>>,
}

impl Grid {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Bus hosting the slack generator. Panics on an unvalidated grid
    /// without one.
    pub fn slack_bus(&self) -> BusId {
        self.volt_gens
            .iter()
            .find(|g| g.is_slack)
            .map(|g| g.bus)
            .expect("grid has no slack generator")
    }

    /// Element lookup per bus. On a valid grid every slot holds at most one
    /// element; for duplicates the first one wins.
    pub fn bus_elements(&self) -> BusElements {
        let n = self.n_buses();
        let mut out = BusElements {
            volt_gen: vec![None; n],
            stat_gen: vec![None; n],
            load: vec![None; n],
            compensator: vec![None; n],
        };
        fn place(slots: &mut [Option<usize>], bus: usize, k: usize) {
            if let Some(slot) = slots.get_mut(bus) {
                slot.get_or_insert(k);
            }
        }
        for (k, g) in self.volt_gens.iter().enumerate() {
            place(&mut out.volt_gen, g.bus, k);
        }
        for (k, g) in self.stat_gens.iter().enumerate() {
            place(&mut out.stat_gen, g.bus, k);
        }
        for (k, l) in self.loads.iter().enumerate() {
            place(&mut out.load, l.bus, k);
        }
        for (k, c) in self.compensators.iter().enumerate() {
            place(&mut out.compensator, c.bus, k);
        }
        out
    }

    /// Serializes to the grid file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serialization is infallible")
    }

    pub fn per_unit(&self) -> PerUnit {
        PerUnit::new(self.base_mva)
    }
}

/// Conversion between physical power units and per-unit on a system base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnit {
    pub base_mva: f64,
}

impl PerUnit {
    pub fn new(base_mva: f64) -> Self {
        Self { base_mva }
    }

    /// MW or MVar to per-unit.
    pub fn to_pu(&self, mw: f64) -> f64 {
        mw / self.base_mva
    }

    /// Per-unit to MW or MVar.
    pub fn to_physical(&self, pu: f64) -> f64 {
        pu * self.base_mva
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn per_unit_round_trip(base in 1.0f64..10_000.0, mw in -1e5f64..1e5) {
            let pu = PerUnit::new(base);
            let back = pu.to_physical(pu.to_pu(mw));
            prop_assert!((back - mw).abs() <= 1e-12 * mw.abs().max(1e-300));
        }
    }

    #[test]
    fn slack_setpoint_defaults_to_one() {
        let g = VoltGenerator { bus: 0, q_min_pu: -1.0, q_max_pu: 1.0, is_slack: true, v_set_pu: None };
        assert_eq!(g.fixed_setpoint(), Some(1.0));
        let g = VoltGenerator { is_slack: false, ..g };
        assert_eq!(g.fixed_setpoint(), None);
    }
}
