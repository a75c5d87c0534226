use crate::grid::{BusId, Grid};
use crate::powerflow::ControlVector;

/// Which control entry a decision coordinate drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Setpoint(BusId),
    Compensator(BusId),
}

/// Box-constrained decision space: setpoints of dispatchable voltage
/// generators (bounded by their bus voltage limits) followed by compensator
/// injections, each group in element order.
#[derive(Debug, Clone)]
pub struct ControlSpace {
    slots: Vec<Slot>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    base: ControlVector,
}

impl ControlSpace {
    pub fn new(grid: &Grid) -> Self {
        Self::with_setpoint_margin(grid, 0.0)
    }

    /// Like [`ControlSpace::new`] with setpoint boxes pulled in by `margin`
    /// on each side (when wide enough), so that bus voltages computed from
    /// the phasors do not graze the limits by rounding.
    pub fn with_setpoint_margin(grid: &Grid, margin: f64) -> Self {
        let mut slots = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for g in grid.volt_gens.iter().filter(|g| g.fixed_setpoint().is_none()) {
            let bus = &grid.buses[g.bus];
            slots.push(Slot::Setpoint(g.bus));
            let m = if bus.v_max_pu - bus.v_min_pu > 4.0 * margin { margin } else { 0.0 };
            lo.push(bus.v_min_pu + m);
            hi.push(bus.v_max_pu - m);
        }
        for c in &grid.compensators {
            slots.push(Slot::Compensator(c.bus));
            lo.push(c.q_min_pu);
            hi.push(c.q_max_pu);
        }
        Self { slots, lo, hi, base: ControlVector::nominal(grid) }
    }

    pub fn dim(&self) -> usize {
        self.slots.len()
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.lo[i], self.hi[i])
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn project(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Full control vector with fixed setpoints filled in.
    pub fn controls(&self, u: &[f64]) -> ControlVector {
        assert_eq!(u.len(), self.dim(), "decision vector length");
        let mut y = self.base.clone();
        for (slot, &v) in self.slots.iter().zip(u) {
            match *slot {
                Slot::Setpoint(b) => y.values[b][0] = v,
                Slot::Compensator(b) => y.values[b][1] = v,
            }
        }
        y
    }

    /// Decision coordinates of a control vector.
    pub fn decision(&self, y: &ControlVector) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Setpoint(b) => y.values[b][0],
                Slot::Compensator(b) => y.values[b][1],
            })
            .collect()
    }

    /// True when `y` agrees with the fixed entries and its decision
    /// coordinates lie in the box.
    pub fn contains(&self, y: &ControlVector) -> bool {
        let u = self.decision(y);
        let inside = u.iter().enumerate().all(|(i, v)| *v >= self.lo[i] && *v <= self.hi[i]);
        inside && self.controls(&u) == *y
    }

    /// Per-bus mask of decision entries: `[setpoint, compensator]`.
    pub fn decision_mask(&self, n_buses: usize) -> Vec<[bool; 2]> {
        let mut mask = vec![[false; 2]; n_buses];
        for s in &self.slots {
            match *s {
                Slot::Setpoint(b) => mask[b][0] = true,
                Slot::Compensator(b) => mask[b][1] = true,
            }
        }
        mask
    }

    pub(crate) fn dispatched_buses(&self) -> Vec<BusId> {
        self.slots
            .iter()
            .filter_map(|s| match *s {
                Slot::Setpoint(b) => Some(b),
                Slot::Compensator(_) => None,
            })
            .collect()
    }
}
