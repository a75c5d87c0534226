use num_complex::Complex64;

use super::{BusId, Grid};

/// The four admittance coefficients of one branch, already divided by the
/// squared tap ratio on both ends. The flow formulas conjugate them.
///
/// ```text
/// s_ft = |v_f|^2 conj(shunt_from) + v_f (conj(v_f) - conj(v_t)) conj(series_from)
/// s_tf = |v_t|^2 conj(shunt_to)   + v_t (conj(v_t) - conj(v_f)) conj(series_to)
/// ```
///
/// Unlike the textbook off-nominal tap model the `1/t^2` factor is applied on
/// the to-side as well.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineAdmittance {
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub series_from: Complex64,
    pub shunt_from: Complex64,
    pub series_to: Complex64,
    pub shunt_to: Complex64,
}

impl LineAdmittance {
    /// Directed flows `(s_ft, s_tf)` for the given terminal voltages.
    pub fn flows(&self, v_from: Complex64, v_to: Complex64) -> (Complex64, Complex64) {
        let s_ft = v_from.norm_sqr() * self.shunt_from.conj()
            + v_from * (v_from.conj() - v_to.conj()) * self.series_from.conj();
        let s_tf = v_to.norm_sqr() * self.shunt_to.conj()
            + v_to * (v_to.conj() - v_from.conj()) * self.series_to.conj();
        (s_ft, s_tf)
    }
}

pub fn line_admittance_view(grid: &Grid) -> Vec<LineAdmittance> {
    grid.lines
        .iter()
        .map(|line| {
            let t2 = line.tap_ratio * line.tap_ratio;
            LineAdmittance {
                from_bus: line.from_bus,
                to_bus: line.to_bus,
                series_from: line.y_series / t2,
                shunt_from: line.y_shunt_from / t2,
                series_to: line.y_series / t2,
                shunt_to: line.y_shunt_to / t2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn single_line(y: Complex64, sh: Complex64, tap: f64) -> LineAdmittance {
        let mut grid = fixtures::two_bus();
        grid.lines[0].y_series = y;
        grid.lines[0].y_shunt_from = sh;
        grid.lines[0].y_shunt_to = sh;
        grid.lines[0].tap_ratio = tap;
        line_admittance_view(&grid)[0]
    }

    #[test]
    fn identity_tap() {
        let c = single_line(Complex64::new(0.0, -10.0), Complex64::new(0.0, 0.0), 1.0);
        assert_eq!(c.series_from, Complex64::new(0.0, -10.0));
        assert_eq!(c.series_to, Complex64::new(0.0, -10.0));
        assert_eq!(c.shunt_from, Complex64::new(0.0, 0.0));
        assert_eq!(c.shunt_to, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn tap_two_quarters_every_coefficient() {
        let sh = Complex64::new(0.01, 0.05);
        let one = single_line(Complex64::new(1.0, -10.0), sh, 1.0);
        let two = single_line(Complex64::new(1.0, -10.0), sh, 2.0);
        assert_eq!(two.series_from, one.series_from / 4.0);
        assert_eq!(two.series_to, one.series_to / 4.0);
        assert_eq!(two.shunt_from, one.shunt_from / 4.0);
        assert_eq!(two.shunt_to, one.shunt_to / 4.0);
    }

    #[test]
    fn shunt_coefficients() {
        let c = single_line(Complex64::new(0.0, -10.0), Complex64::new(0.0, 0.05), 1.0);
        assert_eq!(c.shunt_from, Complex64::new(0.0, 0.05));
        assert_eq!(c.shunt_to, Complex64::new(0.0, 0.05));
    }

    proptest! {
        // With t = 1 the two directed flow formulas are mirror images of
        // each other once the ends and shunt labels are swapped.
        #[test]
        fn unit_tap_swap_symmetry(
            g in -1.0f64..1.0, b in -20.0f64..20.0,
            gf in 0.0f64..0.1, bf in -0.1f64..0.1, gt in 0.0f64..0.1, bt in -0.1f64..0.1,
            vm_i in 0.8f64..1.2, va_i in -0.5f64..0.5, vm_j in 0.8f64..1.2, va_j in -0.5f64..0.5,
        ) {
            let y = Complex64::new(g, b);
            let ab = LineAdmittance {
                from_bus: 0, to_bus: 1,
                series_from: y, shunt_from: Complex64::new(gf, bf),
                series_to: y, shunt_to: Complex64::new(gt, bt),
            };
            let ba = LineAdmittance {
                from_bus: 1, to_bus: 0,
                series_from: y, shunt_from: Complex64::new(gt, bt),
                series_to: y, shunt_to: Complex64::new(gf, bf),
            };
            let vi = Complex64::from_polar(vm_i, va_i);
            let vj = Complex64::from_polar(vm_j, va_j);
            let (s_ij, s_ji) = ab.flows(vi, vj);
            let (r_ji, r_ij) = ba.flows(vj, vi);
            prop_assert_eq!(s_ij, r_ij);
            prop_assert_eq!(s_ji, r_ji);
        }
    }
}
