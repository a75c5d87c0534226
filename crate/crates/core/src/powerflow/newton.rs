use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{total_losses, ControlVector, InputColumn, InputVector, PfError, PfSolution};
use crate::grid::{line_admittance_view, BusElements, Grid, LineAdmittance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfOptions {
    /// Infinity-norm bound on the power mismatch, per-unit.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Extra Newton steps taken after the tolerance is met.
    pub polish_steps: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iter: 30, polish_steps: 0 }
    }
}

/// Newton-Raphson power flow prepared for one grid.
///
/// Unknowns are the angles of every non-slack bus followed by the voltage
/// magnitudes of buses without a voltage-controlling generator. The slack
/// and every generator bus hold `|v| = v_set`; generator reactive limits are
/// not enforced here.
#[derive(Debug, Clone)]
pub struct PowerFlow<'g> {
    grid: &'g Grid,
    lines: Vec<LineAdmittance>,
    ybus: DMatrix<Complex64>,
    elements: BusElements,
    slack: usize,
    /// Non-slack buses, ascending.
    pvpq: Vec<usize>,
    /// Buses without a voltage-controlling generator, ascending.
    pq: Vec<usize>,
}

/// Full polar voltage state.
#[derive(Debug, Clone)]
struct State {
    vm: Vec<f64>,
    va: Vec<f64>,
}

impl State {
    fn phasors(&self) -> Vec<Complex64> {
        self.vm.iter().zip(&self.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    }
}

impl<'g> PowerFlow<'g> {
    pub fn new(grid: &'g Grid) -> Self {
        let n = grid.n_buses();
        let lines = line_admittance_view(grid);
        let mut ybus = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for l in &lines {
            let (f, t) = (l.from_bus, l.to_bus);
            ybus[(f, f)] += l.shunt_from + l.series_from;
            ybus[(f, t)] -= l.series_from;
            ybus[(t, t)] += l.shunt_to + l.series_to;
            ybus[(t, f)] -= l.series_to;
        }
        let elements = grid.bus_elements();
        let slack = grid.slack_bus();
        let pvpq = (0..n).filter(|&b| b != slack).collect();
        let pq = (0..n).filter(|&b| elements.volt_gen[b].is_none()).collect();
        Self { grid, lines, ybus, elements, slack, pvpq, pq }
    }

    pub fn grid(&self) -> &'g Grid {
        self.grid
    }

    /// Length of the Newton unknown vector.
    pub fn n_unknowns(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    /// Scheduled net injections; the reactive part at generator buses and the
    /// active part at the slack are placeholders (not part of the mismatch).
    fn scheduled(&self, x: &InputVector, y: &ControlVector) -> Vec<Complex64> {
        (0..self.grid.n_buses())
            .map(|b| {
                let r = &x.rows[b];
                let mut p = r[InputColumn::StatGenP.index()] - r[InputColumn::LoadP.index()];
                if b != self.slack {
                    p += r[InputColumn::VoltGenP.index()];
                }
                let mut q = r[InputColumn::StatGenQ.index()] - r[InputColumn::LoadQ.index()];
                if self.elements.compensator[b].is_some() {
                    q += y.q_comp(b);
                }
                Complex64::new(p, q)
            })
            .collect()
    }

    fn initial_state(&self, y: &ControlVector, warm: Option<&[Complex64]>) -> State {
        let n = self.grid.n_buses();
        let (mut vm, mut va) = match warm {
            Some(v) if v.len() == n => (v.iter().map(|z| z.norm()).collect(), v.iter().map(|z| z.arg()).collect()),
            _ => (vec![1.0; n], vec![0.0; n]),
        };
        for b in 0..n {
            if self.elements.volt_gen[b].is_some() {
                vm[b] = y.v_set(b);
            }
        }
        va[self.slack] = 0.0;
        State { vm, va }
    }

    fn state_from_unknowns(&self, y: &ControlVector, unknowns: &[f64]) -> State {
        let mut state = self.initial_state(y, None);
        let npvpq = self.pvpq.len();
        for (k, &b) in self.pvpq.iter().enumerate() {
            state.va[b] = unknowns[k];
        }
        for (k, &b) in self.pq.iter().enumerate() {
            state.vm[b] = unknowns[npvpq + k];
        }
        state
    }

    fn unknowns_of(&self, state: &State) -> Vec<f64> {
        self.pvpq.iter().map(|&b| state.va[b]).chain(self.pq.iter().map(|&b| state.vm[b])).collect()
    }

    /// Unknown vector at the flat start for controls `y`.
    pub fn flat_start(&self, y: &ControlVector) -> Vec<f64> {
        self.unknowns_of(&self.initial_state(y, None))
    }

    fn injections(&self, v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = v.len();
        let mut current = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            let vk = v[k];
            for i in 0..n {
                current[i] += self.ybus[(i, k)] * vk;
            }
        }
        let s = v.iter().zip(&current).map(|(vi, ii)| vi * ii.conj()).collect();
        (s, current)
    }

    fn mismatch_of(&self, s_calc: &[Complex64], s_sched: &[Complex64]) -> Vec<f64> {
        self.pvpq
            .iter()
            .map(|&b| s_calc[b].re - s_sched[b].re)
            .chain(self.pq.iter().map(|&b| s_calc[b].im - s_sched[b].im))
            .collect()
    }

    /// Power mismatch `[ΔP at non-slack buses, ΔQ at load buses]` for the
    /// given unknowns.
    pub fn mismatch_at(&self, x: &InputVector, y: &ControlVector, unknowns: &[f64]) -> Vec<f64> {
        let v = self.state_from_unknowns(y, unknowns).phasors();
        let (s_calc, _) = self.injections(&v);
        self.mismatch_of(&s_calc, &self.scheduled(x, y))
    }

    /// Analytic Jacobian of [`Self::mismatch_at`].
    pub fn jacobian_at(&self, y: &ControlVector, unknowns: &[f64]) -> DMatrix<f64> {
        let v = self.state_from_unknowns(y, unknowns).phasors();
        let (_, current) = self.injections(&v);
        self.jacobian(&v, &current)
    }

    fn jacobian(&self, v: &[Complex64], current: &[Complex64]) -> DMatrix<f64> {
        let npvpq = self.pvpq.len();
        let npq = self.pq.len();
        let dim = npvpq + npq;
        let mut jac = DMatrix::zeros(dim, dim);
        let j = Complex64::new(0.0, 1.0);
        // dS_i/dθ_k = j v_i conj(δ_ik I_i - Y_ik v_k)
        // dS_i/d|v_k| = v_i conj(Y_ik v_k / |v_k|) + δ_ik conj(I_i) v_i / |v_i|
        let d_angle = |i: usize, k: usize| {
            let mut inner = -self.ybus[(i, k)] * v[k];
            if i == k {
                inner += current[i];
            }
            j * v[i] * inner.conj()
        };
        let d_mag = |i: usize, k: usize| {
            let unit_k = v[k] / v[k].norm();
            let mut out = v[i] * (self.ybus[(i, k)] * unit_k).conj();
            if i == k {
                out += current[i].conj() * unit_k;
            }
            out
        };
        for (r, &i) in self.pvpq.iter().enumerate() {
            for (c, &k) in self.pvpq.iter().enumerate() {
                jac[(r, c)] = d_angle(i, k).re;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(r, npvpq + c)] = d_mag(i, k).re;
            }
        }
        for (r, &i) in self.pq.iter().enumerate() {
            for (c, &k) in self.pvpq.iter().enumerate() {
                jac[(npvpq + r, c)] = d_angle(i, k).im;
            }
            for (c, &k) in self.pq.iter().enumerate() {
                jac[(npvpq + r, npvpq + c)] = d_mag(i, k).im;
            }
        }
        jac
    }

    /// Solves the power flow. `warm` seeds the angles and load-bus
    /// magnitudes; generator magnitudes always start at their setpoints.
    ///
    /// Non-convergence is not an error: the last iterate is returned with
    /// `converged = false`.
    pub fn solve(
        &self,
        x: &InputVector,
        y: &ControlVector,
        options: &PfOptions,
        warm: Option<&[Complex64]>,
    ) -> Result<PfSolution, PfError> {
        x.check(self.grid)?;
        y.check(self.grid)?;
        let s_sched = self.scheduled(x, y);
        let mut state = self.initial_state(y, warm);
        let npvpq = self.pvpq.len();

        let mut iterations = 0;
        let mut polish_left = options.polish_steps;
        let mut converged = false;
        let mut residual_norm;
        loop {
            let v = state.phasors();
            let (s_calc, current) = self.injections(&v);
            let f = self.mismatch_of(&s_calc, &s_sched);
            residual_norm = f.iter().fold(0.0f64, |m, e| m.max(e.abs()));
            if !residual_norm.is_finite() {
                break;
            }
            if residual_norm <= options.tolerance {
                if polish_left == 0 {
                    converged = true;
                    break;
                }
                polish_left -= 1;
            } else if iterations >= options.max_iter {
                break;
            }
            if f.is_empty() {
                converged = true;
                break;
            }
            let jac = self.jacobian(&v, &current);
            let rhs = DVector::from_iterator(f.len(), f.iter().map(|e| -e));
            let step = jac.lu().solve(&rhs).ok_or(PfError::SingularJacobian { iteration: iterations })?;
            for (k, &b) in self.pvpq.iter().enumerate() {
                state.va[b] += step[k];
            }
            for (k, &b) in self.pq.iter().enumerate() {
                state.vm[b] += step[npvpq + k];
            }
            iterations += 1;
        }

        Ok(self.finish(x, y, &state, converged, iterations, residual_norm))
    }

    fn finish(
        &self,
        x: &InputVector,
        y: &ControlVector,
        state: &State,
        converged: bool,
        iterations: usize,
        residual_norm: f64,
    ) -> PfSolution {
        let voltages = state.phasors();
        let (s_calc, _) = self.injections(&voltages);
        let flows: Vec<_> = self.lines.iter().map(|l| l.flows(voltages[l.from_bus], voltages[l.to_bus])).collect();
        let p_loss = total_losses(&flows);
        // Generator output = net injection + what the bus consumes - what the
        // other devices on the bus inject.
        let gen_q = self
            .grid
            .volt_gens
            .iter()
            .map(|g| {
                let b = g.bus;
                let r = &x.rows[b];
                let comp = if self.elements.compensator[b].is_some() { y.q_comp(b) } else { 0.0 };
                s_calc[b].im + r[InputColumn::LoadQ.index()] - r[InputColumn::StatGenQ.index()] - comp
            })
            .collect();
        let slack_row = &x.rows[self.slack];
        let slack_p = s_calc[self.slack].re + slack_row[InputColumn::LoadP.index()]
            - slack_row[InputColumn::StatGenP.index()];
        PfSolution { voltages, flows, gen_q, slack_p, p_loss, converged, iterations, residual_norm }
    }
}

/// One-shot power flow from a flat start.
pub fn solve_pf(grid: &Grid, x: &InputVector, y: &ControlVector, options: &PfOptions) -> Result<PfSolution, PfError> {
    PowerFlow::new(grid).solve(x, y, options, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::powerflow::line_flows;

    fn two_bus_case(y_series: Complex64, p: f64, q: f64) -> (Grid, InputVector, ControlVector) {
        let mut grid = fixtures::two_bus();
        grid.lines[0].y_series = y_series;
        let mut x = InputVector::zeros(2);
        x.set(1, InputColumn::LoadP, p);
        x.set(1, InputColumn::LoadQ, q);
        let y = ControlVector::nominal(&grid);
        (grid, x, y)
    }

    /// Receiving-end voltage of a single line fed at 1∠0 with load `p + jq`
    /// through series impedance `z`:
    /// `|v|^4 + (2(pR + qX) - 1)|v|^2 + |s|^2 |z|^2 = 0`, and the phasor
    /// satisfies `|v| e^{-jδ} = |v|^2 + z conj(s)`.
    fn closed_form(z: Complex64, p: f64, q: f64) -> Complex64 {
        let s = Complex64::new(p, q);
        let b = 2.0 * (p * z.re + q * z.im) - 1.0;
        let c = s.norm_sqr() * z.norm_sqr();
        let v2 = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let delta = -(Complex64::new(v2, 0.0) + z * s.conj()).arg();
        Complex64::from_polar(v2.sqrt(), delta)
    }

    #[test]
    fn flat_no_load() {
        let (grid, x, y) = two_bus_case(Complex64::new(0.0, -10.0), 0.0, 0.0);
        let sol = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 2);
        for v in &sol.voltages {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
        assert_eq!(sol.p_loss, 0.0);
    }

    #[test]
    fn two_bus_matches_closed_form() {
        for (z, p, q) in [
            (Complex64::new(0.0, 0.1), 0.5, 0.0),
            (Complex64::new(0.02, 0.1), 0.5, 0.0),
            (Complex64::new(0.03, 0.12), 0.8, 0.3),
        ] {
            let (grid, x, y) = two_bus_case(z.inv(), p, q);
            let sol = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
            assert!(sol.converged);
            let expected = closed_form(z, p, q);
            assert!((sol.voltages[1] - expected).norm() < 1e-8, "{} vs {}", sol.voltages[1], expected);
            assert!((sol.voltages[1].norm() - expected.norm()).abs() < 1e-8);
            assert!((sol.voltages[1].arg() - expected.arg()).abs() < 1e-8);
        }
    }

    #[test]
    fn loss_matches_branch_current() {
        let z = Complex64::new(0.02, 0.1);
        let (grid, x, y) = two_bus_case(z.inv(), 0.5, 0.2);
        let sol = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
        let current = (sol.voltages[0] - sol.voltages[1]) / z;
        let expected = z.re * current.norm_sqr();
        let flows = line_flows(&grid, &sol.voltages);
        assert!((flows[0].0.re + flows[0].1.re - expected).abs() < 1e-10);
        assert!((sol.p_loss - expected).abs() < 1e-10);
    }

    #[test]
    fn converged_residual_is_within_tolerance() {
        let grid = fixtures::small14();
        let x = fixtures::small14_nominal(&grid);
        let y = ControlVector::nominal(&grid);
        let pf = PowerFlow::new(&grid);
        let sol = pf.solve(&x, &y, &PfOptions::default(), None).unwrap();
        assert!(sol.converged);
        assert!(sol.residual_norm <= 1e-8);
        // Re-evaluate the mismatch from the returned phasors.
        let unknowns: Vec<f64> = pf
            .pvpq
            .iter()
            .map(|&b| sol.voltages[b].arg())
            .chain(pf.pq.iter().map(|&b| sol.voltages[b].norm()))
            .collect();
        let f = pf.mismatch_at(&x, &y, &unknowns);
        assert!(f.iter().all(|e| e.abs() <= 1e-8));
    }

    #[test]
    fn power_balance_and_loss_consistency() {
        let grid = fixtures::small14();
        let x = fixtures::small14_nominal(&grid);
        let y = ControlVector::nominal(&grid);
        let sol = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
        let line_sum: f64 = sol.flows.iter().map(|(a, b)| a.re + b.re).sum();
        assert!((sol.p_loss - line_sum).abs() < 1e-10);
        // generation - consumption - losses
        let mut injected = sol.slack_p;
        let slack = grid.slack_bus();
        for (b, r) in x.rows.iter().enumerate() {
            injected += r[2] - r[0];
            if b != slack {
                injected += r[4];
            }
        }
        assert!((injected - sol.p_loss).abs() < 1e-8);
    }

    #[test]
    fn non_convergence_is_reported() {
        let (grid, x, y) = two_bus_case(Complex64::new(0.0, -10.0), 20.0, 0.0);
        let sol = solve_pf(&grid, &x, &y, &PfOptions::default());
        match sol {
            Ok(s) => assert!(!s.converged),
            Err(e) => assert!(matches!(e, PfError::SingularJacobian { .. })),
        }
    }

    #[test]
    fn deterministic() {
        let grid = fixtures::small14();
        let x = fixtures::small14_nominal(&grid);
        let y = ControlVector::nominal(&grid);
        let a = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
        let b = solve_pf(&grid, &x, &y, &PfOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
