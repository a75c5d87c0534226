//! Optimal reactive power dispatch: choose generator voltage setpoints and
//! compensator injections that minimize active losses subject to the
//! operating constraints.
//!
//! The solver works in the reduced space of controls. Every trial point is
//! evaluated by a full power flow, inequality constraints enter an
//! augmented Lagrangian, box bounds are enforced by projection and the inner
//! problem is minimized by projected BFGS on central finite-difference
//! gradients.

mod brute;
mod space;

pub use brute::{brute_force_orpd, MAX_BRUTE_FORCE_DIMS};
pub use space::ControlSpace;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::powerflow::{
    check_constraints, solve_pf, ConstraintKind, ControlVector, InputVector, PfError, PfOptions, PowerFlow,
};

/// Relaxation levels at which a label's feasibility is recorded.
pub const RELAXATION_SWEEP: [f64; 3] = [0.0, 0.018, 0.05];

#[derive(Debug, Error, PartialEq)]
pub enum OrpdError {
    #[error(transparent)]
    PowerFlow(#[from] PfError),
    #[error("{dims} control dimensions exceed the brute-force limit of {max}")]
    TooManyDimensions { dims: usize, max: usize },
    #[error("no feasible point among {evaluated} evaluated grid points")]
    NoFeasiblePoint { evaluated: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrpdOptions {
    /// Projected-gradient infinity norm required for convergence.
    pub stationarity_tol: f64,
    /// Largest constraint violation accepted for convergence, per-unit.
    pub feasibility_tol: f64,
    /// Constraints are tightened by this amount during the solve so that
    /// accepted points are strictly feasible.
    pub constraint_margin: f64,
    pub fd_step: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Random restarts on top of the box midpoint.
    pub restarts: usize,
    pub seed: u64,
    /// Power flow used for trial points; tighter than the default so that
    /// finite differences are not dominated by solver noise.
    pub inner_pf: PfOptions,
}

impl Default for OrpdOptions {
    fn default() -> Self {
        Self {
            stationarity_tol: 1e-6,
            feasibility_tol: 1e-6,
            constraint_margin: 2e-6,
            fd_step: 1e-6,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_outer: 6,
            max_inner: 200,
            restarts: 0,
            seed: 0,
            inner_pf: PfOptions { tolerance: 1e-10, max_iter: 30, polish_steps: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrpdSolution {
    pub y_star: ControlVector,
    /// Losses of `y_star` under the default power flow, per-unit. NaN when
    /// that power flow does not converge.
    pub p_loss: f64,
    /// Smallest entry of [`RELAXATION_SWEEP`] at which `y_star` passes the
    /// constraint check.
    pub feasible_at: Option<f64>,
    pub converged: bool,
    /// Outer iterations summed over all starts.
    pub iterations: usize,
    pub inner_pf_count: usize,
    pub kkt_stationarity: f64,
    /// Best feasible loss after each outer iteration, once one exists.
    pub history: Vec<f64>,
}

/// One evaluated trial point.
#[derive(Debug, Clone)]
struct Trial {
    loss: f64,
    /// Tightened constraint values; feasible means every entry `<= 0`.
    g: Vec<f64>,
    voltages: Vec<Complex64>,
}

impl Trial {
    /// Largest violation of the tightened constraints.
    fn violation(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Result of one outer iteration.
#[derive(Debug, Clone)]
struct Candidate {
    u: Vec<f64>,
    loss: f64,
    /// Violation of the tightened constraints.
    violation: f64,
    stationarity: f64,
}

impl Candidate {
    /// Feasible beats infeasible, then lower loss, then lower violation.
    fn better_than(&self, other: &Candidate, ftol: f64) -> bool {
        match (self.violation <= ftol, other.violation <= ftol) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.loss < other.loss,
            (false, false) => self.violation < other.violation,
        }
    }
}

struct Problem<'a> {
    grid: &'a Grid,
    x: &'a InputVector,
    pf: PowerFlow<'a>,
    space: ControlSpace,
    options: &'a OrpdOptions,
    /// Constraint entries (by position in the report) that enter `g`.
    active_entries: Vec<usize>,
    pf_count: usize,
}

impl<'a> Problem<'a> {
    fn new(grid: &'a Grid, x: &'a InputVector, options: &'a OrpdOptions) -> Self {
        let space = ControlSpace::with_setpoint_margin(grid, options.constraint_margin);
        let pf = PowerFlow::new(grid);
        let mut problem = Self { grid, x, pf, space, options, active_entries: Vec::new(), pf_count: 0 };
        problem.active_entries = problem.select_entries();
        problem
    }

    /// Everything reported by the checker except what the box already
    /// enforces: setpoint tracking, compensator limits and voltage bounds on
    /// buses whose setpoint is a decision variable.
    fn select_entries(&self) -> Vec<usize> {
        let y = self.space.controls(&self.space.midpoint());
        let n = self.grid.n_buses();
        let sol = crate::powerflow::PfSolution {
            voltages: vec![Complex64::new(1.0, 0.0); n],
            flows: vec![Default::default(); self.grid.lines.len()],
            gen_q: vec![0.0; self.grid.volt_gens.len()],
            slack_p: 0.0,
            p_loss: 0.0,
            converged: true,
            iterations: 0,
            residual_norm: 0.0,
        };
        let report = check_constraints(self.grid, self.x, &y, &sol, 0.0).expect("converged placeholder");
        let dispatched = self.space.dispatched_buses();
        report
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| match e.kind {
                ConstraintKind::SetpointTracking | ConstraintKind::CompensatorLimit => false,
                ConstraintKind::VoltageBound => !dispatched.contains(&e.element),
                _ => true,
            })
            .map(|(k, _)| k)
            .collect()
    }

    fn evaluate(&mut self, u: &[f64], warm: Option<&[Complex64]>) -> Option<Trial> {
        let y = self.space.controls(u);
        self.pf_count += 1;
        let sol = self.pf.solve(self.x, &y, &self.options.inner_pf, warm).ok()?;
        if !sol.converged {
            return None;
        }
        let report = check_constraints(self.grid, self.x, &y, &sol, 0.0).ok()?;
        let margin = self.options.constraint_margin;
        let g = self.active_entries.iter().map(|&k| report.entries[k].violation + margin).collect();
        Some(Trial { loss: sol.p_loss, g, voltages: sol.voltages })
    }

    fn merit(trial: &Trial, lambda: &[f64], mu: f64) -> f64 {
        let penalty: f64 = trial
            .g
            .iter()
            .zip(lambda)
            .map(|(&g, &l)| {
                let t = (l + mu * g).max(0.0);
                (t * t - l * l) / (2.0 * mu)
            })
            .sum();
        trial.loss + penalty
    }

    /// Central differences of the merit around `u`, probes in coordinate
    /// order. `None` if a probe's power flow fails.
    fn gradient(&mut self, u: &[f64], center: &Trial, lambda: &[f64], mu: f64) -> Option<Vec<f64>> {
        let h = self.options.fd_step;
        let mut grad = Vec::with_capacity(u.len());
        let mut probe = u.to_vec();
        for i in 0..u.len() {
            probe[i] = u[i] + h;
            let plus = Self::merit(&self.evaluate(&probe, Some(&center.voltages))?, lambda, mu);
            probe[i] = u[i] - h;
            let minus = Self::merit(&self.evaluate(&probe, Some(&center.voltages))?, lambda, mu);
            probe[i] = u[i];
            grad.push((plus - minus) / (2.0 * h));
        }
        Some(grad)
    }

    /// `‖P(u − ∇) − u‖∞`.
    fn projected_gradient_norm(&self, u: &[f64], grad: &[f64]) -> f64 {
        let mut stepped: Vec<f64> = u.iter().zip(grad).map(|(a, g)| a - g).collect();
        self.space.project(&mut stepped);
        stepped.iter().zip(u).fold(0.0f64, |m, (s, a)| m.max((s - a).abs()))
    }

    /// Projected BFGS on the merit for fixed multipliers. Returns the final
    /// point, its trial and the projected-gradient norm there.
    fn minimize(&mut self, mut u: Vec<f64>, mut trial: Trial, lambda: &[f64], mu: f64) -> (Vec<f64>, Trial, f64) {
        let d = u.len();
        let stol = self.options.stationarity_tol;
        let Some(mut grad) = self.gradient(&u, &trial, lambda, mu) else {
            return (u, trial, f64::INFINITY);
        };
        let mut merit = Self::merit(&trial, lambda, mu);
        let initial_scale = |g: &[f64]| 0.01 / g.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
        let mut h_inv = DMatrix::<f64>::identity(d, d) * initial_scale(&grad);
        let mut fresh = true;
        let mut stationarity = self.projected_gradient_norm(&u, &grad);

        for _ in 0..self.options.max_inner {
            if stationarity <= stol {
                break;
            }
            let free: Vec<bool> = (0..d)
                .map(|i| {
                    let (lo, hi) = self.space.bounds(i);
                    !((u[i] <= lo && grad[i] > 0.0) || (u[i] >= hi && grad[i] < 0.0))
                })
                .collect();
            let mut dir = vec![0.0; d];
            for i in (0..d).filter(|&i| free[i]) {
                dir[i] = -(0..d).filter(|&j| free[j]).map(|j| h_inv[(i, j)] * grad[j]).sum::<f64>();
            }
            let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
            if slope >= 0.0 {
                if fresh {
                    break;
                }
                h_inv = DMatrix::identity(d, d) * initial_scale(&grad);
                fresh = true;
                continue;
            }

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut next: Vec<f64> = u.iter().zip(&dir).map(|(a, s)| a + t * s).collect();
                self.space.project(&mut next);
                let step: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
                if step.iter().all(|s| s.abs() < 1e-15) {
                    break;
                }
                if let Some(cand) = self.evaluate(&next, Some(&trial.voltages)) {
                    let m = Self::merit(&cand, lambda, mu);
                    let decrease: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
                    if m <= merit + 1e-4 * decrease {
                        accepted = Some((next, cand, m));
                        break;
                    }
                }
                t *= 0.5;
            }
            let Some((next, cand, m)) = accepted else {
                if fresh {
                    break;
                }
                h_inv = DMatrix::identity(d, d) * initial_scale(&grad);
                fresh = true;
                continue;
            };
            let Some(next_grad) = self.gradient(&next, &cand, lambda, mu) else {
                break;
            };

            let s = DVector::from_iterator(d, next.iter().zip(&u).map(|(a, b)| a - b));
            let yv = DVector::from_iterator(d, next_grad.iter().zip(&grad).map(|(a, b)| a - b));
            let sy = s.dot(&yv);
            if sy > 1e-16 * s.norm() * yv.norm() && sy > 0.0 {
                if fresh {
                    h_inv = DMatrix::identity(d, d) * (sy / yv.dot(&yv));
                }
                let rho = 1.0 / sy;
                let eye = DMatrix::<f64>::identity(d, d);
                let left = &eye - rho * &s * yv.transpose();
                let right = &eye - rho * &yv * s.transpose();
                h_inv = &left * &h_inv * &right + rho * &s * s.transpose();
                fresh = false;
            }

            let stalled = (merit - m).abs() <= 1e-15 * merit.abs().max(1.0);
            u = next;
            trial = cand;
            merit = m;
            grad = next_grad;
            stationarity = self.projected_gradient_norm(&u, &grad);
            if stalled && fresh {
                break;
            }
        }
        (u, trial, stationarity)
    }

    /// Augmented-Lagrangian loop from one start. Returns the best outer
    /// iterate, or `None` when the start itself has no power-flow solution.
    fn run(&mut self, start: Vec<f64>, history: &mut Vec<f64>, best_loss: &mut Option<f64>) -> Option<(Candidate, usize)> {
        let opts = self.options;
        let trial = self.evaluate(&start, None)?;
        let mut lambda = vec![0.0; trial.g.len()];
        let mut mu = opts.initial_penalty;
        let mut u = start;
        let mut trial = trial;
        let mut prev_violation = f64::INFINITY;
        let mut best: Option<Candidate> = None;
        let mut outer = 0;
        while outer < opts.max_outer {
            outer += 1;
            let (next, next_trial, stationarity) = self.minimize(u, trial, &lambda, mu);
            u = next;
            trial = next_trial;
            let violation = trial.violation();
            let cand = Candidate { u: u.clone(), loss: trial.loss, violation, stationarity };
            log::trace!("outer {outer}: loss {:.9} violation {violation:.3e} stationarity {stationarity:.3e} mu {mu}", trial.loss);
            if violation <= opts.feasibility_tol && best_loss.is_none_or(|b| trial.loss < b) {
                *best_loss = Some(trial.loss);
            }
            if let Some(b) = best_loss {
                history.push(*b);
            }
            if best.as_ref().is_none_or(|b| cand.better_than(b, opts.feasibility_tol)) {
                best = Some(cand);
            }
            if violation <= opts.feasibility_tol && stationarity <= opts.stationarity_tol {
                break;
            }
            for (l, g) in lambda.iter_mut().zip(&trial.g) {
                *l = (*l + mu * g).max(0.0);
            }
            if violation > 0.25 * prev_violation {
                mu *= opts.penalty_growth;
            }
            prev_violation = violation;
        }
        best.map(|b| (b, outer))
    }
}

/// Solves the dispatch problem for one operating condition.
pub fn solve_orpd(grid: &Grid, x: &InputVector, options: &OrpdOptions) -> Result<OrpdSolution, OrpdError> {
    x.check(grid)?;
    let mut problem = Problem::new(grid, x, options);
    let space = problem.space.clone();

    let mut starts = vec![space.midpoint()];
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.restarts {
        starts.push((0..space.dim()).map(|i| {
            let (lo, hi) = space.bounds(i);
            if hi > lo { rng.random_range(lo..=hi) } else { lo }
        }).collect());
    }

    let mut history = Vec::new();
    let mut best_loss = None;
    let mut best: Option<Candidate> = None;
    let mut iterations = 0;
    for start in starts {
        if let Some((cand, outer)) = problem.run(start, &mut history, &mut best_loss) {
            iterations += outer;
            if best.as_ref().is_none_or(|b| cand.better_than(b, options.feasibility_tol)) {
                best = Some(cand);
            }
        }
    }

    let inner_pf_count = problem.pf_count;
    let Some(best) = best else {
        return Ok(OrpdSolution {
            y_star: space.controls(&space.midpoint()),
            p_loss: f64::NAN,
            feasible_at: None,
            converged: false,
            iterations,
            inner_pf_count,
            kkt_stationarity: f64::INFINITY,
            history,
        });
    };
    let y_star = space.controls(&best.u);
    let (p_loss, feasible_at, pf_ok) = assess(grid, x, &y_star)?;
    let converged = pf_ok
        && best.violation <= options.feasibility_tol
        && best.stationarity <= options.stationarity_tol
        && feasible_at == Some(0.0);
    Ok(OrpdSolution {
        y_star,
        p_loss,
        feasible_at,
        converged,
        iterations,
        inner_pf_count,
        kkt_stationarity: best.stationarity,
        history,
    })
}

/// Loss and smallest feasible relaxation of a control under the default
/// power flow.
pub(crate) fn assess(grid: &Grid, x: &InputVector, y: &ControlVector) -> Result<(f64, Option<f64>, bool), OrpdError> {
    let sol = solve_pf(grid, x, y, &PfOptions::default())?;
    if !sol.converged {
        return Ok((f64::NAN, None, false));
    }
    let mut feasible_at = None;
    for rho in RELAXATION_SWEEP {
        if check_constraints(grid, x, y, &sol, rho)?.feasible {
            feasible_at = Some(rho);
            break;
        }
    }
    Ok((sol.p_loss, feasible_at, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn zero_dimensional_problem_is_a_power_flow() {
        let grid = fixtures::two_bus();
        let mut x = InputVector::zeros(2);
        x.set(1, crate::powerflow::InputColumn::LoadP, 0.5);
        let sol = solve_orpd(&grid, &x, &OrpdOptions::default()).unwrap();
        let pf = solve_pf(&grid, &x, &ControlVector::nominal(&grid), &PfOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.y_star, ControlVector::nominal(&grid));
        assert!((sol.p_loss - pf.p_loss).abs() < 1e-12);
        assert_eq!(sol.kkt_stationarity, 0.0);
    }

    #[test]
    fn three_bus_label_is_feasible_and_stationary() {
        let grid = fixtures::three_bus();
        let x = fixtures::three_bus_inputs();
        let sol = solve_orpd(&grid, &x, &OrpdOptions::default()).unwrap();
        assert!(sol.converged, "{sol:?}");
        assert_eq!(sol.feasible_at, Some(0.0));
        assert!(sol.kkt_stationarity <= 1e-6);
        let space = ControlSpace::new(&grid);
        assert!(space.contains(&sol.y_star));
    }

    #[test]
    fn history_is_non_increasing() {
        let grid = fixtures::four_bus();
        let x = fixtures::four_bus_inputs();
        let opts = OrpdOptions { restarts: 3, seed: 7, ..Default::default() };
        let sol = solve_orpd(&grid, &x, &opts).unwrap();
        assert!(!sol.history.is_empty());
        assert!(sol.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", sol.history);
    }

    #[test]
    fn deterministic_under_seed() {
        let grid = fixtures::four_bus();
        let x = fixtures::four_bus_inputs();
        let opts = OrpdOptions { restarts: 2, seed: 11, ..Default::default() };
        let a = solve_orpd(&grid, &x, &opts).unwrap();
        let b = solve_orpd(&grid, &x, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn unsolvable_start_is_flagged() {
        let grid = fixtures::two_bus();
        let mut x = InputVector::zeros(2);
        // Far beyond the line's transfer capability.
        x.set(1, crate::powerflow::InputColumn::LoadP, 50.0);
        let sol = solve_orpd(&grid, &x, &OrpdOptions::default()).unwrap();
        assert!(!sol.converged);
        assert!(sol.p_loss.is_nan());
    }

    #[test]
    fn small14_label_beats_flat_profile() {
        let grid = fixtures::small14();
        let x = fixtures::small14_nominal(&grid);
        let sol = solve_orpd(&grid, &x, &OrpdOptions::default()).unwrap();
        assert!(sol.converged, "{sol:?}");
        let flat = solve_pf(&grid, &x, &ControlVector::nominal(&grid), &PfOptions::default()).unwrap();
        assert!(sol.p_loss < flat.p_loss);
    }
}
