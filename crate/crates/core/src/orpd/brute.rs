use super::{assess, ControlSpace, OrpdError, OrpdSolution};
use crate::grid::Grid;
use crate::powerflow::{check_constraints, InputVector, PfOptions, PowerFlow};

pub const MAX_BRUTE_FORCE_DIMS: usize = 4;

/// Exhaustive scan of the control box with `resolution` evenly spaced
/// points per dimension, endpoints included. Returns the feasible point of
/// least loss.
pub fn brute_force_orpd(grid: &Grid, x: &InputVector, resolution: usize) -> Result<OrpdSolution, OrpdError> {
    x.check(grid)?;
    let space = ControlSpace::new(grid);
    let d = space.dim();
    if d > MAX_BRUTE_FORCE_DIMS {
        return Err(OrpdError::TooManyDimensions { dims: d, max: MAX_BRUTE_FORCE_DIMS });
    }
    let resolution = resolution.max(1);
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let (lo, hi) = space.bounds(i);
            if resolution == 1 {
                return vec![0.5 * (lo + hi)];
            }
            (0..resolution).map(|k| lo + (hi - lo) * k as f64 / (resolution - 1) as f64).collect()
        })
        .collect();

    let pf = PowerFlow::new(grid);
    let options = PfOptions::default();
    let total = resolution.pow(d as u32);
    let mut index = vec![0usize; d];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..total {
        let u: Vec<f64> = index.iter().enumerate().map(|(i, &k)| axes[i][k]).collect();
        let y = space.controls(&u);
        let sol = pf.solve(x, &y, &options, None)?;
        if sol.converged
            && check_constraints(grid, x, &y, &sol, 0.0)?.feasible
            && best.as_ref().is_none_or(|(l, _)| sol.p_loss < *l)
        {
            best = Some((sol.p_loss, u));
        }
        for i in (0..d).rev() {
            index[i] += 1;
            if index[i] < resolution {
                break;
            }
            index[i] = 0;
        }
    }

    let Some((_, u)) = best else {
        return Err(OrpdError::NoFeasiblePoint { evaluated: total });
    };
    let y_star = space.controls(&u);
    let (p_loss, feasible_at, _) = assess(grid, x, &y_star)?;
    Ok(OrpdSolution {
        y_star,
        p_loss,
        feasible_at,
        converged: true,
        iterations: 0,
        inner_pf_count: total,
        kkt_stationarity: f64::NAN,
        history: vec![p_loss],
    })
}
