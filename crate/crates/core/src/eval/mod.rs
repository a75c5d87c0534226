//! Scoring of dispatch predictors: power flow under the predicted controls,
//! loss gap to the oracle, feasibility over a relaxation sweep and
//! prediction errors, plus the comparison table and plot data built on them.

mod plots;
mod report;

pub use plots::{emit_comparison_plots, render_svg, PlotSeries};
pub use report::{report_table, ReportEntry, ReportRow, ReportTable};

use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{control_columns, format_timestamp, read_control, Slot};
use crate::datagen::{LabeledDataset, LabeledRow, SplitTag};
use crate::grid::Grid;
use crate::nn::{NnError, TrainedModel};
use crate::orpd::{ControlSpace, RELAXATION_SWEEP};
use crate::powerflow::{check_constraints, solve_pf, ControlVector, PfOptions};

/// Headline relaxation for the relaxed feasibility column.
pub const HEADLINE_RELAXATION: f64 = 0.018;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the test split is empty")]
    EmptyTestSplit,
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("predictor returned {got} predictions for {expected} rows")]
    PredictionCount { expected: usize, got: usize },
    #[error("prediction for {timestamp}: {message}")]
    BadPrediction { timestamp: String, message: String },
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
    #[error("invalid relaxation sweep: {0}")]
    Sweep(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| EvalError::Io { path: path.display().to_string(), source }
    }
}

/// Anything that maps labeled rows to controls.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, rows: &[&LabeledRow]) -> Result<Vec<ControlVector>, EvalError>;
}

/// Replays the oracle labels.
pub struct OracleReplay;

impl Predictor for OracleReplay {
    fn name(&self) -> &str {
        "Optimal"
    }

    fn predict(&self, rows: &[&LabeledRow]) -> Result<Vec<ControlVector>, EvalError> {
        rows.iter()
            .map(|r| {
                r.y_star.clone().ok_or_else(|| EvalError::BadPrediction {
                    timestamp: format_timestamp(&r.timestamp),
                    message: "row has no label".into(),
                })
            })
            .collect()
    }
}

/// Predicts the same controls for every row: decision entries set to a
/// constant, fixed setpoints from the grid.
pub struct ConstantPredictor {
    pub name: String,
    pub controls: ControlVector,
}

impl ConstantPredictor {
    pub fn zero(grid: &Grid) -> Self {
        let space = ControlSpace::new(grid);
        Self { name: "Zero".into(), controls: space.controls(&vec![0.0; space.dim()]) }
    }
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, rows: &[&LabeledRow]) -> Result<Vec<ControlVector>, EvalError> {
        Ok(vec![self.controls.clone(); rows.len()])
    }
}

/// A trained network under a display name.
pub struct ModelPredictor {
    pub name: String,
    pub model: TrainedModel,
}

impl Predictor for ModelPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, rows: &[&LabeledRow]) -> Result<Vec<ControlVector>, EvalError> {
        let xs: Vec<_> = rows.iter().map(|r| &r.x).collect();
        Ok(self.model.predict(&xs)?)
    }
}

/// Per-instance outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDetail {
    pub timestamp: NaiveDateTime,
    pub pf_converged: bool,
    pub p_loss: Option<f64>,
    pub p_loss_star: f64,
    /// Percent relative to the oracle; absent when the power flow failed.
    pub loss_gap_pct: Option<f64>,
    /// Feasibility at each relaxation of the sweep.
    pub feasible: Vec<bool>,
    /// Decision entries in [`Metrics::outputs`] order, per-unit.
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub base_mva: f64,
    /// Decision output names, e.g. `vgen_1_vset`, `comp_8_q`.
    pub outputs: Vec<String>,
    /// Whether each output is a voltage setpoint.
    pub output_is_voltage: Vec<bool>,
    pub mae_v: f64,
    pub mae_q_pu: f64,
    pub mae_q: f64,
    /// Over instances with a converged power flow; absent when there are none.
    pub loss_gap_mean: Option<f64>,
    pub loss_gap_std: Option<f64>,
    pub feas_pct: f64,
    pub feas_relaxed_pct: f64,
    pub relaxation: f64,
    pub sweep: Vec<f64>,
    pub feas_sweep_pct: Vec<f64>,
    pub n_instances: usize,
    pub pf_failures: usize,
    pub detail: Vec<InstanceDetail>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

impl Metrics {
    /// Summary fields computed from a detail table, in row order.
    pub fn aggregate(
        model: &str,
        base_mva: f64,
        outputs: Vec<String>,
        output_is_voltage: Vec<bool>,
        sweep: Vec<f64>,
        relaxation: f64,
        detail: Vec<InstanceDetail>,
    ) -> Self {
        let (mut err_v, mut n_v, mut err_q, mut n_q) = (0.0, 0usize, 0.0, 0usize);
        for d in &detail {
            for ((t, p), &is_v) in d.truth.iter().zip(&d.prediction).zip(&output_is_voltage) {
                if is_v {
                    err_v += (t - p).abs();
                    n_v += 1;
                } else {
                    err_q += (t - p).abs();
                    n_q += 1;
                }
            }
        }
        let mae_v = if n_v > 0 { err_v / n_v as f64 } else { 0.0 };
        let mae_q_pu = if n_q > 0 { err_q / n_q as f64 } else { 0.0 };
        let gaps: Vec<f64> = detail.iter().filter_map(|d| d.loss_gap_pct).collect();
        let (loss_gap_mean, loss_gap_std) = mean_std(&gaps);
        let n = detail.len();
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * detail.iter().filter(|d| d.feasible[k]).count() as f64 / n as f64 };
        let feas_sweep_pct: Vec<f64> = (0..sweep.len()).map(pct).collect();
        let at = |rho: f64| sweep.iter().position(|&r| r == rho).map(|k| feas_sweep_pct[k]).unwrap_or(f64::NAN);
        Self {
            model: model.to_string(),
            base_mva,
            outputs,
            output_is_voltage,
            mae_v,
            mae_q_pu,
            mae_q: mae_q_pu * base_mva,
            loss_gap_mean,
            loss_gap_std,
            feas_pct: at(0.0),
            feas_relaxed_pct: at(relaxation),
            relaxation,
            feas_sweep_pct,
            sweep,
            n_instances: n,
            pf_failures: detail.iter().filter(|d| !d.pf_converged).count(),
            detail,
        }
    }

    /// Recomputes the summary from the stored detail table.
    pub fn recomputed(&self) -> Self {
        Self::aggregate(
            &self.model,
            self.base_mva,
            self.outputs.clone(),
            self.output_is_voltage.clone(),
            self.sweep.clone(),
            self.relaxation,
            self.detail.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Relaxations checked per instance; must contain 0 and `relaxation`.
    pub sweep: Vec<f64>,
    /// Relaxation reported as the relaxed feasibility.
    pub relaxation: f64,
    pub split: SplitTag,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { sweep: RELAXATION_SWEEP.to_vec(), relaxation: HEADLINE_RELAXATION, split: SplitTag::Test }
    }
}

/// Scores `predictor` on the rows of one split. Predictions are used as
/// given: nothing is clamped into its box, so violations show up in the
/// feasibility columns. Instances whose power flow fails count as
/// infeasible and are left out of the loss-gap statistics.
pub fn evaluate(predictor: &dyn Predictor, grid: &Grid, dataset: &LabeledDataset, options: &EvalOptions) -> Result<Metrics, EvalError> {
    let sweep = &options.sweep;
    if !sweep.contains(&0.0) || !sweep.contains(&options.relaxation) {
        return Err(EvalError::Sweep(format!("{sweep:?} must contain 0 and {}", options.relaxation)));
    }
    if sweep.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(EvalError::Sweep(format!("{sweep:?} has a negative or non-finite entry")));
    }
    let rows: Vec<&LabeledRow> = dataset.tagged(options.split).filter(|r| r.y_star.is_some()).collect();
    if rows.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    let predictions = predictor.predict(&rows)?;
    if predictions.len() != rows.len() {
        return Err(EvalError::PredictionCount { expected: rows.len(), got: predictions.len() });
    }
    let space = ControlSpace::new(grid);
    let mask = space.decision_mask(grid.n_buses());
    let decision: Vec<_> = control_columns(grid)
        .into_iter()
        .filter(|k| matches!(k.slot(), Some(Slot::Control(c)) if mask[k.bus][c]))
        .collect();
    let outputs: Vec<String> = decision.iter().map(ToString::to_string).collect();
    let is_voltage: Vec<bool> = decision.iter().map(|k| k.slot() == Some(Slot::Control(0))).collect();

    let detail = rows
        .par_iter()
        .zip(predictions.par_iter())
        .map(|(row, y)| -> Result<InstanceDetail, EvalError> {
            let stamp = || format_timestamp(&row.timestamp);
            y.check(grid).map_err(|e| EvalError::BadPrediction { timestamp: stamp(), message: e.to_string() })?;
            let truth_y = row.y_star.as_ref().expect("filtered");
            let p_loss_star = row.p_loss_star.unwrap_or(f64::NAN);
            let truth = decision.iter().map(|&k| read_control(truth_y, k)).collect();
            let prediction = decision.iter().map(|&k| read_control(y, k)).collect();
            let sol = solve_pf(grid, &row.x, y, &PfOptions::default()).ok().filter(|s| s.converged);
            let Some(sol) = sol else {
                return Ok(InstanceDetail {
                    timestamp: row.timestamp,
                    pf_converged: false,
                    p_loss: None,
                    p_loss_star,
                    loss_gap_pct: None,
                    feasible: vec![false; sweep.len()],
                    truth,
                    prediction,
                });
            };
            let feasible = sweep
                .iter()
                .map(|&rho| check_constraints(grid, &row.x, y, &sol, rho).map(|r| r.feasible).unwrap_or(false))
                .collect();
            Ok(InstanceDetail {
                timestamp: row.timestamp,
                pf_converged: true,
                p_loss: Some(sol.p_loss),
                p_loss_star,
                loss_gap_pct: Some(100.0 * (sol.p_loss - p_loss_star) / p_loss_star),
                feasible,
                truth,
                prediction,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = Metrics::aggregate(predictor.name(), grid.base_mva, outputs, is_voltage, sweep.clone(), options.relaxation, detail);
    log::info!(
        "{}: mae_v {:.3e} pu, mae_q {:.3} MVar, loss gap {:.2}±{:.2}%, feasible {:.1}% / {:.1}%",
        metrics.model,
        metrics.mae_v,
        metrics.mae_q,
        metrics.loss_gap_mean.unwrap_or(f64::NAN),
        metrics.loss_gap_std.unwrap_or(f64::NAN),
        metrics.feas_pct,
        metrics.feas_relaxed_pct
    );
    Ok(metrics)
}

#[cfg(test)]
mod tests;
