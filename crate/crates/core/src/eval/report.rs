use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, Metrics};

/// One model scored under one data regime.
#[derive(Debug, Clone, Copy)]
pub struct ReportEntry<'a> {
    pub regime: &'a str,
    pub metrics: &'a Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub regime: String,
    pub model: String,
    pub loss_gap_mean: Option<f64>,
    pub loss_gap_std: Option<f64>,
    pub feas_pct: f64,
    pub feas_relaxed_pct: f64,
    pub relaxation: f64,
    pub mae_v: f64,
    pub mae_q: f64,
    pub n_instances: usize,
    pub pf_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub text: String,
}

const HEADER: [&str; 7] = ["Regime", "Model", "Losses (% rel.)", "Feas.", "Feas.*", "MAE_v", "MAE_q"];

impl ReportRow {
    fn cells(&self) -> [String; 7] {
        let losses = match (self.loss_gap_mean, self.loss_gap_std) {
            (Some(m), Some(s)) => format!("{m:.2}±{s:.2}"),
            _ => "n/a".into(),
        };
        [
            self.regime.clone(),
            self.model.clone(),
            losses,
            format!("{:.1}", self.feas_pct),
            format!("{:.1}", self.feas_relaxed_pct),
            format!("{:.1e}", self.mae_v),
            format!("{:.2}", self.mae_q),
        ]
    }
}

/// Comparison table with columns losses, feasibility, relaxed
/// feasibility, MAE_v (p.u.) and MAE_q (MVar), one row per entry.
pub fn report_table(entries: &[ReportEntry<'_>]) -> ReportTable {
    let rows: Vec<ReportRow> = entries
        .iter()
        .map(|e| ReportRow {
            regime: e.regime.to_string(),
            model: e.metrics.model.clone(),
            loss_gap_mean: e.metrics.loss_gap_mean,
            loss_gap_std: e.metrics.loss_gap_std,
            feas_pct: e.metrics.feas_pct,
            feas_relaxed_pct: e.metrics.feas_relaxed_pct,
            relaxation: e.metrics.relaxation,
            mae_v: e.metrics.mae_v,
            mae_q: e.metrics.mae_q,
            n_instances: e.metrics.n_instances,
            pf_failures: e.metrics.pf_failures,
        })
        .collect();
    let cells: Vec<[String; 7]> = rows.iter().map(ReportRow::cells).collect();
    let mut widths = HEADER.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> =
            cells.iter().zip(&widths).map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut text = line(&HEADER.map(String::from));
    text.push_str(&line(&widths.map(|w| "-".repeat(w))));
    for row in &cells {
        text.push_str(&line(row));
    }
    if let Some(first) = rows.first() {
        text.push_str(&format!(
            "\nLosses: P_loss gap to the oracle, mean±std over converged power flows.\nFeas.*: limits relaxed by {:.1}%.\n",
            100.0 * first.relaxation
        ));
    }
    ReportTable { rows, text }
}

impl ReportTable {
    /// Writes `report.txt` and its twin `report.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(EvalError::io(dir))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, &self.text).map_err(EvalError::io(&txt))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(&self.rows)? + "\n").map_err(EvalError::io(&json))?;
        Ok(())
    }
}
