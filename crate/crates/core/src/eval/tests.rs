use std::sync::OnceLock;

use super::*;
use crate::datagen::{label_dataset, sample_synthetic, split, SplitScheme};
use crate::fixtures;
use crate::nn::{Model, ModelConfig};
use crate::orpd::OrpdOptions;

fn labeled() -> &'static (Grid, LabeledDataset) {
    static DATA: OnceLock<(Grid, LabeledDataset)> = OnceLock::new();
    DATA.get_or_init(|| {
        let grid = fixtures::three_bus();
        let inputs = sample_synthetic(&grid, &fixtures::three_bus_inputs(), 40, 0.3, 12);
        let ds = label_dataset(&grid, &inputs, &OrpdOptions::default());
        let ds = split(&grid, &ds, SplitScheme::Random([0.5, 0.25, 0.25]), 1).unwrap();
        (grid, ds)
    })
}

/// Oracle labels shifted by a fixed amount on every decision entry.
struct Shifted {
    dv: f64,
    dq: f64,
    space: ControlSpace,
}

impl Predictor for Shifted {
    fn name(&self) -> &str {
        "Shifted"
    }

    fn predict(&self, rows: &[&LabeledRow]) -> Result<Vec<ControlVector>, EvalError> {
        let mask = self.space.decision_mask(rows[0].x.n_buses());
        Ok(rows
            .iter()
            .map(|r| {
                let mut y = r.y_star.clone().unwrap();
                for (v, m) in y.values.iter_mut().zip(&mask) {
                    if m[0] {
                        v[0] += self.dv;
                    }
                    if m[1] {
                        v[1] += self.dq;
                    }
                }
                y
            })
            .collect())
    }
}

#[test]
fn oracle_replay_is_exact() {
    let (grid, ds) = labeled();
    let m = evaluate(&OracleReplay, grid, ds, &EvalOptions::default()).unwrap();
    assert!(m.n_instances >= 5);
    assert_eq!(m.mae_v, 0.0);
    assert_eq!(m.mae_q, 0.0);
    assert_eq!(m.loss_gap_mean, Some(0.0));
    assert_eq!(m.loss_gap_std, Some(0.0));
    let oracle_feasible = ds.tagged(SplitTag::Test).filter(|r| r.feasible_at == Some(0.0)).count();
    assert_eq!(m.feas_pct, 100.0 * oracle_feasible as f64 / m.n_instances as f64);
    assert_eq!(m.feas_pct, 100.0);
}

#[test]
fn zero_predictor_is_never_feasible() {
    let (grid, ds) = labeled();
    let m = evaluate(&ConstantPredictor::zero(grid), grid, ds, &EvalOptions::default()).unwrap();
    assert_eq!(m.feas_pct, 0.0);
    assert_eq!(m.feas_relaxed_pct, 0.0);
}

#[test]
fn relaxed_feasibility_is_monotone_and_units_are_consistent() {
    let (grid, ds) = labeled();
    let opts = EvalOptions { sweep: vec![0.0, 0.005, 0.018, 0.05, 0.2], ..EvalOptions::default() };
    for (dv, dq) in [(0.01, 0.05), (-0.02, -0.1), (0.03, 0.0)] {
        let p = Shifted { dv, dq, space: ControlSpace::new(grid) };
        let m = evaluate(&p, grid, ds, &opts).unwrap();
        assert!(m.feas_sweep_pct.windows(2).all(|w| w[0] <= w[1]), "{:?}", m.feas_sweep_pct);
        assert!(m.feas_relaxed_pct >= m.feas_pct);
        assert!((m.mae_q - m.mae_q_pu * grid.base_mva).abs() <= 1e-12);
        assert!((m.mae_v - dv.abs()).abs() < 1e-12);
        assert!((m.mae_q_pu - dq.abs()).abs() < 1e-12);
        assert_eq!(m.recomputed(), m);
    }
}

#[test]
fn untrained_model_runs_through_evaluation() {
    let (grid, ds) = labeled();
    let model = Model::new(ModelConfig { hidden: vec![4], ..ModelConfig::gnn() }, grid, 0).unwrap();
    let tm = TrainedModel::new(model, grid, ds.norm_stats.clone().unwrap()).unwrap();
    let p = ModelPredictor { name: "GNN".into(), model: tm };
    let m = evaluate(&p, grid, ds, &EvalOptions::default()).unwrap();
    assert_eq!(m.model, "GNN");
    assert_eq!(m.recomputed(), m);
    assert!(m.mae_v > 0.0);
}

#[test]
fn bad_sweep_and_empty_split_are_rejected() {
    let (grid, ds) = labeled();
    let opts = EvalOptions { sweep: vec![0.05], ..EvalOptions::default() };
    assert!(matches!(evaluate(&OracleReplay, grid, ds, &opts), Err(EvalError::Sweep(_))));
    let mut untagged = ds.clone();
    for r in &mut untagged.rows {
        r.split = None;
    }
    assert!(matches!(evaluate(&OracleReplay, grid, &untagged, &EvalOptions::default()), Err(EvalError::EmptyTestSplit)));
}

#[test]
fn plots_of_a_perfect_predictor_coincide() {
    let (grid, ds) = labeled();
    let m = evaluate(&OracleReplay, grid, ds, &EvalOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let series = emit_comparison_plots(&m, &[], dir.path()).unwrap();
    assert_eq!(series.len(), m.outputs.len());
    for s in &series {
        assert_eq!(s.truth, s.prediction);
        assert!(s.truth.windows(2).all(|w| w[0] <= w[1]));
        let csv = std::fs::read_to_string(&s.csv).unwrap();
        assert_eq!(csv.lines().count(), m.n_instances + 1);
        assert!(std::fs::read_to_string(&s.svg).unwrap().starts_with("<svg"));
    }
    let q = series.iter().find(|s| s.output.starts_with("comp")).unwrap();
    assert_eq!(q.unit, "MVar");
    let err = emit_comparison_plots(&m, &["vgen_9_vset".to_string()], dir.path()).unwrap_err();
    assert!(matches!(err, EvalError::UnknownOutput(_)));
}

fn fake_metrics(model: &str, gap: (f64, f64), feas: (f64, f64), mae_v: f64, mae_q: f64) -> Metrics {
    Metrics {
        model: model.into(),
        base_mva: 100.0,
        outputs: vec![],
        output_is_voltage: vec![],
        mae_v,
        mae_q_pu: mae_q / 100.0,
        mae_q,
        loss_gap_mean: Some(gap.0),
        loss_gap_std: Some(gap.1),
        feas_pct: feas.0,
        feas_relaxed_pct: feas.1,
        relaxation: 0.018,
        sweep: vec![0.0, 0.018],
        feas_sweep_pct: vec![feas.0, feas.1],
        n_instances: 10,
        pf_failures: 0,
        detail: vec![],
    }
}

#[test]
fn report_rows_follow_the_column_order() {
    let fcnn = fake_metrics("FCNN", (0.0, 0.69), (64.8, 92.6), 2.6e-3, 2.75);
    let table = report_table(&[ReportEntry { regime: "real", metrics: &fcnn }]);
    assert_eq!(table.rows.len(), 1);
    let line = table.text.lines().nth(2).unwrap();
    let cells: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(cells, ["real", "FCNN", "0.00±0.69", "64.8", "92.6", "2.6e-3", "2.75"]);
    assert!(table.text.lines().next().unwrap().starts_with("Regime"));
}

#[test]
fn oracle_row_reads_zero_losses() {
    let (grid, ds) = labeled();
    let m = evaluate(&OracleReplay, grid, ds, &EvalOptions::default()).unwrap();
    let table = report_table(&[ReportEntry { regime: "synthetic", metrics: &m }]);
    assert!(table.text.contains("0.00±0.00"));
    let dir = tempfile::tempdir().unwrap();
    table.write(dir.path()).unwrap();
    let back: Vec<ReportRow> = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, table.rows);
}
