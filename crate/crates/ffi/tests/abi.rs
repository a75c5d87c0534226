use std::ffi::{CStr, CString};
use std::ptr;

use dispatch_core::datagen::{label_dataset, sample_synthetic, split, SplitScheme};
use dispatch_core::fixtures;
use dispatch_core::grid::Grid;
use dispatch_core::nn::{Checkpoint, Model, ModelConfig, TrainedModel};
use dispatch_core::orpd::{solve_orpd, OrpdOptions};
use dispatch_core::powerflow::{solve_pf, ControlVector, InputVector, PfOptions};
use dispatch_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dispatch_last_error()) }.to_string_lossy().into_owned()
}

fn grid_handle(grid: &Grid) -> *mut DispatchGrid {
    let json = CString::new(grid.to_json()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dispatch_grid_from_json(json.as_ptr(), &mut h) }, DispatchStatus::Ok, "{}", last_error());
    assert!(!h.is_null());
    h
}

fn flat_inputs(x: &InputVector) -> Vec<f64> {
    x.rows.iter().flatten().copied().collect()
}

#[test]
fn power_flow_matches_the_library() {
    let grid = fixtures::three_bus();
    let x = fixtures::three_bus_inputs();
    let h = grid_handle(&grid);
    let n = unsafe { dispatch_grid_n_buses(h) };
    assert_eq!(n, 3);

    let mut controls = vec![0.0; 2 * n];
    assert_eq!(unsafe { dispatch_grid_nominal_controls(h, controls.as_mut_ptr()) }, DispatchStatus::Ok);
    let (mut vm, mut va, mut loss) = (vec![0.0; n], vec![0.0; n], 0.0);
    let status = unsafe { dispatch_pf_solve(h, flat_inputs(&x).as_ptr(), controls.as_ptr(), vm.as_mut_ptr(), va.as_mut_ptr(), &mut loss) };
    assert_eq!(status, DispatchStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");

    let sol = solve_pf(&grid, &x, &ControlVector::nominal(&grid), &PfOptions::default()).unwrap();
    assert_eq!(loss, sol.p_loss);
    for b in 0..n {
        assert_eq!(vm[b], sol.voltages[b].norm());
        assert_eq!(va[b], sol.voltages[b].arg());
    }

    // Null controls means nominal; null outputs are skipped.
    let mut loss2 = 0.0;
    let status = unsafe { dispatch_pf_solve(h, flat_inputs(&x).as_ptr(), ptr::null(), ptr::null_mut(), ptr::null_mut(), &mut loss2) };
    assert_eq!(status, DispatchStatus::Ok);
    assert_eq!(loss2, loss);
    unsafe { dispatch_grid_free(h) };
}

#[test]
fn orpd_matches_the_library() {
    let grid = fixtures::one_compensator();
    let x = fixtures::one_compensator_inputs();
    let h = grid_handle(&grid);
    let mut y = vec![0.0; 4];
    let mut loss = f64::NAN;
    let status = unsafe { dispatch_orpd_solve(h, flat_inputs(&x).as_ptr(), 7, y.as_mut_ptr(), &mut loss) };
    let direct = solve_orpd(&grid, &x, &OrpdOptions { seed: 7, ..OrpdOptions::default() }).unwrap();
    assert_eq!(status == DispatchStatus::Ok, direct.converged);
    assert_eq!(loss, direct.p_loss);
    let expected: Vec<f64> = direct.y_star.values.iter().flatten().copied().collect();
    assert_eq!(y, expected);
    unsafe { dispatch_grid_free(h) };
}

#[test]
fn model_predictions_match_the_library() {
    let grid = fixtures::three_bus();
    let xs = sample_synthetic(&grid, &fixtures::three_bus_inputs(), 20, 0.3, 3);
    let ds = label_dataset(&grid, &xs, &OrpdOptions::default());
    let ds = split(&grid, &ds, SplitScheme::Random([0.6, 0.2, 0.2]), 0).unwrap();
    let stats = ds.norm_stats.clone().unwrap();
    let model = Model::new(ModelConfig { hidden: vec![8], ..ModelConfig::gnn() }, &grid, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::new(&model, 11, stats.clone(), None).save(&path).unwrap();

    let h = grid_handle(&grid);
    let mut m = ptr::null_mut();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dispatch_model_load(cpath.as_ptr(), h, &mut m) }, DispatchStatus::Ok, "{}", last_error());

    let batch: Vec<f64> = xs[..4].iter().flat_map(flat_inputs).collect();
    let mut out = vec![0.0; 4 * 3 * 2];
    let status = unsafe { dispatch_model_predict(m, h, batch.as_ptr(), 4, out.as_mut_ptr()) };
    assert_eq!(status, DispatchStatus::Ok, "{}", last_error());

    let tm = TrainedModel::new(model, &grid, stats).unwrap();
    let expected: Vec<f64> =
        tm.predict(&xs[..4].iter().collect::<Vec<_>>()).unwrap().iter().flat_map(|y| y.values.iter().flatten().copied()).collect();
    assert_eq!(out, expected);

    // Bound to a 3-bus grid: a 2-bus grid is rejected.
    let other = grid_handle(&fixtures::two_bus());
    let status = unsafe { dispatch_model_predict(m, other, batch.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(status, DispatchStatus::InvalidArgument);
    assert!(last_error().contains("buses"));

    unsafe {
        dispatch_model_free(m);
        dispatch_grid_free(other);
        dispatch_grid_free(h);
    }
}

#[test]
fn failures_set_status_and_message() {
    let mut h = ptr::null_mut();
    let bad = CString::new("{\"base_mva\": 1}").unwrap();
    assert_eq!(unsafe { dispatch_grid_from_json(bad.as_ptr(), &mut h) }, DispatchStatus::InvalidGrid);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    let missing = CString::new("/nonexistent/grid.json").unwrap();
    assert_eq!(unsafe { dispatch_grid_load(missing.as_ptr(), &mut h) }, DispatchStatus::Io);
    assert_eq!(unsafe { dispatch_grid_load(ptr::null(), &mut h) }, DispatchStatus::NullArgument);

    let grid = fixtures::three_bus();
    let h = grid_handle(&grid);
    // Load on a bus that has none.
    let mut x = flat_inputs(&fixtures::three_bus_inputs());
    let undefined = (0..x.len()).find(|&k| !InputVector::defined_mask(&grid)[k / 5][k % 5]).unwrap();
    x[undefined] = 1.0;
    let mut loss = 0.0;
    let status = unsafe { dispatch_pf_solve(h, x.as_ptr(), ptr::null(), ptr::null_mut(), ptr::null_mut(), &mut loss) };
    assert_eq!(status, DispatchStatus::InvalidArgument);
    assert!(last_error().contains("no such element"), "{}", last_error());

    let status = unsafe { dispatch_pf_solve(ptr::null(), x.as_ptr(), ptr::null(), ptr::null_mut(), ptr::null_mut(), &mut loss) };
    assert_eq!(status, DispatchStatus::NullArgument);

    let mut m = ptr::null_mut();
    let status = unsafe { dispatch_model_load(missing.as_ptr(), h, &mut m) };
    assert_eq!(status, DispatchStatus::Io);
    assert_eq!(unsafe { dispatch_grid_n_buses(ptr::null()) }, 0);
    unsafe {
        dispatch_grid_free(ptr::null_mut());
        dispatch_model_free(ptr::null_mut());
        dispatch_grid_free(h);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dispatch_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
