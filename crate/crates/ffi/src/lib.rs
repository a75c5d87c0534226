//! C ABI over `dispatch-core`.
//!
//! Grids and trained models are opaque handles created by `*_load` /
//! `*_from_json` and released with the matching `*_free`. Every fallible
//! function returns a [`DispatchStatus`]; on failure the message is kept per
//! thread and read back with [`dispatch_last_error`].
//!
//! Arrays are row-major `double` buffers, one row per bus:
//! inputs have 5 columns `[p_load, q_load, p_stat, q_stat, p_volt]`,
//! controls have 2 columns `[v_set, q_comp]`, all per-unit.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dispatch_core::grid::{parse_grid, parse_grid_file, Grid, GridError};
use dispatch_core::nn::{Checkpoint, TrainedModel};
use dispatch_core::orpd::{solve_orpd, OrpdOptions};
use dispatch_core::powerflow::{solve_pf, ControlVector, InputVector, PfOptions};

/// Number of input columns per bus.
pub const DISPATCH_INPUT_COLUMNS: usize = 5;
/// Number of control columns per bus.
pub const DISPATCH_CONTROL_COLUMNS: usize = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchStatus {
    Ok = 0,
    NullArgument = 1,
    /// Bad UTF-8, wrong buffer size, undefined entry set, non-finite value.
    InvalidArgument = 2,
    /// The grid failed to parse or validate.
    InvalidGrid = 3,
    Io = 4,
    /// A solve ran but did not converge; outputs hold the last iterate.
    NotConverged = 5,
    /// Checkpoint unreadable or inconsistent with the grid.
    Model = 6,
    /// A numerical failure such as a singular Jacobian.
    Numerical = 7,
    /// Internal panic caught at the boundary.
    Panic = 8,
}

/// Opaque network handle.
pub struct DispatchGrid {
    grid: Grid,
}

/// Opaque trained-model handle, bound to the grid it was loaded against.
pub struct DispatchModel {
    model: TrainedModel,
    n_buses: usize,
}

struct Failure(DispatchStatus, String);

type Outcome = Result<DispatchStatus, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(body: impl FnOnce() -> Outcome) -> DispatchStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&message);
            DispatchStatus::Panic
        }
    }
}

fn fail<T>(status: DispatchStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, message.into()))
}

fn grid_failure(e: GridError) -> Failure {
    let status = match e {
        GridError::Io { .. } => DispatchStatus::Io,
        _ => DispatchStatus::InvalidGrid,
    };
    Failure(status, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(DispatchStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(DispatchStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| fail(DispatchStatus::NullArgument, format!("{what} is null")), Ok)
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return fail(DispatchStatus::NullArgument, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn read_inputs(grid: &Grid, p: *const f64, offset: usize) -> Result<InputVector, Failure> {
    if p.is_null() {
        return fail(DispatchStatus::NullArgument, "inputs is null");
    }
    let n = grid.n_buses();
    let flat = std::slice::from_raw_parts(p.add(offset * n * DISPATCH_INPUT_COLUMNS), n * DISPATCH_INPUT_COLUMNS);
    let x = InputVector { rows: flat.chunks_exact(5).map(|r| [r[0], r[1], r[2], r[3], r[4]]).collect(), timestamp: None };
    x.check(grid).map_err(|e| Failure(DispatchStatus::InvalidArgument, e.to_string()))?;
    Ok(x)
}

unsafe fn read_controls(grid: &Grid, p: *const f64) -> Result<ControlVector, Failure> {
    if p.is_null() {
        return Ok(ControlVector::nominal(grid));
    }
    let mut y = ControlVector::zeros(grid);
    let flat = std::slice::from_raw_parts(p, grid.n_buses() * DISPATCH_CONTROL_COLUMNS);
    for (b, v) in y.values.iter_mut().enumerate() {
        *v = [flat[2 * b], flat[2 * b + 1]];
    }
    y.check(grid).map_err(|e| Failure(DispatchStatus::InvalidArgument, e.to_string()))?;
    Ok(y)
}

fn write_controls(y: &ControlVector, out: &mut [f64]) {
    for (chunk, v) in out.chunks_exact_mut(2).zip(&y.values) {
        chunk.copy_from_slice(v);
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dispatch_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn dispatch_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses and validates a grid description (JSON text).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispatch_grid_from_json(json: *const c_char, out: *mut *mut DispatchGrid) -> DispatchStatus {
    guard(|| {
        if out.is_null() {
            return fail(DispatchStatus::NullArgument, "out is null");
        }
        let grid = parse_grid(str_arg(json, "json")?).map_err(grid_failure)?;
        *out = Box::into_raw(Box::new(DispatchGrid { grid }));
        Ok(DispatchStatus::Ok)
    })
}

/// Reads, parses and validates a grid file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dispatch_grid_load(path: *const c_char, out: *mut *mut DispatchGrid) -> DispatchStatus {
    guard(|| {
        if out.is_null() {
            return fail(DispatchStatus::NullArgument, "out is null");
        }
        let grid = parse_grid_file(str_arg(path, "path")?).map_err(grid_failure)?;
        *out = Box::into_raw(Box::new(DispatchGrid { grid }));
        Ok(DispatchStatus::Ok)
    })
}

/// # Safety
/// `grid` must come from a grid constructor and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn dispatch_grid_free(grid: *mut DispatchGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of buses, or 0 for a null handle.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dispatch_grid_n_buses(grid: *const DispatchGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.n_buses())
}

/// Writes the default nominal controls (`n_buses * 2` doubles).
///
/// # Safety
/// `grid` must be a live handle and `controls_out` must hold `n_buses * 2` doubles.
#[no_mangle]
pub unsafe extern "C" fn dispatch_grid_nominal_controls(grid: *const DispatchGrid, controls_out: *mut f64) -> DispatchStatus {
    guard(|| {
        let g = &handle(grid, "grid")?.grid;
        let out = out_slice(controls_out, g.n_buses() * DISPATCH_CONTROL_COLUMNS, "controls_out")?;
        write_controls(&ControlVector::nominal(g), out);
        Ok(DispatchStatus::Ok)
    })
}

/// Solves the power flow for one instance.
///
/// `controls` may be null for the nominal controls. `vm_out` and `va_out`
/// (each `n_buses` doubles) and `p_loss_out` may be null when not wanted.
/// Returns `DISPATCH_STATUS_NOT_CONVERGED` with the last iterate written when Newton stalls.
///
/// # Safety
/// Non-null buffers must have the documented sizes; `grid` must be live.
#[no_mangle]
pub unsafe extern "C" fn dispatch_pf_solve(
    grid: *const DispatchGrid,
    inputs: *const f64,
    controls: *const f64,
    vm_out: *mut f64,
    va_out: *mut f64,
    p_loss_out: *mut f64,
) -> DispatchStatus {
    guard(|| {
        let g = &handle(grid, "grid")?.grid;
        let x = read_inputs(g, inputs, 0)?;
        let y = read_controls(g, controls)?;
        let sol = solve_pf(g, &x, &y, &PfOptions::default())
            .map_err(|e| Failure(DispatchStatus::Numerical, e.to_string()))?;
        let n = g.n_buses();
        if !vm_out.is_null() {
            for (o, v) in std::slice::from_raw_parts_mut(vm_out, n).iter_mut().zip(&sol.voltages) {
                *o = v.norm();
            }
        }
        if !va_out.is_null() {
            for (o, v) in std::slice::from_raw_parts_mut(va_out, n).iter_mut().zip(&sol.voltages) {
                *o = v.arg();
            }
        }
        if let Some(p) = p_loss_out.as_mut() {
            *p = sol.p_loss;
        }
        if sol.converged {
            Ok(DispatchStatus::Ok)
        } else {
            fail(DispatchStatus::NotConverged, format!("no convergence after {} iterations", sol.iterations))
        }
    })
}

/// Loss-minimizing controls for one instance with default solver options
/// and the given restart seed. `p_loss_out` may be null.
/// Returns `DISPATCH_STATUS_NOT_CONVERGED` (controls still written) when the solver stops
/// without meeting its tolerances.
///
/// # Safety
/// `inputs` holds `n_buses * 5` doubles, `controls_out` `n_buses * 2`.
#[no_mangle]
pub unsafe extern "C" fn dispatch_orpd_solve(
    grid: *const DispatchGrid,
    inputs: *const f64,
    seed: u64,
    controls_out: *mut f64,
    p_loss_out: *mut f64,
) -> DispatchStatus {
    guard(|| {
        let g = &handle(grid, "grid")?.grid;
        let x = read_inputs(g, inputs, 0)?;
        let out = out_slice(controls_out, g.n_buses() * DISPATCH_CONTROL_COLUMNS, "controls_out")?;
        let options = OrpdOptions { seed, ..OrpdOptions::default() };
        let sol = solve_orpd(g, &x, &options).map_err(|e| Failure(DispatchStatus::Numerical, e.to_string()))?;
        write_controls(&sol.y_star, out);
        if let Some(p) = p_loss_out.as_mut() {
            *p = sol.p_loss;
        }
        if sol.converged {
            Ok(DispatchStatus::Ok)
        } else {
            fail(DispatchStatus::NotConverged, "dispatch solver stopped before meeting its tolerances")
        }
    })
}

/// Loads a model checkpoint and binds it to `grid`. The grid handle may be
/// freed afterwards.
///
/// # Safety
/// `path` must be NUL-terminated, `grid` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dispatch_model_load(
    path: *const c_char,
    grid: *const DispatchGrid,
    out: *mut *mut DispatchModel,
) -> DispatchStatus {
    guard(|| {
        if out.is_null() {
            return fail(DispatchStatus::NullArgument, "out is null");
        }
        let path = Path::new(str_arg(path, "path")?);
        let g = &handle(grid, "grid")?.grid;
        let ck = Checkpoint::load(path).map_err(|e| {
            let status = if path.exists() { DispatchStatus::Model } else { DispatchStatus::Io };
            Failure(status, e.to_string())
        })?;
        let model = TrainedModel::from_checkpoint(&ck, g).map_err(|e| Failure(DispatchStatus::Model, e.to_string()))?;
        *out = Box::into_raw(Box::new(DispatchModel { model, n_buses: g.n_buses() }));
        Ok(DispatchStatus::Ok)
    })
}

/// # Safety
/// `model` must come from [`dispatch_model_load`] and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn dispatch_model_free(model: *mut DispatchModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts controls for `count` instances stored back to back:
/// `inputs` holds `count * n_buses * 5` doubles, `controls_out` receives
/// `count * n_buses * 2`. Fixed setpoints come from the grid; nothing is
/// clamped.
///
/// # Safety
/// Buffers must have the documented sizes; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn dispatch_model_predict(
    model: *const DispatchModel,
    grid: *const DispatchGrid,
    inputs: *const f64,
    count: usize,
    controls_out: *mut f64,
) -> DispatchStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let g = &handle(grid, "grid")?.grid;
        if g.n_buses() != m.n_buses {
            return fail(
                DispatchStatus::InvalidArgument,
                format!("model expects {} buses, grid has {}", m.n_buses, g.n_buses()),
            );
        }
        let xs = (0..count).map(|k| read_inputs(g, inputs, k)).collect::<Result<Vec<_>, _>>()?;
        let out = out_slice(controls_out, count * g.n_buses() * DISPATCH_CONTROL_COLUMNS, "controls_out")?;
        let ys = m
            .model
            .predict(&xs.iter().collect::<Vec<_>>())
            .map_err(|e| Failure(DispatchStatus::Model, e.to_string()))?;
        for (chunk, y) in out.chunks_exact_mut(g.n_buses() * DISPATCH_CONTROL_COLUMNS).zip(&ys) {
            write_controls(y, chunk);
        }
        Ok(DispatchStatus::Ok)
    })
}
