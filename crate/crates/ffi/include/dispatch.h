#ifndef DISPATCH_H
#define DISPATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Number of input columns per bus.
 */
#define DISPATCH_INPUT_COLUMNS 5

/**
 * Number of control columns per bus.
 */
#define DISPATCH_CONTROL_COLUMNS 2

typedef enum dispatch_status {
  DISPATCH_STATUS_OK = 0,
  DISPATCH_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bad UTF-8, wrong buffer size, undefined entry set, non-finite value.
   */
  DISPATCH_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The grid failed to parse or validate.
   */
  DISPATCH_STATUS_INVALID_GRID = 3,
  DISPATCH_STATUS_IO = 4,
  /**
   * A solve ran but did not converge; outputs hold the last iterate.
   */
  DISPATCH_STATUS_NOT_CONVERGED = 5,
  /**
   * Checkpoint unreadable or inconsistent with the grid.
   */
  DISPATCH_STATUS_MODEL = 6,
  /**
   * A numerical failure such as a singular Jacobian.
   */
  DISPATCH_STATUS_NUMERICAL = 7,
  /**
   * Internal panic caught at the boundary.
   */
  DISPATCH_STATUS_PANIC = 8,
} dispatch_status;

/**
 * Opaque network handle.
 */
typedef struct dispatch_grid dispatch_grid;

/**
 * Opaque trained-model handle, bound to the grid it was loaded against.
 */
typedef struct dispatch_model dispatch_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dispatch_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *dispatch_last_error(void);

/**
 * Parses and validates a grid description (JSON text).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum dispatch_status dispatch_grid_from_json(const char *json, struct dispatch_grid **out);

/**
 * Reads, parses and validates a grid file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum dispatch_status dispatch_grid_load(const char *path, struct dispatch_grid **out);

/**
 * # Safety
 * `grid` must come from a grid constructor and not be freed yet, or be null.
 */
void dispatch_grid_free(struct dispatch_grid *grid);

/**
 * Number of buses, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be a live handle or null.
 */
size_t dispatch_grid_n_buses(const struct dispatch_grid *grid);

/**
 * Writes the default nominal controls (`n_buses * 2` doubles).
 *
 * # Safety
 * `grid` must be a live handle and `controls_out` must hold `n_buses * 2` doubles.
 */
enum dispatch_status dispatch_grid_nominal_controls(const struct dispatch_grid *grid,
                                                    double *controls_out);

/**
 * Solves the power flow for one instance.
 *
 * `controls` may be null for the nominal controls. `vm_out` and `va_out`
 * (each `n_buses` doubles) and `p_loss_out` may be null when not wanted.
 * Returns `DISPATCH_STATUS_NOT_CONVERGED` with the last iterate written when Newton stalls.
 *
 * # Safety
 * Non-null buffers must have the documented sizes; `grid` must be live.
 */
enum dispatch_status dispatch_pf_solve(const struct dispatch_grid *grid,
                                       const double *inputs,
                                       const double *controls,
                                       double *vm_out,
                                       double *va_out,
                                       double *p_loss_out);

/**
 * Loss-minimizing controls for one instance with default solver options
 * and the given restart seed. `p_loss_out` may be null.
 * Returns `DISPATCH_STATUS_NOT_CONVERGED` (controls still written) when the solver stops
 * without meeting its tolerances.
 *
 * # Safety
 * `inputs` holds `n_buses * 5` doubles, `controls_out` `n_buses * 2`.
 */
enum dispatch_status dispatch_orpd_solve(const struct dispatch_grid *grid,
                                         const double *inputs,
                                         uint64_t seed,
                                         double *controls_out,
                                         double *p_loss_out);

/**
 * Loads a model checkpoint and binds it to `grid`. The grid handle may be
 * freed afterwards.
 *
 * # Safety
 * `path` must be NUL-terminated, `grid` live, `out` writable.
 */
enum dispatch_status dispatch_model_load(const char *path,
                                         const struct dispatch_grid *grid,
                                         struct dispatch_model **out);

/**
 * # Safety
 * `model` must come from [`dispatch_model_load`] and not be freed yet, or be null.
 */
void dispatch_model_free(struct dispatch_model *model);

/**
 * Predicts controls for `count` instances stored back to back:
 * `inputs` holds `count * n_buses * 5` doubles, `controls_out` receives
 * `count * n_buses * 2`. Fixed setpoints come from the grid; nothing is
 * clamped.
 *
 * # Safety
 * Buffers must have the documented sizes; `model` must be live.
 */
enum dispatch_status dispatch_model_predict(const struct dispatch_model *model,
                                            const struct dispatch_grid *grid,
                                            const double *inputs,
                                            size_t count,
                                            double *controls_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISPATCH_H */
