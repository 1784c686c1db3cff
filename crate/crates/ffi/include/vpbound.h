#ifndef VPBOUND_H
#define VPBOUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VpStatus {
  VP_STATUS_OK = 0,
  VP_STATUS_NULL_POINTER = 1,
  VP_STATUS_INVALID_UTF8 = 2,
  VP_STATUS_VALIDATION = 3,
  VP_STATUS_NUMERICAL = 4,
  VP_STATUS_IO = 5,
  VP_STATUS_OUT_OF_RANGE = 6,
  VP_STATUS_PANIC = 7,
} VpStatus;

/**
 * Opaque handle to the in-memory results of a run.
 */
typedef struct VpRun VpRun;

/**
 * Opaque handle to a parsed and validated scenario.
 */
typedef struct VpScenario VpScenario;

/**
 * One row of the per-snapshot diagnostics, without the norm columns.
 */
typedef struct VpDiagnosticsRow {
  double time;
  double qf_lower;
  double qg;
  double energy_total;
  double tail_energy;
  double sup_e;
  double sup_grad_e;
  size_t picard_iters;
  double picard_residual;
} VpDiagnosticsRow;

typedef struct VpExponents {
  double q;
  double a;
  double b;
  double m_small;
  double m_large;
  double n_small;
  double n_large;
} VpExponents;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vp_last_error_message(void);

/**
 * Parses and validates scenario text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VpStatus vp_scenario_parse(const char *text, struct VpScenario **out);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VpStatus vp_scenario_load(const char *path, struct VpScenario **out);

/**
 * # Safety
 * `scenario` must come from `vp_scenario_parse`/`vp_scenario_load` or be null.
 */
void vp_scenario_free(struct VpScenario *scenario);

/**
 * Counts condition clauses by status: passed, failed, and documented
 * deviations.
 *
 * # Safety
 * `scenario` must be a live handle; the output pointers may be null.
 */
enum VpStatus vp_scenario_clause_counts(const struct VpScenario *scenario,
                                        size_t *passed,
                                        size_t *failed,
                                        size_t *deviates);

/**
 * Solves the scenario. When `out_dir` is non-null the output files are
 * written there as well.
 *
 * # Safety
 * `scenario` must be a live handle, `out_dir` null or a NUL-terminated
 * string, and `out` a valid pointer.
 */
enum VpStatus vp_run_execute(const struct VpScenario *scenario,
                             const char *out_dir,
                             struct VpRun **out);

/**
 * # Safety
 * `run` must come from `vp_run_execute` or be null.
 */
void vp_run_free(struct VpRun *run);

/**
 * Number of snapshots in a run, or 0 for a null handle.
 *
 * # Safety
 * `run` must be a live handle or null.
 */
size_t vp_run_snapshot_count(const struct VpRun *run);

/**
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum VpStatus vp_run_row(const struct VpRun *run, size_t index, struct VpDiagnosticsRow *out);

/**
 * Weighted norm `norm_index` (in the order of the scenario's q list) at
 * snapshot `index`.
 *
 * # Safety
 * `run` must be a live handle and `out` a valid pointer.
 */
enum VpStatus vp_run_norm(const struct VpRun *run, size_t index, size_t norm_index, double *out);

/**
 * Summary of the run as a JSON string, released with [`vp_string_free`].
 * Returns null on a null handle.
 *
 * # Safety
 * `run` must be a live handle or null.
 */
char *vp_run_summary_json(const struct VpRun *run);

/**
 * # Safety
 * `s` must come from a `vpbound` function returning an owned string, or be
 * null.
 */
void vp_string_free(char *s);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum VpStatus vp_choose_exponents(double q, struct VpExponents *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum VpStatus vp_sigma_ugly_integral(double p, double r, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VPBOUND_H */
