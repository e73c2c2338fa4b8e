#ifndef DUALQSS_H
#define DUALQSS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DqMode {
  DQ_MODE_FIXED = 0,
  DQ_MODE_QSS1 = 1,
  DQ_MODE_AB2 = 2,
  DQ_MODE_AB2_ADAPTIVE = 3,
} DqMode;

typedef enum DqStatus {
  DQ_STATUS_OK = 0,
  DQ_STATUS_NULL_POINTER = 1,
  DQ_STATUS_INVALID_ARGUMENT = 2,
  DQ_STATUS_IO = 3,
  DQ_STATUS_PARSE = 4,
  DQ_STATUS_DATA = 5,
  DQ_STATUS_POWER_FLOW = 6,
  DQ_STATUS_TOPOLOGY = 7,
  DQ_STATUS_SCHEDULE = 8,
  DQ_STATUS_INVALID_CONFIG = 9,
  DQ_STATUS_NO_CONVERGENCE = 10,
  DQ_STATUS_GRID = 11,
  DQ_STATUS_NOT_ADAPTIVE = 12,
  DQ_STATUS_INTERNAL = 13,
} DqStatus;

/**
 * Opaque scenario handle.
 */
typedef struct DqScenario DqScenario;

/**
 * Opaque trajectory handle.
 */
typedef struct DqTrajectory DqTrajectory;

/**
 * Solver parameters. Fields that do not apply to `mode` are ignored; for
 * the adaptive mode a NaN field takes the library default.
 */
typedef struct DqSolverParams {
  enum DqMode mode;
  double dt;
  double dq;
  double tol;
  double alpha;
  double beta;
  double dq_init;
  double dq_max;
} DqSolverParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *dq_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dq_version(void);

/**
 * Parameters with every field NaN except `mode`.
 */
struct DqSolverParams dq_solver_params_default(enum DqMode mode);

/**
 * Loads and validates a scenario TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DqStatus dq_scenario_load(const char *path, struct DqScenario **out);

/**
 * # Safety
 * `scenario` must come from [`dq_scenario_load`] and not be freed twice.
 */
void dq_scenario_free(struct DqScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
double dq_scenario_horizon(const struct DqScenario *scenario);

/**
 * Simulates `scenario` from its initial equilibrium.
 *
 * # Safety
 * `scenario` must be a live handle, `params` readable and `out` writable.
 */
enum DqStatus dq_simulate(const struct DqScenario *scenario,
                          const struct DqSolverParams *params,
                          struct DqTrajectory **out);

/**
 * # Safety
 * `traj` must come from [`dq_simulate`] and not be freed twice.
 */
void dq_trajectory_free(struct DqTrajectory *traj);

/**
 * Number of stored points (accepted steps + 1), or 0 for NULL.
 *
 * # Safety
 * `traj` must be a live handle or NULL.
 */
size_t dq_trajectory_len(const struct DqTrajectory *traj);

/**
 * Number of differential states, or 0 for NULL.
 *
 * # Safety
 * `traj` must be a live handle or NULL.
 */
size_t dq_trajectory_n_states(const struct DqTrajectory *traj);

/**
 * Time, step length and (adaptive runs only, else NaN) quantum of point `k`.
 * Any output pointer may be NULL.
 *
 * # Safety
 * `traj` must be a live handle; non-NULL outputs must be writable.
 */
enum DqStatus dq_trajectory_point(const struct DqTrajectory *traj,
                                  size_t k,
                                  double *t,
                                  double *dt,
                                  double *quantum);

/**
 * Copies the `n` differential states of point `k` into `x`.
 *
 * # Safety
 * `traj` must be a live handle and `x` must hold `len` doubles.
 */
enum DqStatus dq_trajectory_states(const struct DqTrajectory *traj,
                                   size_t k,
                                   double *x,
                                   size_t len);

/**
 * Writes the trajectory as CSV.
 *
 * # Safety
 * `traj` must be a live handle and `path` a NUL-terminated string.
 */
enum DqStatus dq_trajectory_save(const struct DqTrajectory *traj, const char *path);

/**
 * Time-averaged absolute error of state `index` of `candidate` against
 * `reference`, evaluated on the reference grid.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
enum DqStatus dq_avg_state_error(const struct DqTrajectory *candidate,
                                 const struct DqTrajectory *reference,
                                 size_t index,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALQSS_H */
