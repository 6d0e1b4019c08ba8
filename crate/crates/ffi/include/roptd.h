#ifndef ROPTD_H
#define ROPTD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum RoptdStatus {
  ROPTD_STATUS_OK = 0,
  /**
   * The solve finished but the optimality check failed; the solution is still returned.
   */
  ROPTD_STATUS_NOT_CONVERGED = 1,
  ROPTD_STATUS_NULL_POINTER = 2,
  ROPTD_STATUS_INVALID_UTF8 = 3,
  ROPTD_STATUS_CONFIG = 4,
  ROPTD_STATUS_INVALID_MODEL = 5,
  ROPTD_STATUS_SINGULAR_INFORMATION = 6,
  ROPTD_STATUS_INVALID_WEIGHTS = 7,
  ROPTD_STATUS_INVALID_OPTIONS = 8,
  ROPTD_STATUS_SYMMETRY = 9,
  ROPTD_STATUS_TOO_FEW_RUNS = 10,
  ROPTD_STATUS_BUFFER_TOO_SMALL = 11,
  ROPTD_STATUS_IO = 12,
  ROPTD_STATUS_PANIC = 13,
} RoptdStatus;

typedef enum RoptdAlgorithm {
  ROPTD_ALGORITHM_INTERIOR = 0,
  ROPTD_ALGORITHM_MULTIPLICATIVE = 1,
} RoptdAlgorithm;

/**
 * A parsed problem configuration.
 */
typedef struct RoptdProblem RoptdProblem;

/**
 * A solved design with its report.
 */
typedef struct RoptdSolution RoptdSolution;

/**
 * Per-run overrides. Fill with [`roptd_run_options_default`] first.
 */
typedef struct RoptdRunOptions {
  enum RoptdAlgorithm algorithm;
  /**
   * Use the correlation matrix R0 (true) or the covariance V0 (false).
   */
  bool use_correlation;
  /**
   * Apply the reflection axes declared in the config.
   */
  bool use_symmetry;
  /**
   * Tolerance on max d.
   */
  double delta;
  /**
   * Threads for the sensitivity sweep; results do not depend on it.
   */
  uint32_t threads;
} RoptdRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *roptd_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library from the same thread.
 */
const char *roptd_last_error(void);

/**
 * Parses a TOML problem configuration.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RoptdStatus roptd_problem_from_config(const char *config, struct RoptdProblem **out);

/**
 * # Safety
 * `problem` must come from [`roptd_problem_from_config`] and not be used afterwards.
 */
void roptd_problem_free(struct RoptdProblem *problem);

/**
 * Number of candidate points, or 0 for a null handle.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t roptd_problem_num_points(const struct RoptdProblem *problem);

/**
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t roptd_problem_num_factors(const struct RoptdProblem *problem);

/**
 * Number of regression parameters `q`.
 *
 * # Safety
 * `problem` must be null or a live handle.
 */
size_t roptd_problem_num_params(const struct RoptdProblem *problem);

/**
 * Copies the coordinates of point `index` into `coords[0..len]`.
 *
 * # Safety
 * `problem` must be a live handle and `coords` valid for `len` doubles.
 */
enum RoptdStatus roptd_problem_point(const struct RoptdProblem *problem,
                                     size_t index,
                                     double *coords,
                                     size_t len);

/**
 * Fills `out` with the run options the config implies.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum RoptdStatus roptd_run_options_default(const struct RoptdProblem *problem,
                                           struct RoptdRunOptions *out);

/**
 * Solves the problem. `options` may be null for the config defaults.
 *
 * Returns `Ok` or `NotConverged`; in both cases `*out` receives a solution.
 *
 * # Safety
 * `problem` must be a live handle, `options` null or valid, `out` valid.
 */
enum RoptdStatus roptd_solve(const struct RoptdProblem *problem,
                             const struct RoptdRunOptions *options,
                             struct RoptdSolution **out);

/**
 * # Safety
 * `solution` must come from [`roptd_solve`] and not be used afterwards.
 */
void roptd_solution_free(struct RoptdSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
bool roptd_solution_converged(const struct RoptdSolution *solution);

/**
 * `Σ_r log A_rr` at the solution; NaN for a null handle.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
double roptd_solution_loss(const struct RoptdSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
double roptd_solution_max_d(const struct RoptdSolution *solution);

/**
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t roptd_solution_num_points(const struct RoptdSolution *solution);

/**
 * Copies all weights (candidate-point order) into `weights[0..len]`.
 *
 * # Safety
 * `solution` must be a live handle and `weights` valid for `len` doubles.
 */
enum RoptdStatus roptd_solution_weights(const struct RoptdSolution *solution,
                                        double *weights,
                                        size_t len);

/**
 * Number of support points (lexicographically ordered).
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
size_t roptd_solution_num_support(const struct RoptdSolution *solution);

/**
 * Coordinates and weight of support point `k`.
 *
 * # Safety
 * `solution` must be a live handle, `coords` valid for `len` doubles and
 * `weight` a valid pointer.
 */
enum RoptdStatus roptd_solution_support_point(const struct RoptdSolution *solution,
                                              size_t k,
                                              double *coords,
                                              size_t len,
                                              double *weight);

/**
 * The JSON report; owned by the solution and valid until it is freed.
 *
 * # Safety
 * `solution` must be null or a live handle.
 */
const char *roptd_solution_report_json(const struct RoptdSolution *solution);

/**
 * Equivalence check of `weights[0..len]` (renormalized if off the simplex).
 *
 * # Safety
 * `problem` must be a live handle, `weights` valid for `len` doubles,
 * `options` null or valid, `max_d` and `optimal` valid pointers.
 */
enum RoptdStatus roptd_verify(const struct RoptdProblem *problem,
                              const double *weights,
                              size_t len,
                              const struct RoptdRunOptions *options,
                              double *max_d,
                              bool *optimal);

/**
 * Rounds `weights[0..len]` to `runs` runs; `counts[0..len]` receives the result.
 * Points with weight at most `threshold` get no runs.
 *
 * # Safety
 * `weights` and `counts` must be valid for `len` elements.
 */
enum RoptdStatus roptd_round(const double *weights,
                             size_t len,
                             size_t runs,
                             double threshold,
                             size_t *counts);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROPTD_H */
