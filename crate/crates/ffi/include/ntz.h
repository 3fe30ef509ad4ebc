#ifndef NTZ_H
#define NTZ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NtzStatus {
  NTZ_STATUS_OK = 0,
  NTZ_STATUS_NULL_POINTER = 1,
  NTZ_STATUS_DOMAIN = 2,
  NTZ_STATUS_PARAMETER = 3,
  NTZ_STATUS_UNSUPPORTED_REGION = 4,
  NTZ_STATUS_NON_TERMINATION = 5,
  NTZ_STATUS_SINGULARITY = 6,
  NTZ_STATUS_CONVERGENCE = 7,
  NTZ_STATUS_TRUNCATION = 8,
  NTZ_STATUS_INFEASIBLE = 9,
  NTZ_STATUS_BUFFER_TOO_SMALL = 10,
  NTZ_STATUS_NO_SOLUTION = 11,
  NTZ_STATUS_PANIC = 12,
} NtzStatus;

/**
 * Opaque solver handle holding its configuration and the last solution.
 */
typedef struct NtzSolver NtzSolver;

/**
 * Plain-data subset of the solver settings; the damping schedule keeps its default.
 */
typedef struct NtzSolverConfig {
  double x_max;
  /**
   * Odd, at least 201.
   */
  size_t n_grid;
  double fp_tol;
  size_t max_iter;
  /**
   * Nonzero to widen `x_max` automatically when the kernel tail would be cut.
   */
  int32_t extend_domain;
} NtzSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Null-terminated version string with static lifetime.
 */
const char *ntz_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the terminator; 0 if none.
 */
size_t ntz_last_error_length(void);

/**
 * Copy the last error message (null-terminated) into `buf` of capacity `len`.
 *
 * # Safety
 * `buf` must be valid for `len` bytes of writes.
 */
enum NtzStatus ntz_last_error_message(char *buf, size_t len);

/**
 * `K(0, η) = 2ρ f(η)`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_k_axis(double eta, double rho, double *out);

/**
 * `K₀(α, η)`, the correlation without the hysteresis correction.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_k0(double alpha, double eta, double rho, double *out);

/**
 * First hysteresis correction `E₀(α, η)`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_e0(double alpha, double eta, double rho, double *out);

/**
 * `H(0, η) = 1/F(−η)`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_survival_at0(double eta, double *out);

/**
 * Gradient of `K` at `(0, η)`.
 *
 * # Safety
 * `d_alpha` and `d_eta` must be null or valid for writes.
 */
enum NtzStatus ntz_grad_k_at0(double eta, double rho, double *d_alpha, double *d_eta);

/**
 * Gradient of `H` at `(0, η)`.
 *
 * # Safety
 * `d_alpha` and `d_eta` must be null or valid for writes.
 */
enum NtzStatus ntz_grad_survival_at0(double eta, double *d_alpha, double *d_eta);

/**
 * Multiplier `λ` with `∇H = λ∇K` at `(0, η)`; `Singularity` at `η = 0`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_lagrange_lambda(double eta, double rho, double *out);

/**
 * Second derivative of `H` along the level curve of `K` through `(0, η)`.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_constrained_second_derivative(double eta, double rho, double *out);

/**
 * # Safety
 * `out` must be null or valid for writes.
 */
enum NtzStatus ntz_improvement_ratio(double alpha, double eta, double *out);

/**
 * Batch-means Monte Carlo estimate of `K` from one path of `steps` periods.
 *
 * # Safety
 * `mean` and `stderr` must be null or valid for writes.
 */
enum NtzStatus ntz_estimate_k_mc(double rho,
                                 double alpha,
                                 double eta,
                                 size_t steps,
                                 uint64_t seed,
                                 double *mean,
                                 double *stderr);

/**
 * Monte Carlo estimate of `H` from `n` independent survival times.
 *
 * # Safety
 * `mean` and `stderr` must be null or valid for writes.
 */
enum NtzStatus ntz_estimate_h_mc(double rho,
                                 double alpha,
                                 double eta,
                                 uint64_t n,
                                 uint64_t seed,
                                 double *mean,
                                 double *stderr);

struct NtzSolverConfig ntz_solver_config_default(void);

/**
 * Create a solver; `config` may be null for defaults. Release with [`ntz_solver_free`].
 *
 * # Safety
 * `config` must be null or point to a valid `NtzSolverConfig`; `out` must be valid for writes.
 */
enum NtzStatus ntz_solver_new(const struct NtzSolverConfig *config, struct NtzSolver **out);

/**
 * Release a solver; null is ignored.
 *
 * # Safety
 * `solver` must be null or a handle from [`ntz_solver_new`] not yet freed.
 */
void ntz_solver_free(struct NtzSolver *solver);

/**
 * Solve for `h` at `(α, η)` and write `H(α, η)`; the grid is kept on the handle.
 *
 * # Safety
 * `solver` must be a live handle; `h_out` must be null or valid for writes.
 */
enum NtzStatus ntz_solver_solve(struct NtzSolver *solver, double alpha, double eta, double *h_out);

/**
 * Number of grid nodes of the last solution.
 *
 * # Safety
 * `solver` must be a live handle; `out` must be null or valid for writes.
 */
enum NtzStatus ntz_solver_grid_len(struct NtzSolver *solver, size_t *out);

/**
 * Copy nodes and values of the last solution into caller buffers of length `len`.
 *
 * # Safety
 * `solver` must be a live handle; `nodes` and `values` must be valid for `len` writes.
 */
enum NtzStatus ntz_solver_copy_grid(struct NtzSolver *solver,
                                    double *nodes,
                                    double *values,
                                    size_t len);

/**
 * Evaluate the last solution `h(x)` at any `x ≥ −η`.
 *
 * # Safety
 * `solver` must be a live handle; `out` must be null or valid for writes.
 */
enum NtzStatus ntz_solver_eval(struct NtzSolver *solver, double x, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NTZ_H */
