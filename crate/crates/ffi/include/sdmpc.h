#ifndef SDMPC_H
#define SDMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SdmpcStatus {
  SDMPC_STATUS_OK = 0,
  SDMPC_STATUS_NULL_POINTER = 1,
  SDMPC_STATUS_INVALID_ARGUMENT = 2,
  SDMPC_STATUS_CONFIG = 3,
  SDMPC_STATUS_DOMAIN = 4,
  SDMPC_STATUS_INFEASIBLE_OCP = 5,
  SDMPC_STATUS_CONSTRAINT_ACTIVE = 6,
  SDMPC_STATUS_DIVERGENCE = 7,
  SDMPC_STATUS_NOT_STABILIZABLE = 8,
  SDMPC_STATUS_NUMERICAL = 9,
  SDMPC_STATUS_IO = 10,
  SDMPC_STATUS_PANIC = 11,
} SdmpcStatus;

/**
 * A plant: dynamics, constraints and stage cost.
 */
typedef struct SdmpcPlant SdmpcPlant;

/**
 * A finished closed-loop simulation.
 */
typedef struct SdmpcRun SdmpcRun;

/**
 * Closed-loop simulation parameters.
 */
typedef struct SdmpcMpcParams {
  double delta;
  size_t substeps;
  size_t horizon_steps;
  double t_sim;
  double goal_radius;
} SdmpcMpcParams;

/**
 * Horizon condition evaluated at `(delta, n)`.
 */
typedef struct SdmpcCertificate {
  double delta;
  size_t n;
  double horizon;
  double gamma;
  double m;
  double c;
  double beta;
  double cbar;
  double condition_lhs;
  double alpha;
  bool passes;
} SdmpcCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sdmpc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdmpc_version(void);

/**
 * Creates a plant from the built-in registry (`"double_integrator"`,
 * `"scalar_unstable"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SdmpcStatus sdmpc_plant_from_registry(const char *name, struct SdmpcPlant **out);

/**
 * Creates a plant from the `[system]`, `[constraints]` and `[cost]`
 * sections of a TOML document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SdmpcStatus sdmpc_plant_from_toml(const char *toml, struct SdmpcPlant **out);

/**
 * Releases a plant; null is ignored.
 *
 * # Safety
 * `plant` must be null or a handle not yet freed.
 */
void sdmpc_plant_free(struct SdmpcPlant *plant);

/**
 * State dimension, 0 for a null handle.
 *
 * # Safety
 * `plant` must be null or a valid handle.
 */
size_t sdmpc_plant_state_dim(const struct SdmpcPlant *plant);

/**
 * Input dimension, 0 for a null handle.
 *
 * # Safety
 * `plant` must be null or a valid handle.
 */
size_t sdmpc_plant_input_dim(const struct SdmpcPlant *plant);

/**
 * Riccati solution `P` (`n×n`, row-major), LQR gain `F` (`m×n`,
 * row-major, `u = Fx`) and `γ = σmax(P)/σmin(Q)`. Any output may be null.
 *
 * # Safety
 * Non-null outputs must hold `n²`, `m·n` and one double respectively.
 */
enum SdmpcStatus sdmpc_lq_constants(const struct SdmpcPlant *plant,
                                    double *p_out,
                                    double *gain_out,
                                    double *gamma_out);

/**
 * Default simulation parameters: `δ = 0.1`, 10 substeps, `N = 4`,
 * 40 s, goal radius `1e-2`.
 */
struct SdmpcMpcParams sdmpc_mpc_params_default(void);

/**
 * Simulates the receding-horizon closed loop from `x0`.
 *
 * # Safety
 * `x0` must hold `x0_len` doubles, `params` and `out` must be valid.
 */
enum SdmpcStatus sdmpc_run_mpc(const struct SdmpcPlant *plant,
                               const double *x0,
                               size_t x0_len,
                               const struct SdmpcMpcParams *params,
                               struct SdmpcRun **out);

/**
 * Releases a run; null is ignored.
 *
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void sdmpc_run_free(struct SdmpcRun *run);

/**
 * Whether the run reached the goal radius without constraint violation.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
bool sdmpc_run_success(const struct SdmpcRun *run);

/**
 * Distance of the last sampled state from the equilibrium; NaN for null.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
double sdmpc_run_final_distance(const struct SdmpcRun *run);

/**
 * Largest node constraint residual of the run; NaN for null.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
double sdmpc_run_max_violation(const struct SdmpcRun *run);

/**
 * Number of sampling instants at which an OCP was solved.
 *
 * # Safety
 * `run` must be null or a valid handle.
 */
size_t sdmpc_run_num_samples(const struct SdmpcRun *run);

/**
 * Time, state and OCP value at sampling instant `k`.
 *
 * # Safety
 * `state_out` must hold `state_len` doubles; `time_out` and `value_out`
 * may be null.
 */
enum SdmpcStatus sdmpc_run_sample(const struct SdmpcRun *run,
                                  size_t k,
                                  double *time_out,
                                  double *state_out,
                                  size_t state_len,
                                  double *value_out);

/**
 * Smallest `N ≤ n_max` whose closed loop succeeds; writes 0 when none does.
 * `params.horizon_steps` is ignored.
 *
 * # Safety
 * `x0` must hold `x0_len` doubles, `params` and `n_out` must be valid.
 */
enum SdmpcStatus sdmpc_smallest_horizon(const struct SdmpcPlant *plant,
                                        const double *x0,
                                        size_t x0_len,
                                        const struct SdmpcMpcParams *params,
                                        size_t n_max,
                                        size_t *n_out);

/**
 * Evaluates the horizon condition for `(γ, M, C, C̄, δ)` at `n`.
 *
 * # Safety
 * `out` must be valid.
 */
enum SdmpcStatus sdmpc_check_condition(double gamma,
                                       double m,
                                       double c,
                                       double cbar,
                                       double delta,
                                       size_t n,
                                       struct SdmpcCertificate *out);

/**
 * Smallest horizon passing the condition for `(γ, M, C, C̄, δ)`.
 *
 * # Safety
 * `n_out` must be valid.
 */
enum SdmpcStatus sdmpc_min_horizon(double gamma,
                                   double m,
                                   double c,
                                   double cbar,
                                   double delta,
                                   size_t *n_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDMPC_H */
