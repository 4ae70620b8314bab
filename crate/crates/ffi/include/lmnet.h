#ifndef LMNET_H
#define LMNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LmnetStatus {
  LMNET_STATUS_OK = 0,
  LMNET_STATUS_INVALID_ARGUMENT = 1,
  LMNET_STATUS_UNKNOWN_SCHEME = 2,
  LMNET_STATUS_CONTRACT = 3,
  LMNET_STATUS_SINGULARITY = 4,
  LMNET_STATUS_DIVERGENCE = 5,
  LMNET_STATUS_IO = 6,
  LMNET_STATUS_PARSE = 7,
  LMNET_STATUS_UNSUPPORTED_ORDER = 8,
  LMNET_STATUS_PANIC = 9,
} LmnetStatus;

/**
 * A trained network.
 */
typedef struct LmnetMlp LmnetMlp;

/**
 * A normalized linear multistep scheme.
 */
typedef struct LmnetScheme LmnetScheme;

/**
 * A vector field with Taylor-mode support.
 */
typedef struct LmnetSystem LmnetSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null after a success.
 * The pointer stays valid until the next call into the library from the same thread.
 */
const char *lmnet_last_error_message(void);

/**
 * Looks up a catalogued scheme by name (`AB1`, `BDF2`, ...) and normalizes it.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum LmnetStatus lmnet_scheme_catalog(const char *name, struct LmnetScheme **out);

/**
 * Builds a scheme from `steps + 1` alphas and betas, oldest first, then normalizes it.
 *
 * # Safety
 * `alphas` and `betas` must point to `steps + 1` doubles; `out` must be writable.
 */
enum LmnetStatus lmnet_scheme_new(const double *alphas,
                                  const double *betas,
                                  size_t steps,
                                  struct LmnetScheme **out);

/**
 * # Safety
 * `scheme` must be null or a handle from this library that has not been freed.
 */
void lmnet_scheme_free(struct LmnetScheme *scheme);

/**
 * Number of steps M, or 0 for a null handle.
 *
 * # Safety
 * `scheme` must be null or a live handle.
 */
size_t lmnet_scheme_steps(const struct LmnetScheme *scheme);

/**
 * Consistency order p, or 0 for a null handle.
 *
 * # Safety
 * `scheme` must be null or a live handle.
 */
size_t lmnet_scheme_order(const struct LmnetScheme *scheme);

/**
 * Writes `xi_0..=xi_k` into `out`, which must hold `k + 1` doubles.
 *
 * # Safety
 * `scheme` must be a live handle and `out` must point to `k + 1` writable doubles.
 */
enum LmnetStatus lmnet_xi_coefficients(const struct LmnetScheme *scheme, size_t k, double *out);

/**
 * Builds one of the systems without parameters: `damped_oscillator` or `lorenz`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum LmnetStatus lmnet_system_builtin(const char *name, struct LmnetSystem **out);

/**
 * Builds a system from its JSON description, e.g. `{"kind":"linear","matrix":[[0,1],[-1,0]]}`.
 * Relative parameter files resolve against the working directory.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum LmnetStatus lmnet_system_from_json(const char *json, struct LmnetSystem **out);

/**
 * # Safety
 * `system` must be null or a live handle.
 */
void lmnet_system_free(struct LmnetSystem *system);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `system` must be null or a live handle.
 */
size_t lmnet_system_dim(const struct LmnetSystem *system);

/**
 * Evaluates `f(x)`. Both arrays have `dim` entries.
 *
 * # Safety
 * `system` must be a live handle; `x` and `out` must point to `dim` doubles.
 */
enum LmnetStatus lmnet_system_eval(const struct LmnetSystem *system,
                                   const double *x,
                                   size_t dim,
                                   double *out);

/**
 * Advances `x` by time `t` with `substeps` classical RK4 steps.
 *
 * # Safety
 * `system` must be a live handle; `x` and `out` must point to `dim` doubles.
 */
enum LmnetStatus lmnet_rk4_flow(const struct LmnetSystem *system,
                                const double *x,
                                size_t dim,
                                double t,
                                size_t substeps,
                                double *out);

/**
 * Evaluates the modified field truncated after `k` terms at `x` for step size `h`.
 *
 * # Safety
 * `scheme` and `system` must be live handles; `x` and `out` must point to `dim` doubles.
 */
enum LmnetStatus lmnet_imde_eval(const struct LmnetScheme *scheme,
                                 const struct LmnetSystem *system,
                                 size_t k,
                                 const double *x,
                                 size_t dim,
                                 double h,
                                 double *out);

/**
 * Loads a checkpoint written by `lmnet train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LmnetStatus lmnet_mlp_load(const char *path, struct LmnetMlp **out);

/**
 * Parses a checkpoint from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum LmnetStatus lmnet_mlp_from_json(const char *json, struct LmnetMlp **out);

/**
 * # Safety
 * `mlp` must be null or a live handle.
 */
void lmnet_mlp_free(struct LmnetMlp *mlp);

/**
 * # Safety
 * `mlp` must be null or a live handle.
 */
size_t lmnet_mlp_input_dim(const struct LmnetMlp *mlp);

/**
 * # Safety
 * `mlp` must be null or a live handle.
 */
size_t lmnet_mlp_output_dim(const struct LmnetMlp *mlp);

/**
 * Runs the network on one input of `in_len` values and writes `out_len` outputs.
 *
 * # Safety
 * `mlp` must be a live handle; `x` and `out` must hold `in_len` and `out_len` doubles.
 */
enum LmnetStatus lmnet_mlp_forward(const struct LmnetMlp *mlp,
                                   const double *x,
                                   size_t in_len,
                                   double *out,
                                   size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMNET_H */
