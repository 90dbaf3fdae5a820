#ifndef RHFE_H
#define RHFE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum RhfeStatus {
  RHFE_STATUS_OK = 0,
  RHFE_STATUS_NULL_POINTER = 1,
  RHFE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input failed validation (shapes, assumptions, tuning range, ...).
   */
  RHFE_STATUS_VALIDATION = 3,
  /**
   * The conic solver did not reach an acceptable solution.
   */
  RHFE_STATUS_SOLVER_FAILURE = 4,
  /**
   * File missing, unreadable or malformed.
   */
  RHFE_STATUS_IO = 5,
  RHFE_STATUS_PANIC = 6,
} RhfeStatus;

/**
 * Fault estimator: gain plus residual generator.
 */
typedef struct RhfeEstimator RhfeEstimator;

/**
 * Identified predictor model.
 */
typedef struct RhfeIdentification RhfeIdentification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into the library from the same thread.
 */
const char *rhfe_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rhfe_version(void);

/**
 * Identifies a predictor model of order `p` from fault-free closed-loop
 * data: `y` is `t x n_y`, `u` is `t x n_u`, both row-major.
 * `estimate_feedthrough` != 0 also fits the direct input term.
 *
 * # Safety
 * `y` and `u` must point to `t*n_y` and `t*n_u` doubles; `out` must be writable.
 */
enum RhfeStatus rhfe_identify(const double *y,
                              const double *u,
                              size_t t,
                              size_t n_y,
                              size_t n_u,
                              size_t p,
                              int32_t estimate_feedthrough,
                              struct RhfeIdentification **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RhfeStatus rhfe_identification_load(const char *path, struct RhfeIdentification **out);

/**
 * # Safety
 * `h` must be a live handle; `path` a NUL-terminated string.
 */
enum RhfeStatus rhfe_identification_save(const struct RhfeIdentification *h, const char *path);

/**
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void rhfe_identification_free(struct RhfeIdentification *h);

/**
 * Nominal estimator from an identified model. `fault` is e.g.
 * `"actuator:1,2"`; `m = 0` uses the identification order.
 *
 * # Safety
 * `ident` must be a live handle, `fault` a NUL-terminated string, `out` writable.
 */
enum RhfeStatus rhfe_design_nominal(const struct RhfeIdentification *ident,
                                    const char *fault,
                                    size_t l,
                                    size_t m,
                                    struct RhfeEstimator **out);

/**
 * Offline robust estimator. Pass NaN for `gamma_f2` / `gamma_z2` to use
 * the default tuning.
 *
 * # Safety
 * As for `rhfe_design_nominal`.
 */
enum RhfeStatus rhfe_design_robust(const struct RhfeIdentification *ident,
                                   const char *fault,
                                   size_t l,
                                   size_t m,
                                   double gamma_f2,
                                   double gamma_z2,
                                   struct RhfeEstimator **out);

/**
 * Nominal estimator from the exact model of a plant file (`"vtol"` for the
 * built-in aircraft model).
 *
 * # Safety
 * `plant` and `fault` must be NUL-terminated strings; `out` writable.
 */
enum RhfeStatus rhfe_design_exact(const char *plant,
                                  const char *fault,
                                  size_t l,
                                  size_t m,
                                  struct RhfeEstimator **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum RhfeStatus rhfe_estimator_load(const char *path, struct RhfeEstimator **out);

/**
 * # Safety
 * `h` must be a live handle; `path` a NUL-terminated string.
 */
enum RhfeStatus rhfe_estimator_save(const struct RhfeEstimator *h, const char *path);

/**
 * # Safety
 * `h` must be NULL or a handle not yet freed.
 */
void rhfe_estimator_free(struct RhfeEstimator *h);

/**
 * Horizon, channel counts and delay of an estimator. Any output pointer
 * may be NULL.
 *
 * # Safety
 * `h` must be a live handle; non-NULL outputs must be writable.
 */
enum RhfeStatus rhfe_estimator_dims(const struct RhfeEstimator *h,
                                    size_t *l,
                                    size_t *n_y,
                                    size_t *n_u,
                                    size_t *n_f,
                                    size_t *tau);

/**
 * Fault estimate for one window. `y_win` is `L x n_y` and `u_win` is
 * `L x n_u`, oldest sample first; writes `n_f` values to `f_hat`, the
 * estimate of `f(k - tau)` where `k` is the newest sample.
 *
 * # Safety
 * Array sizes must match the estimator dimensions.
 */
enum RhfeStatus rhfe_estimator_estimate(const struct RhfeEstimator *h,
                                        const double *y_win,
                                        const double *u_win,
                                        double *f_hat);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RHFE_H */
