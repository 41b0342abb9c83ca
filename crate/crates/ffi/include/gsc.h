#ifndef GSC_H
#define GSC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  GSC_STATUS_OK = 0,
  GSC_STATUS_NULL_POINTER = 1,
  GSC_STATUS_INVALID_ARGUMENT = 2,
  GSC_STATUS_INVALID_PARAMS = 3,
  GSC_STATUS_TOO_MANY_HIDDEN = 4,
  GSC_STATUS_NUMERICAL = 5,
  GSC_STATUS_IO = 6,
  GSC_STATUS_PANIC = 7,
} GscStatus;

/**
 * Observations, one row per data point.
 */
typedef struct GscDataset GscDataset;

/**
 * Best run of a multi-restart fit.
 */
typedef struct GscFitResult GscFitResult;

/**
 * Model parameters `W` (D×H), `Sigma` (D×D) and `pi` (H).
 */
typedef struct GscParams GscParams;

/**
 * Settings for [`gsc_fit`]; obtain defaults from [`gsc_fit_options_default`].
 */
typedef struct {
  size_t hidden;
  size_t max_iters;
  double rel_tol;
  /**
   * Non-zero constrains Sigma to a multiple of the identity.
   */
  int isotropic_sigma;
  /**
   * Zero keeps pi at its initial value.
   */
  int update_pi;
  uint64_t seed;
} GscFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *gsc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gsc_version(void);

/**
 * Creates a parameter handle from row-major `w` (d×h), `sigma` (d×d) and `pi` (h).
 *
 * # Safety
 * The arrays must hold at least the stated number of values; `out` must be
 * a valid pointer.
 */
GscStatus gsc_params_new(size_t d,
                         size_t h,
                         const double *w,
                         const double *sigma,
                         const double *pi,
                         GscParams **out);

/**
 * Releases a parameter handle; null is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void gsc_params_free(GscParams *p);

/**
 * Writes the observed dimension D and the hidden dimension H.
 *
 * # Safety
 * All pointers must be valid.
 */
GscStatus gsc_params_dims(const GscParams *p, size_t *d, size_t *h);

/**
 * Copies `W` row-major into `out`, which must hold exactly D·H values.
 *
 * # Safety
 * `out` must point to `len` writable values.
 */
GscStatus gsc_params_copy_w(const GscParams *p, double *out, size_t len);

/**
 * Copies `Sigma` row-major into `out`, which must hold exactly D·D values.
 *
 * # Safety
 * `out` must point to `len` writable values.
 */
GscStatus gsc_params_copy_sigma(const GscParams *p, double *out, size_t len);

/**
 * Copies `pi` into `out`, which must hold exactly H values.
 *
 * # Safety
 * `out` must point to `len` writable values.
 */
GscStatus gsc_params_copy_pi(const GscParams *p, double *out, size_t len);

/**
 * Creates a dataset from `n` row-major observations of dimension `d`.
 *
 * # Safety
 * `y` must hold `n·d` values; `out` must be a valid pointer.
 */
GscStatus gsc_dataset_new(size_t n, size_t d, const double *y, GscDataset **out);

/**
 * Releases a dataset handle; null is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void gsc_dataset_free(GscDataset *p);

/**
 * Writes the number of points N and the dimension D.
 *
 * # Safety
 * All pointers must be valid.
 */
GscStatus gsc_dataset_dims(const GscDataset *p, size_t *n, size_t *d);

/**
 * Copies the observations row-major into `out` (exactly N·D values).
 *
 * # Safety
 * `out` must point to `len` writable values.
 */
GscStatus gsc_dataset_copy_y(const GscDataset *p, double *out, size_t len);

/**
 * Draws `n` points from the model; deterministic given `seed`.
 *
 * # Safety
 * `params` must be a live handle and `out` a valid pointer.
 */
GscStatus gsc_sample(const GscParams *params, size_t n, uint64_t seed, GscDataset **out);

/**
 * Total log-likelihood of the dataset under the model.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
GscStatus gsc_log_likelihood(const GscParams *params, const GscDataset *data, double *out);

/**
 * Posterior moments of one observation `y` (length D): `es` and `esz`
 * (H values each), `eszsz` (H·H row-major) and the log-likelihood.
 *
 * # Safety
 * Buffers must hold the stated number of values; `log_lik` may be null.
 */
GscStatus gsc_point_moments(const GscParams *params,
                            const double *y,
                            size_t d,
                            double *es,
                            double *esz,
                            double *eszsz,
                            double *log_lik);

/**
 * Default fit settings for `hidden` units: 300 iterations, relative
 * tolerance 1e-8, full Sigma, learned pi, seed 0.
 */
GscFitOptions gsc_fit_options_default(size_t hidden);

/**
 * Runs `restarts` EM fits and returns the one with the highest likelihood.
 *
 * # Safety
 * Handles must be live and pointers valid.
 */
GscStatus gsc_fit(const GscDataset *data,
                  const GscFitOptions *options,
                  size_t restarts,
                  GscFitResult **out);

/**
 * Releases a fit result; null is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void gsc_fit_result_free(GscFitResult *p);

/**
 * New parameter handle holding the learned parameters.
 *
 * # Safety
 * `r` must be live and `out` valid.
 */
GscStatus gsc_fit_result_params(const GscFitResult *r, GscParams **out);

/**
 * Final log-likelihood, restart index and iteration count of the run.
 *
 * # Safety
 * `r` must be live; output pointers may be null.
 */
GscStatus gsc_fit_result_summary(const GscFitResult *r,
                                 double *log_lik,
                                 size_t *restart,
                                 size_t *iterations);

/**
 * Length of the log-likelihood trace (initial value plus one per iteration).
 *
 * # Safety
 * Pointers must be valid.
 */
GscStatus gsc_fit_result_trace_len(const GscFitResult *r, size_t *len);

/**
 * Copies the log-likelihood trace into `out` (exactly the trace length).
 *
 * # Safety
 * `out` must point to `len` writable values.
 */
GscStatus gsc_fit_result_copy_trace(const GscFitResult *r, double *out, size_t len);

/**
 * Amari index between row-major `w` and `w_gen`, both d×h with d ≥ h.
 *
 * # Safety
 * Both arrays must hold `d·h` values; `out` must be valid.
 */
GscStatus gsc_amari_index(const double *w, const double *w_gen, size_t d, size_t h, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSC_H */
