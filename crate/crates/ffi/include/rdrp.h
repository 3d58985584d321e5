#ifndef RDRP_H
#define RDRP_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RdrpForm {
  RDRP_FORM_PRODUCT = 0,
  RDRP_FORM_RATIO = 1,
  RDRP_FORM_SUM = 2,
  RDRP_FORM_IDENTITY = 3,
} RdrpForm;

typedef enum RdrpStatus {
  RDRP_STATUS_OK = 0,
  RDRP_STATUS_NULL_POINTER = 1,
  RDRP_STATUS_INVALID_ARGUMENT = 2,
  RDRP_STATUS_SHAPE_MISMATCH = 3,
  RDRP_STATUS_IO = 4,
  RDRP_STATUS_FORMAT = 5,
  RDRP_STATUS_ASSUMPTION_VIOLATION = 6,
  RDRP_STATUS_DEGENERATE = 7,
  RDRP_STATUS_CALIBRATION_DEGENERATE = 8,
  RDRP_STATUS_SIZE_LIMIT = 9,
  RDRP_STATUS_PANIC = 10,
} RdrpStatus;

/**
 * A frozen conformal calibration.
 */
typedef struct RdrpCalibration RdrpCalibration;

/**
 * A trained network.
 */
typedef struct RdrpModel RdrpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *rdrp_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed, or be null.
 */
void rdrp_string_free(char *s);

/**
 * Loads a weight file written by `rdrp train` or [`rdrp_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RdrpStatus rdrp_model_load(const char *path, struct RdrpModel **out);

/**
 * Trains a DRP network on an RCT sample. `t[i]` is nonzero for treated rows.
 *
 * # Safety
 * `x` holds `n * d` values; `t`, `y_r`, `y_c` hold `n` values; `out` must
 * be writable.
 */
enum RdrpStatus rdrp_model_train(const double *x,
                                 const uint8_t *t,
                                 const double *y_r,
                                 const double *y_c,
                                 size_t n,
                                 size_t d,
                                 size_t epochs,
                                 size_t hidden,
                                 double learning_rate,
                                 uint64_t seed,
                                 struct RdrpModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum RdrpStatus rdrp_model_save(const struct RdrpModel *model, const char *path);

/**
 * Feature dimension the model expects, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t rdrp_model_input_dim(const struct RdrpModel *model);

/**
 * Hidden width of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t rdrp_model_hidden(const struct RdrpModel *model);

/**
 * Deterministic ROI predictions for `n` rows.
 *
 * # Safety
 * `x` holds `n * d` values and `out` has room for `n`.
 */
enum RdrpStatus rdrp_model_predict(const struct RdrpModel *model,
                                   const double *x,
                                   size_t n,
                                   size_t d,
                                   double *out);

/**
 * # Safety
 * `model` must be a handle from this library, or null. Freeing twice is
 * undefined behavior.
 */
void rdrp_model_free(struct RdrpModel *model);

/**
 * Fits the conformal calibration of `model` on an RCT calibration sample.
 *
 * # Safety
 * Same layout rules as [`rdrp_model_train`]; `model` must be live.
 */
enum RdrpStatus rdrp_calibration_fit(const struct RdrpModel *model,
                                     const double *x,
                                     const uint8_t *t,
                                     const double *y_r,
                                     const double *y_c,
                                     size_t n,
                                     size_t d,
                                     double alpha,
                                     size_t mc_passes,
                                     double retention,
                                     uint64_t seed,
                                     struct RdrpCalibration **out);

/**
 * Parses a calibration JSON document.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` writable.
 */
enum RdrpStatus rdrp_calibration_from_json(const char *json, struct RdrpCalibration **out);

/**
 * Serializes a calibration; release the string with [`rdrp_string_free`].
 *
 * # Safety
 * `cal` must be live; `out` writable.
 */
enum RdrpStatus rdrp_calibration_to_json(const struct RdrpCalibration *cal, char **out);

/**
 * Conformal quantile (may be `+inf`), or NaN for a null handle.
 *
 * # Safety
 * `cal` must be live or null.
 */
double rdrp_calibration_q_hat(const struct RdrpCalibration *cal);

/**
 * Calibration-set `roi*`, or NaN for a null handle.
 *
 * # Safety
 * `cal` must be live or null.
 */
double rdrp_calibration_roi_star(const struct RdrpCalibration *cal);

/**
 * # Safety
 * `cal` must be live; `out` writable.
 */
enum RdrpStatus rdrp_calibration_form(const struct RdrpCalibration *cal, enum RdrpForm *out);

/**
 * # Safety
 * `cal` must be a handle from this library, or null.
 */
void rdrp_calibration_free(struct RdrpCalibration *cal);

/**
 * Calibrated predictions for `n` rows. Any of the output arrays may be
 * null to skip it; non-null ones need room for `n` values.
 *
 * # Safety
 * `model` and `cal` must be live; `x` holds `n * d` values.
 */
enum RdrpStatus rdrp_predict_calibrated(const struct RdrpModel *model,
                                        const struct RdrpCalibration *cal,
                                        const double *x,
                                        size_t n,
                                        size_t d,
                                        double *roi_hat,
                                        double *r_hat,
                                        double *lo,
                                        double *hi,
                                        double *roi_tilde);

/**
 * Greedy budgeted assignment by true ROI. `z` receives 0/1 per individual.
 *
 * # Safety
 * `tau_r`, `tau_c` and `z` hold `n` values; the totals may be null.
 */
enum RdrpStatus rdrp_greedy_allocate(const double *tau_r,
                                     const double *tau_c,
                                     size_t n,
                                     double budget,
                                     uint8_t *z,
                                     double *total_revenue,
                                     double *total_cost);

/**
 * AUCC of `scores` on an RCT sample.
 *
 * # Safety
 * `scores`, `t`, `y_r`, `y_c` hold `n` values; `out` is writable.
 */
enum RdrpStatus rdrp_aucc(const double *scores,
                          const uint8_t *t,
                          const double *y_r,
                          const double *y_c,
                          size_t n,
                          size_t buckets,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RDRP_H */
