#ifndef ADELE_H
#define ADELE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an FFI call.
 */
typedef enum AdeleStatus {
  ADELE_STATUS_OK = 0,
  ADELE_STATUS_NULL_POINTER = 1,
  ADELE_STATUS_INVALID_ARGUMENT = 2,
  ADELE_STATUS_SHAPE_MISMATCH = 3,
  ADELE_STATUS_NOT_ENOUGH_DATA = 4,
  ADELE_STATUS_NON_FINITE = 5,
  ADELE_STATUS_INFEASIBLE = 6,
  ADELE_STATUS_BAD_MAGIC = 7,
  ADELE_STATUS_UNSUPPORTED_VERSION = 8,
  ADELE_STATUS_TRUNCATED = 9,
  ADELE_STATUS_COUNT_MISMATCH = 10,
  ADELE_STATUS_CONFIG = 11,
  ADELE_STATUS_MISSING_FILE = 12,
  ADELE_STATUS_IO = 13,
  ADELE_STATUS_JSON = 14,
  ADELE_STATUS_BUFFER_TOO_SMALL = 15,
  ADELE_STATUS_PANIC = 99,
} AdeleStatus;

/**
 * Opaque dataset handle.
 */
typedef struct AdeleDataset AdeleDataset;

/**
 * Opaque handle to a finished training run.
 */
typedef struct AdeleRun AdeleRun;

/**
 * Parameters of a fitted curve `a * (1 - exp(-b * t^c))`.
 */
typedef struct AdeleFit {
  double a;
  double b;
  double c;
  double sse;
  bool converged;
  size_t points_used;
} AdeleFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or an empty string.
 */
const char *adele_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *adele_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void adele_string_free(char *s);

/**
 * `a * (1 - exp(-b * t^c))`.
 */
double adele_curve_value(double a, double b, double c, double t);

/**
 * Fits the curve to `n` points `(t[i], y[i])` with `t >= 1`.
 *
 * # Safety
 * `t` and `y` must point to `n` readable doubles; `out` must be writable.
 */
enum AdeleStatus adele_fit_curve(const double *t,
                                 const double *y,
                                 size_t n,
                                 size_t min_points,
                                 struct AdeleFit *out);

/**
 * Derivative of the fitted curve at `t`.
 *
 * # Safety
 * `fit` must be readable and `out` writable.
 */
enum AdeleStatus adele_curve_derivative(const struct AdeleFit *fit, double t, double *out);

/**
 * Relative change of the slope between epoch 1 and `t`, and whether it exceeds `r`.
 *
 * # Safety
 * `fit` must be readable; `ratio` and `triggered` writable.
 */
enum AdeleStatus adele_check_trigger(const struct AdeleFit *fit,
                                     size_t t,
                                     double r,
                                     double *ratio,
                                     bool *triggered);

/**
 * IoU of `class` between two `h x w` label maps. `defined` is false when the
 * class is absent from both, in which case `out` is left untouched.
 *
 * # Safety
 * `pred` and `reference` must hold `h * w` bytes; `out` and `defined` writable.
 */
enum AdeleStatus adele_iou(const uint8_t *pred,
                           const uint8_t *reference,
                           size_t h,
                           size_t w,
                           uint8_t class_,
                           double *out,
                           bool *defined);

/**
 * Generates a synthetic dataset from a run configuration JSON document
 * (only its `synth` and `noise` sections matter; `{}` gives the defaults).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` writable.
 */
enum AdeleStatus adele_dataset_generate(const char *config_json, struct AdeleDataset **out);

/**
 * Loads a dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` writable.
 */
enum AdeleStatus adele_dataset_load(const char *path, struct AdeleDataset **out);

/**
 * Saves a dataset file.
 *
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
enum AdeleStatus adele_dataset_save(const struct AdeleDataset *ds, const char *path);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must come from this library and not have been freed.
 */
void adele_dataset_free(struct AdeleDataset *ds);

/**
 * Example count, image height, width, channels and class count.
 *
 * # Safety
 * `ds` must be a live handle; every out-pointer writable.
 */
enum AdeleStatus adele_dataset_dims(const struct AdeleDataset *ds,
                                    size_t *examples,
                                    size_t *height,
                                    size_t *width,
                                    size_t *channels,
                                    size_t *classes);

/**
 * Pooled mIoU of the noisy training annotations against the clean masks.
 *
 * # Safety
 * `ds` must be a live handle; `out` writable.
 */
enum AdeleStatus adele_dataset_annotation_miou(const struct AdeleDataset *ds, double *out);

/**
 * Copies image `index` (row-major, channels last) into `buf`.
 *
 * # Safety
 * `ds` must be a live handle and `buf` hold `len` writable doubles.
 */
enum AdeleStatus adele_dataset_copy_image(const struct AdeleDataset *ds,
                                          size_t index,
                                          double *buf,
                                          size_t len);

/**
 * Copies the clean (`noisy == false`) or noisy mask of example `index` into `buf`.
 *
 * # Safety
 * `ds` must be a live handle and `buf` hold `len` writable bytes.
 */
enum AdeleStatus adele_dataset_copy_mask(const struct AdeleDataset *ds,
                                         size_t index,
                                         bool noisy,
                                         uint8_t *buf,
                                         size_t len);

/**
 * Trains one run on `ds` using the `train` section of a run configuration JSON document.
 *
 * # Safety
 * `ds` must be a live handle, `config_json` a NUL-terminated string and `out` writable.
 */
enum AdeleStatus adele_train(const struct AdeleDataset *ds,
                             const char *config_json,
                             struct AdeleRun **out);

/**
 * Releases a run. Null is ignored.
 *
 * # Safety
 * `run` must come from this library and not have been freed.
 */
void adele_run_free(struct AdeleRun *run);

/**
 * Run summary as a JSON object. Free with `adele_string_free`.
 *
 * # Safety
 * `run` must be a live handle; `out` writable.
 */
enum AdeleStatus adele_run_summary_json(const struct AdeleRun *run, char **out);

/**
 * Per-epoch metrics in the CSV layout used on disk. Free with `adele_string_free`.
 *
 * # Safety
 * `run` must be a live handle; `out` writable.
 */
enum AdeleStatus adele_run_metrics_csv(const struct AdeleRun *run, char **out);

/**
 * Validation and test mIoU after the last epoch.
 *
 * # Safety
 * `run` must be a live handle; both out-pointers writable.
 */
enum AdeleStatus adele_run_last_epoch_miou(const struct AdeleRun *run, double *val, double *test);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADELE_H */
