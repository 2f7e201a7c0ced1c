#ifndef KSHIFT_H
#define KSHIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KsStatus {
  KS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  KS_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid parameter, configuration or string encoding.
   */
  KS_STATUS_INVALID_ARGUMENT = 2,
  KS_STATUS_INVALID_SHAPE = 3,
  KS_STATUS_IO = 4,
  /**
   * Malformed file contents.
   */
  KS_STATUS_FORMAT = 5,
  /**
   * Metric undefined for the input, e.g. a single class.
   */
  KS_STATUS_UNDEFINED_METRIC = 6,
  KS_STATUS_INVALID_STATE = 7,
  /**
   * Output buffer too small; the required length was written back.
   */
  KS_STATUS_BUFFER_TOO_SMALL = 8,
  KS_STATUS_PANIC = 9,
} KsStatus;

/**
 * Opaque trained classifier.
 */
typedef struct KsModel KsModel;

/**
 * Opaque real-valued tensor.
 */
typedef struct KsTensor KsTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ks_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *ks_version(void);

/**
 * Copies `dims[0..ndim]` and `data[0..prod(dims)]` into a new tensor.
 *
 * # Safety
 * `dims` and `data` must be valid for the stated lengths; `out` writable.
 */
enum KsStatus ks_tensor_new(const size_t *dims,
                            size_t ndim,
                            const double *data,
                            struct KsTensor **out);

/**
 * # Safety
 * `t` must come from this library and not be used afterwards.
 */
void ks_tensor_free(struct KsTensor *t);

/**
 * # Safety
 * `t` must be a live tensor handle.
 */
size_t ks_tensor_ndim(const struct KsTensor *t);

/**
 * Element count.
 *
 * # Safety
 * `t` must be a live tensor handle.
 */
size_t ks_tensor_len(const struct KsTensor *t);

/**
 * Writes up to `cap` dimensions into `dims`.
 *
 * # Safety
 * `dims` must be writable for `cap` elements.
 */
enum KsStatus ks_tensor_dims(const struct KsTensor *t, size_t *dims, size_t cap);

/**
 * Row-major element pointer, valid while the handle lives.
 *
 * # Safety
 * `t` must be a live tensor handle.
 */
const double *ks_tensor_data(const struct KsTensor *t);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` writable.
 */
enum KsStatus ks_tensor_read_mrt1(const char *path, struct KsTensor **out);

/**
 * # Safety
 * `t` must be a live handle; `path` a nul-terminated string.
 */
enum KsStatus ks_tensor_write_mrt1(const struct KsTensor *t, const char *path);

/**
 * Applies an artifact spec given as JSON (e.g.
 * `{"kind":"rician","snr":10,"seed":1}`) to a 2-D image, as item `index`
 * of a dataset.
 *
 * # Safety
 * Pointers must be valid; `out` writable.
 */
enum KsStatus ks_artifact_apply(const char *spec_json,
                                const struct KsTensor *image,
                                uint64_t index,
                                struct KsTensor **out);

/**
 * Writes a phantom dataset directory; `config_json` may be null or a
 * (partial) phantom config object.
 *
 * # Safety
 * Strings must be nul-terminated when non-null.
 */
enum KsStatus ks_phantom_generate(const char *config_json, const char *out_dir);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` must be nul-terminated; `out` writable.
 */
enum KsStatus ks_model_load(const char *dir, struct KsModel **out);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards.
 */
void ks_model_free(struct KsModel *m);

/**
 * Positive-class probabilities for a `[H, W]` image or `[N, H, W]` stack,
 * in eval mode. Writes `N` scores; with `cap < N` nothing is written,
 * `*n_out` receives `N` and `KS_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `scores` must be writable for `cap` values; other pointers valid.
 */
enum KsStatus ks_model_predict(const struct KsModel *m,
                               const struct KsTensor *images,
                               double *scores,
                               size_t cap,
                               size_t *n_out);

/**
 * Number of normalization layers, or 0 for a null handle.
 *
 * # Safety
 * `m` must be a live model handle.
 */
size_t ks_model_num_norm_layers(const struct KsModel *m);

/**
 * AUROC of `scores` against 0/1 `labels`, both of length `n`.
 *
 * # Safety
 * Arrays must be valid for `n` elements; `out` writable.
 */
enum KsStatus ks_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSHIFT_H */
