#ifndef SELFI_H
#define SELFI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SelfiStatus {
  SELFI_STATUS_OK = 0,
  SELFI_STATUS_NULL_POINTER = 1,
  SELFI_STATUS_INVALID_ARGUMENT = 2,
  SELFI_STATUS_IO = 3,
  SELFI_STATUS_FORMAT = 4,
  SELFI_STATUS_DIM_MISMATCH = 5,
  SELFI_STATUS_DEGENERATE = 6,
  SELFI_STATUS_PANIC = 7,
} SelfiStatus;

/**
 * Model variants.
 */
typedef enum SelfiMode {
  SELFI_MODE_BASELINE_VISUAL = 0,
  SELFI_MODE_IDENTITY_PROBE = 1,
  SELFI_MODE_FAIA_CONCAT = 2,
  SELFI_MODE_FAIA_IAFM = 3,
  SELFI_MODE_FULL_SELFI = 4,
} SelfiMode;

/**
 * Opaque embedding dataset.
 */
typedef struct SelfiDataset SelfiDataset;

/**
 * Opaque trained model.
 */
typedef struct SelfiModel SelfiModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *selfi_version(void);

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *selfi_last_error(void);

/**
 * Reads a `.semb` file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SelfiStatus selfi_dataset_read(const char *path, struct SelfiDataset **out);

/**
 * Releases a dataset handle; null is ignored.
 *
 * # Safety
 * `ds` must come from [`selfi_dataset_read`] and not be used afterwards.
 */
void selfi_dataset_free(struct SelfiDataset *ds);

/**
 * # Safety
 * Pointers must be valid; `ds` must be a live handle.
 */
enum SelfiStatus selfi_dataset_len(const struct SelfiDataset *ds, size_t *out);

/**
 * # Safety
 * Pointers must be valid; `ds` must be a live handle.
 */
enum SelfiStatus selfi_dataset_dims(const struct SelfiDataset *ds,
                                    size_t *d_id,
                                    size_t *d_backbone);

/**
 * Reads a `.sckpt` file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SelfiStatus selfi_model_read(const char *path, struct SelfiModel **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`selfi_model_read`] and not be used afterwards.
 */
void selfi_model_free(struct SelfiModel *model);

/**
 * # Safety
 * Pointers must be valid; `model` must be a live handle.
 */
enum SelfiStatus selfi_model_info(const struct SelfiModel *model,
                                  enum SelfiMode *mode,
                                  size_t *d_id,
                                  size_t *d_backbone,
                                  size_t *h_rel);

/**
 * Scores one sample. `*score` receives the fake-class probability and
 * `*rho` the relevance score, or NaN for modes without a relevance
 * predictor. `rho` may be null.
 *
 * # Safety
 * `f_id` and `f_vis` must point to `d_id` and `d_backbone` doubles.
 */
enum SelfiStatus selfi_model_predict(const struct SelfiModel *model,
                                     const double *f_id,
                                     size_t d_id,
                                     const double *f_vis,
                                     size_t d_backbone,
                                     double *score,
                                     double *rho);

/**
 * Frame-level AUC of `model` on `ds`, and video-level AUC (NaN when the
 * dataset has no group ids). `video_auc` may be null.
 *
 * # Safety
 * Pointers must be valid; handles must be live.
 */
enum SelfiStatus selfi_model_evaluate(const struct SelfiModel *model,
                                      const struct SelfiDataset *ds,
                                      double *frame_auc,
                                      double *video_auc);

/**
 * ROC-AUC of `n` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements.
 */
enum SelfiStatus selfi_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELFI_H */
