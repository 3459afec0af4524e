#ifndef OOD_H
#define OOD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum OodStatus {
  OOD_STATUS_OK = 0,
  OOD_STATUS_NULL_POINTER = 1,
  OOD_STATUS_INVALID_ARGUMENT = 2,
  OOD_STATUS_IO = 3,
  OOD_STATUS_FORMAT = 4,
  OOD_STATUS_NUMERICAL = 5,
  OOD_STATUS_PANIC = 6,
} OodStatus;

/**
 * Trained cluster head.
 */
typedef struct OodHead OodHead;

/**
 * Immutable n×d embedding matrix.
 */
typedef struct OodMatrix OodMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The string stays valid until the next failing call on the same thread.
 */
const char *ood_last_error_message(void);

/**
 * Copies `n*d` row-major floats into a new matrix.
 *
 * # Safety
 * `data` must point to `n*d` readable floats; `out` must be writable.
 */
enum OodStatus ood_matrix_from_data(const float *data, size_t n, size_t d, struct OodMatrix **out);

/**
 * Loads an `.emb` file, verifying its checksum and manifest sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OodStatus ood_matrix_load(const char *path, struct OodMatrix **out);

/**
 * Saves a matrix with a manifest sidecar. `split` is one of
 * `train_normal`, `test_in`, `test_out`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `m` must be a live handle.
 */
enum OodStatus ood_matrix_save(const struct OodMatrix *m,
                               const char *path,
                               const char *name,
                               const char *split);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t ood_matrix_rows(const struct OodMatrix *m);

/**
 * Column count, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t ood_matrix_cols(const struct OodMatrix *m);

/**
 * Copies the row-major values into `out`, which must hold `n*d` floats.
 *
 * # Safety
 * `out` must point to `len` writable floats.
 */
enum OodStatus ood_matrix_copy_data(const struct OodMatrix *m, float *out, size_t len);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void ood_matrix_free(struct OodMatrix *m);

/**
 * New matrix with every row scaled to unit norm.
 *
 * # Safety
 * `m` must be a live handle; `out` must be writable.
 */
enum OodStatus ood_l2_normalize(const struct OodMatrix *m, struct OodMatrix **out);

/**
 * Mean of the `k` smallest cosine distances from each test row to the
 * train rows. Both matrices must be L2-normalized.
 *
 * # Safety
 * Handles must be live; `scores` must hold `len >= rows(test)` doubles.
 */
enum OodStatus ood_knn_score(const struct OodMatrix *train,
                             const struct OodMatrix *test,
                             size_t k,
                             double *scores,
                             size_t len);

/**
 * Nearest-cluster Mahalanobis distance with per-cluster covariances
 * fitted on `train` grouped by `labels` (values in `[0, k)`).
 *
 * # Safety
 * `labels` must hold `rows(train)` entries; `scores` must hold
 * `len >= rows(test)` doubles.
 */
enum OodStatus ood_mahalanobis_score(const struct OodMatrix *train,
                                     const size_t *labels,
                                     size_t k,
                                     double shrinkage,
                                     const struct OodMatrix *test,
                                     double *scores,
                                     size_t len);

/**
 * ROC-AUC with out-of-distribution scores as positives, ties counted half.
 *
 * # Safety
 * Score arrays must hold the given counts; `auc` must be writable.
 */
enum OodStatus ood_roc_auc(const double *scores_in,
                           size_t n_in,
                           const double *scores_out,
                           size_t n_out,
                           double *auc);

/**
 * k-means++ seeded Lloyd iterations; writes one label per row.
 *
 * # Safety
 * `m` must be a live handle; `labels` must hold `len >= rows(m)` entries.
 */
enum OodStatus ood_kmeans(const struct OodMatrix *m,
                          size_t k,
                          size_t max_iters,
                          uint64_t seed,
                          size_t *labels,
                          size_t len);

/**
 * Best-bijection matched fraction between two labelings of `n` samples.
 *
 * # Safety
 * `pred` and `truth` must hold `n` entries; `accuracy` must be writable.
 */
enum OodStatus ood_cluster_accuracy(const size_t *pred,
                                    size_t k_pred,
                                    const size_t *truth,
                                    size_t k_truth,
                                    size_t n,
                                    double *accuracy);

/**
 * Loads a head checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum OodStatus ood_head_load(const char *path, struct OodHead **out);

/**
 * Writes `[input, hidden, classes]` into `dims`.
 *
 * # Safety
 * `dims` must point to 3 writable entries.
 */
enum OodStatus ood_head_dims(const struct OodHead *head, size_t *dims);

/**
 * # Safety
 * `head` must be null or a handle not yet freed.
 */
void ood_head_free(struct OodHead *head);

/**
 * `1 - max class probability` for every test row.
 *
 * # Safety
 * Handles must be live; `scores` must hold `len >= rows(test)` doubles.
 */
enum OodStatus ood_confidence_score(const struct OodHead *head,
                                    const struct OodMatrix *test,
                                    double *scores,
                                    size_t len);

/**
 * L2-normalized hidden-layer features of every row.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum OodStatus ood_extract_features(const struct OodHead *head,
                                    const struct OodMatrix *m,
                                    struct OodMatrix **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OOD_H */
