#ifndef PIETSP_H
#define PIETSP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PietspStatus {
  PIETSP_STATUS_OK = 0,
  PIETSP_STATUS_NULL_POINTER = 1,
  PIETSP_STATUS_INVALID_UTF8 = 2,
  PIETSP_STATUS_IO = 3,
  PIETSP_STATUS_CHECKPOINT = 4,
  PIETSP_STATUS_INVALID_INPUT = 5,
  PIETSP_STATUS_BUFFER_TOO_SMALL = 6,
  PIETSP_STATUS_INTERNAL = 7,
} PietspStatus;

/**
 * A loaded model. Only ever handled through a pointer.
 */
typedef struct PietspModel PietspModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a checkpoint file. On success `*out` owns a model that must be
 * released with `pietsp_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PietspStatus pietsp_model_load(const char *path, struct PietspModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `pietsp_model_load` and not be used afterwards.
 */
void pietsp_model_free(struct PietspModel *model);

/**
 * Domain size |E|, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pietsp_model_vocab_size(const struct PietspModel *model);

/**
 * Embedding width D, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pietsp_model_dim(const struct PietspModel *model);

/**
 * Longest history K the model reads; older sets are ignored. 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pietsp_model_max_len(const struct PietspModel *model);

/**
 * Score every domain element for the next set. `out_scores` must have room
 * for `out_len >= pietsp_model_vocab_size(model)` values.
 *
 * # Safety
 * Pointers must be valid for the lengths described in the module docs.
 */
enum PietspStatus pietsp_model_score(const struct PietspModel *model,
                                     const size_t *ids,
                                     const size_t *offsets,
                                     size_t n_sets,
                                     double *out_scores,
                                     size_t out_len);

/**
 * Write the `k` best element ids, best first, into `out_ids`, and their
 * scores into `out_scores` unless it is null. `*out_written` receives
 * `min(k, vocab_size)`.
 *
 * # Safety
 * `out_ids` (and `out_scores` when not null) must have room for `k` values.
 */
enum PietspStatus pietsp_model_predict_topk(const struct PietspModel *model,
                                            const size_t *ids,
                                            const size_t *offsets,
                                            size_t n_sets,
                                            size_t k,
                                            size_t *out_ids,
                                            double *out_scores,
                                            size_t *out_written);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *pietsp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pietsp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIETSP_H */
