/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef TESET_H
#define TESET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum TesetStatus {
  TESET_STATUS_OK = 0,
  TESET_STATUS_NULL_POINTER = 1,
  TESET_STATUS_INVALID_ARGUMENT = 2,
  TESET_STATUS_IO = 3,
  TESET_STATUS_PARSE = 4,
  TESET_STATUS_CONFIG = 5,
  TESET_STATUS_SHAPE = 6,
  TESET_STATUS_UNKNOWN_EVENT = 7,
  TESET_STATUS_NON_FINITE = 8,
  /**
   * A Rust panic was caught at the boundary.
   */
  TESET_STATUS_INTERNAL = 9,
} TesetStatus;

/**
 * Opaque loaded model.
 */
typedef struct TesetModel TesetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *teset_version(void);

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *teset_last_error(void);

/**
 * Loads a checkpoint written by `teset train` or `teset finetune`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum TesetStatus teset_model_load(const char *path, struct TesetModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`teset_model_load`] and not be used afterwards.
 */
void teset_model_free(struct TesetModel *model);

/**
 * Number of events in the vocabulary (valid history ids are `0..n`).
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum TesetStatus teset_model_num_events(const struct TesetModel *model, size_t *out);

/**
 * Length of the probability vector written by [`teset_predict_next`].
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum TesetStatus teset_model_num_targets(const struct TesetModel *model, size_t *out);

/**
 * Event id of target position `pos`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum TesetStatus teset_model_target_event(const struct TesetModel *model, size_t pos, size_t *out);

/**
 * Predicts the set following a history.
 *
 * The history has `num_sets` sets. Set `j` has `set_sizes[j]` event ids,
 * taken consecutively from `items`, and occurs at `timestamps[j]` in
 * corpus time units. Timestamps must be non-decreasing.
 *
 * `query_time` is the absolute time queried by event-given-time
 * checkpoints and is ignored otherwise (pass NaN). `condition` is the event
 * id given to time-given-event checkpoints; pass a negative value
 * otherwise. `samples` weight draws are averaged using `seed`, and zero
 * uses the weight means.
 *
 * Writes `num_targets` probabilities to `out_probs` and the predicted gap
 * after the last set, in corpus time units, to `out_gap`.
 *
 * # Safety
 * Array arguments must point to the stated number of readable values,
 * `out_probs` to `out_len` writable values, and `out_gap` to one.
 */
enum TesetStatus teset_predict_next(const struct TesetModel *model,
                                    const size_t *items,
                                    size_t num_items,
                                    const size_t *set_sizes,
                                    const double *timestamps,
                                    size_t num_sets,
                                    double query_time,
                                    int64_t condition,
                                    size_t samples,
                                    uint64_t seed,
                                    double *out_probs,
                                    size_t out_len,
                                    double *out_gap);

/**
 * Dice similarity of two id sets; two empty sets score 1.
 *
 * # Safety
 * Arrays must point to the stated number of readable values; `out` writable.
 */
enum TesetStatus teset_dice_score(const size_t *pred,
                                  size_t num_pred,
                                  const size_t *truth,
                                  size_t num_truth,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TESET_H */
