#ifndef SMTK_H
#define SMTK_H

/* Generated by cbindgen from the smtk-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmtkStatus {
  SMTK_STATUS_OK = 0,
  SMTK_STATUS_NULL_POINTER = 1,
  SMTK_STATUS_INVALID_ARGUMENT = 2,
  SMTK_STATUS_CONFIG = 3,
  SMTK_STATUS_FORMAT = 4,
  SMTK_STATUS_IO = 5,
  SMTK_STATUS_NUMERICAL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  SMTK_STATUS_INTERNAL = 7,
} SmtkStatus;

/**
 * Opaque model handle.
 */
typedef struct SmtkModel SmtkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *smtk_last_error(void);

/**
 * Builds a freshly initialised model from `key = value` config text (an
 * empty string gives the defaults).
 *
 * # Safety
 * `config` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SmtkStatus smtk_model_build(const char *config, uint64_t seed, struct SmtkModel **out);

/**
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SmtkStatus smtk_model_load(const char *path, struct SmtkModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum SmtkStatus smtk_model_save(const struct SmtkModel *model, const char *path);

/**
 * Number of distinct learnable scalars.
 *
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum SmtkStatus smtk_model_param_count(const struct SmtkModel *model, uint64_t *out);

/**
 * # Safety
 * `model` must come from this library and `out` be a valid pointer.
 */
enum SmtkStatus smtk_model_num_classes(const struct SmtkModel *model, size_t *out);

/**
 * Per-point class logits for `n` points.
 *
 * `positions` holds `n * 3` doubles. `features` holds `n * in_channels`
 * doubles, or is null to use the positions. `logits` receives
 * `n * classes` doubles, row-major; `logits_len` is its capacity.
 *
 * # Safety
 * All non-null pointers must be valid for the stated lengths.
 */
enum SmtkStatus smtk_model_forward(const struct SmtkModel *model,
                                   const double *positions,
                                   const double *features,
                                   size_t n,
                                   double *logits,
                                   size_t logits_len);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void smtk_model_free(struct SmtkModel *model);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SMTK_H */
