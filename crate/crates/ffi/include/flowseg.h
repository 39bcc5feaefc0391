#ifndef FLOWSEG_H
#define FLOWSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlowsegStatus {
  FLOWSEG_STATUS_OK = 0,
  FLOWSEG_STATUS_NULL_POINTER = 1,
  FLOWSEG_STATUS_INVALID_ARGUMENT = 2,
  FLOWSEG_STATUS_SHAPE = 3,
  FLOWSEG_STATUS_NUMERICAL = 4,
  FLOWSEG_STATUS_NO_VALID_PIXELS = 5,
  FLOWSEG_STATUS_FORMAT = 6,
  FLOWSEG_STATUS_CHECKSUM = 7,
  FLOWSEG_STATUS_IO = 8,
  FLOWSEG_STATUS_VALIDATION = 9,
  FLOWSEG_STATUS_PANIC = 10,
} FlowsegStatus;

typedef enum FlowsegSolver {
  FLOWSEG_SOLVER_EULER = 0,
  FLOWSEG_SOLVER_RK45 = 1,
} FlowsegSolver;

typedef enum FlowsegModelKind {
  FLOWSEG_MODEL_KIND_FLOW = 0,
  FLOWSEG_MODEL_KIND_DSM = 1,
} FlowsegModelKind;

/**
 * Opaque model handle.
 */
typedef struct FlowsegModel FlowsegModel;

typedef struct FlowsegModelInfo {
  /**
   * A `FlowsegModelKind` value.
   */
  uint32_t kind;
  /**
   * Values per sample (pixels x channels).
   */
  size_t sample_dim;
  size_t pixels;
  size_t channels;
  uint32_t num_categories;
  /**
   * Training perturbation amplitude; 0 for diffusion models.
   */
  double beta;
} FlowsegModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *flowseg_last_error(void);

/**
 * Loads a checkpoint. On success `*out` owns a handle to release with
 * [`flowseg_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FlowsegStatus flowseg_model_load(const char *path, struct FlowsegModel **out);

/**
 * # Safety
 * `model` must come from [`flowseg_model_load`] and not be used afterwards.
 */
void flowseg_model_free(struct FlowsegModel *model);

/**
 * # Safety
 * `model` and `info` must be valid pointers.
 */
enum FlowsegStatus flowseg_model_info(const struct FlowsegModel *model,
                                      struct FlowsegModelInfo *info);

/**
 * Segments `count` samples of `sample_dim` color values each into
 * `count * pixels` category ids. Flow models integrate forward with the
 * given solver (`steps` is ignored by RK45); diffusion models run
 * deterministic strided sampling with `steps` steps and `seed`.
 *
 * # Safety
 * `colors` must hold `count * sample_dim` values and `labels` room for
 * `count * pixels`.
 */
enum FlowsegStatus flowseg_segment(const struct FlowsegModel *model,
                                   const double *colors,
                                   size_t count,
                                   enum FlowsegSolver solver,
                                   size_t steps,
                                   uint64_t seed,
                                   uint32_t *labels);

/**
 * Synthesizes one sample per layout with the reverse flow. `labels` holds
 * `count * pixels` ids; `colors` receives `count * sample_dim` color values.
 * A negative `beta_prime` selects the model's training amplitude.
 *
 * # Safety
 * Buffers must be sized as described.
 */
enum FlowsegStatus flowseg_synthesize(const struct FlowsegModel *model,
                                      const uint32_t *labels,
                                      size_t count,
                                      double beta_prime,
                                      size_t steps,
                                      uint64_t seed,
                                      double *colors);

/**
 * Writes the three-channel anchor color of `category` to `rgb`.
 *
 * # Safety
 * `rgb` must have room for 3 values.
 */
enum FlowsegStatus flowseg_anchor_encode(uint32_t k,
                                         double spacing,
                                         uint32_t num_categories,
                                         uint32_t category,
                                         double *rgb);

/**
 * Nearest-anchor decoding of `count` RGB triples.
 *
 * # Safety
 * `rgb` must hold `3 * count` values and `labels` room for `count`.
 */
enum FlowsegStatus flowseg_anchor_decode(uint32_t k,
                                         double spacing,
                                         uint32_t num_categories,
                                         const double *rgb,
                                         size_t count,
                                         uint32_t *labels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWSEG_H */
