#ifndef CALSEG_H
#define CALSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CalsegStatus {
  CALSEG_STATUS_OK = 0,
  CALSEG_STATUS_NULL_POINTER = 1,
  CALSEG_STATUS_INVALID_ARGUMENT = 2,
  CALSEG_STATUS_SHAPE = 3,
  CALSEG_STATUS_DOMAIN = 4,
  CALSEG_STATUS_CONFIG = 5,
  CALSEG_STATUS_FORMAT = 6,
  CALSEG_STATUS_IO = 7,
  CALSEG_STATUS_PANIC = 8,
} CalsegStatus;

/**
 * Opaque loss handle.
 */
typedef struct CalsegLoss CalsegLoss;

/**
 * Opaque model handle: a network configuration plus its weights.
 */
typedef struct CalsegModel CalsegModel;

/**
 * Network hyperparameters, mirrored from the Rust side.
 */
typedef struct CalsegNetConfig {
  size_t depth;
  size_t base_channels;
  size_t kernel;
  size_t input_channels;
  uint64_t seed;
} CalsegNetConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *calseg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *calseg_version(void);

/**
 * Creates a loss from its name (`ce`, `dsc`, `dscpp`, `tversky`,
 * `focal_tversky`, `combo`, `unified_focal`) with default
 * hyperparameters. `plusplus` non-zero selects the `++` variant.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CalsegStatus calseg_loss_new(const char *kind, int32_t plusplus, struct CalsegLoss **out);

/**
 * Sets one hyperparameter: `gamma`, `alpha`, `beta`, `delta`, `lambda`
 * or `smooth`. The loss is left unchanged if the result is invalid.
 *
 * # Safety
 * `loss` must come from [`calseg_loss_new`]; `name` must be NUL-terminated.
 */
enum CalsegStatus calseg_loss_set(struct CalsegLoss *loss, const char *name, double value);

/**
 * Releases a loss. Null is ignored.
 *
 * # Safety
 * `loss` must come from [`calseg_loss_new`] and not be used afterwards.
 */
void calseg_loss_free(struct CalsegLoss *loss);

/**
 * Loss of foreground probabilities `fg[n]` against labels `truth[n]`
 * (0 or 1). The background probability is `1 - fg`.
 *
 * # Safety
 * `fg` and `truth` must hold `n` elements; `out` must be valid.
 */
enum CalsegStatus calseg_loss_value(const struct CalsegLoss *loss,
                                    const double *fg,
                                    const uint8_t *truth,
                                    size_t n,
                                    double *out);

/**
 * Loss of `softmax(logits)` and its gradient with respect to the logits.
 * `logits` and `grad` are `[2, n]`, foreground channel first.
 *
 * # Safety
 * `logits` and `grad` must hold `2 n` elements, `truth` `n`; `value`
 * must be valid.
 */
enum CalsegStatus calseg_loss_grad(const struct CalsegLoss *loss,
                                   const double *logits,
                                   const uint8_t *truth,
                                   size_t n,
                                   double *value,
                                   double *grad);

/**
 * Default network hyperparameters.
 */
struct CalsegNetConfig calseg_net_config_default(void);

/**
 * Creates a freshly initialised model.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CalsegStatus calseg_model_new(struct CalsegNetConfig config, struct CalsegModel **out);

/**
 * Loads a checkpoint and checks it against `config`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum CalsegStatus calseg_model_load(struct CalsegNetConfig config,
                                    const char *path,
                                    struct CalsegModel **out);

/**
 * Writes the model weights as a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle and `path` NUL-terminated.
 */
enum CalsegStatus calseg_model_save(const struct CalsegModel *model, const char *path);

/**
 * Number of trainable scalars in the model.
 *
 * # Safety
 * `model` must be a live handle or null (which yields 0).
 */
size_t calseg_model_param_count(const struct CalsegModel *model);

/**
 * Foreground probabilities `fg[height * width]` for an image of shape
 * `[input_channels, height, width]`. The image is used as given; callers
 * wanting the training-time normalisation must apply it first.
 *
 * # Safety
 * `image` must hold `input_channels * height * width` values and `fg`
 * `height * width`.
 */
enum CalsegStatus calseg_model_predict(const struct CalsegModel *model,
                                       const double *image,
                                       size_t height,
                                       size_t width,
                                       double *fg);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void calseg_model_free(struct CalsegModel *model);

/**
 * Two-sided Wilcoxon rank-sum test of `xs[nx]` against `ys[ny]`.
 * `exact` is set to 1 when the p-value comes from full enumeration.
 *
 * # Safety
 * The arrays must hold the stated counts; the outputs must be valid.
 */
enum CalsegStatus calseg_wilcoxon_rank_sum(const double *xs,
                                           size_t nx,
                                           const double *ys,
                                           size_t ny,
                                           double *statistic,
                                           double *p_value,
                                           int32_t *exact);

/**
 * Percentile bootstrap interval of the mean of `values[n]`.
 *
 * # Safety
 * `values` must hold `n` elements; `lo` and `hi` must be valid.
 */
enum CalsegStatus calseg_bootstrap_ci(const double *values,
                                      size_t n,
                                      double level,
                                      size_t resamples,
                                      uint64_t seed,
                                      double *lo,
                                      double *hi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CALSEG_H */
