#ifndef SCENENET_H
#define SCENENET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum ScnStatus {
  SCN_STATUS_OK = 0,
  SCN_STATUS_NULL_POINTER = 1,
  SCN_STATUS_INVALID_ARGUMENT = 2,
  SCN_STATUS_IO = 3,
  SCN_STATUS_FORMAT = 4,
  SCN_STATUS_SHAPE = 5,
  SCN_STATUS_BUFFER_TOO_SMALL = 6,
  SCN_STATUS_PANIC = 7,
} ScnStatus;

/**
 * Loaded network: preset layout plus parameters.
 */
typedef struct ScnModel ScnModel;

/**
 * Budget audit result.
 */
typedef struct ScnBudget {
  uint64_t nonzero;
  uint32_t bits;
  double size_kb;
  double limit_kb;
  /**
   * 1 when within the limit, else 0.
   */
  int32_t pass;
} ScnBudget;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *scn_last_error(void);

/**
 * Static name of a status code.
 */
const char *scn_status_name(enum ScnStatus status);

/**
 * Number of output classes.
 */
uint32_t scn_class_count(void);

/**
 * Load a model file for preset `"paper"` or `"tiny"` at input `height x width x 3`.
 *
 * # Safety
 * `path` and `preset` must be nul-terminated strings; `out` must be writable.
 */
enum ScnStatus scn_model_load(const char *path,
                              const char *preset,
                              uint32_t height,
                              uint32_t width,
                              struct ScnModel **out);

/**
 * Release a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`scn_model_load`] and not be used afterwards.
 */
void scn_model_free(struct ScnModel *model);

/**
 * Expected feature shape of a model.
 *
 * # Safety
 * `model` must be a live handle; the output pointers must be writable.
 */
enum ScnStatus scn_model_input_shape(const struct ScnModel *model,
                                     uint32_t *height,
                                     uint32_t *width,
                                     uint32_t *channels);

/**
 * Class probabilities for one feature map laid out `(band, frame, channel)` row-major.
 *
 * # Safety
 * `features` must hold `len` floats; `probs` must have room for `probs_len` doubles.
 */
enum ScnStatus scn_model_predict(const struct ScnModel *model,
                                 const float *features,
                                 size_t len,
                                 double *probs,
                                 size_t probs_len);

/**
 * Audit a model against `limit_kb`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum ScnStatus scn_model_audit(const struct ScnModel *model,
                               double limit_kb,
                               struct ScnBudget *out);

/**
 * Log-mel feature map of mono samples; `out` receives `n_mels * width * 3` floats.
 *
 * # Safety
 * `samples` must hold `n` floats and `out` must have room for `out_len` floats.
 */
enum ScnStatus scn_extract_features(const float *samples,
                                    size_t n,
                                    uint32_t sample_rate,
                                    uint32_t n_mels,
                                    uint32_t width,
                                    float *out,
                                    size_t out_len);

/**
 * Upper 16 bits of a 32-bit float word.
 */
uint16_t scn_truncate_to_16(uint32_t word);

/**
 * Float whose upper 16 bits are `word` and lower 16 bits zero.
 */
float scn_widen_to_32(uint16_t word);

/**
 * `widen(truncate(x))`.
 */
float scn_quantize_value(float x);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENENET_H */
