#ifndef WAVEMLP_H
#define WAVEMLP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WmStatus {
  WM_STATUS_OK = 0,
  WM_STATUS_NULL_POINTER = 1,
  WM_STATUS_INVALID_UTF8 = 2,
  WM_STATUS_DIMENSION = 3,
  WM_STATUS_DOMAIN = 4,
  WM_STATUS_CONFIG = 5,
  WM_STATUS_UNDEFINED_PHASE = 6,
  WM_STATUS_UNSUPPORTED_MODE = 7,
  WM_STATUS_NUMERIC = 8,
  WM_STATUS_IO = 9,
  WM_STATUS_PARSE = 10,
  WM_STATUS_BUFFER_TOO_SMALL = 11,
  WM_STATUS_INTERNAL = 12,
  WM_STATUS_PANIC = 13,
} WmStatus;

/**
 * Opaque model handle.
 */
typedef struct WmModel WmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *wm_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *wm_version(void);

/**
 * Amplitude and phase of the sum of two waves from the closed forms.
 * Writes NaN to `phase` and returns `WM_STATUS_UNDEFINED_PHASE` when both
 * amplitudes are zero.
 *
 * # Safety
 * `amplitude` and `phase` must be valid for writes.
 */
enum WmStatus wm_superpose(double a1,
                           double a2,
                           double theta1,
                           double theta2,
                           double *amplitude,
                           double *phase);

/**
 * Same quantities through complex addition.
 *
 * # Safety
 * `amplitude` and `phase` must be valid for writes.
 */
enum WmStatus wm_superpose_oracle(double a1,
                                  double a2,
                                  double theta1,
                                  double theta2,
                                  double *amplitude,
                                  double *phase);

/**
 * Builds a preset (`"T*"`, `"T"`, `"S"`, `"M"`, `"B"`, `"tiny"`).
 *
 * # Safety
 * `name` must be a nul-terminated string and `out` valid for writes.
 */
enum WmStatus wm_model_from_preset(const char *name, uint64_t seed, struct WmModel **out);

/**
 * Builds a model from a JSON architecture.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` valid for writes.
 */
enum WmStatus wm_model_from_json(const char *json, uint64_t seed, struct WmModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `wm_model_from_*` and not be used afterwards.
 */
void wm_model_free(struct WmModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` valid for writes.
 */
enum WmStatus wm_model_param_count(const struct WmModel *model, uint64_t *out);

/**
 * Multiply-accumulate count of one `height × width` forward pass.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for writes.
 */
enum WmStatus wm_model_flops(const struct WmModel *model,
                             size_t height,
                             size_t width,
                             uint64_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` valid for writes.
 */
enum WmStatus wm_model_num_classes(const struct WmModel *model, size_t *out);

/**
 * Logits for `batch` channels-last images of `height × width × channels`
 * doubles. `logits` receives `batch × num_classes` values row-major.
 *
 * # Safety
 * `images` must hold `batch·height·width·channels` readable doubles and
 * `logits` `logits_len` writable doubles.
 */
enum WmStatus wm_model_forward(const struct WmModel *model,
                               const double *images,
                               size_t batch,
                               size_t height,
                               size_t width,
                               size_t channels,
                               double *logits,
                               size_t logits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAVEMLP_H */
