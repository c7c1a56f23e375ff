#ifndef TRANSDR_H
#define TRANSDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TdrStatus {
  TDR_STATUS_OK = 0,
  TDR_STATUS_NULL_POINTER = 1,
  TDR_STATUS_INVALID_ARGUMENT = 2,
  TDR_STATUS_CONFIG = 3,
  TDR_STATUS_DATA = 4,
  TDR_STATUS_NUMERIC = 5,
  TDR_STATUS_BUFFER_TOO_SMALL = 6,
  TDR_STATUS_PANIC = 7,
} TdrStatus;

/**
 * Opaque model handle.
 */
typedef struct TdrModel TdrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread; empty after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *tdr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tdr_version(void);

/**
 * Loads any checkpoint written by the library or the `transdr` CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TdrStatus tdr_model_load(const char *path, struct TdrModel **out);

/**
 * Writes the model as a checkpoint (without training state).
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum TdrStatus tdr_model_save(const struct TdrModel *model, const char *path);

/**
 * Fits PCA with `k` components to `n` images of `height × width × channels`.
 *
 * # Safety
 * `pixels` must hold `n·height·width·channels` values; `out` must be writable.
 */
enum TdrStatus tdr_pca_fit(const double *pixels,
                           size_t n,
                           size_t height,
                           size_t width,
                           size_t channels,
                           size_t k,
                           struct TdrModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void tdr_model_free(struct TdrModel *model);

/**
 * Code width per image, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tdr_model_code_dim(const struct TdrModel *model);

/**
 * Writes the expected image shape.
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum TdrStatus tdr_model_image_shape(const struct TdrModel *model,
                                     size_t *height,
                                     size_t *width,
                                     size_t *channels);

/**
 * Model kind ("transformer-dr", "transformer-drr", "ae" or "pca") as a
 * static string, or null for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
const char *tdr_model_kind(const struct TdrModel *model);

/**
 * Encodes `n` images into `codes_out` (`n × code_dim` values).
 *
 * # Safety
 * `pixels` must hold `n` images of the model's shape; `codes_out` must
 * hold `codes_len` values.
 */
enum TdrStatus tdr_model_encode(const struct TdrModel *model,
                                const double *pixels,
                                size_t n,
                                double *codes_out,
                                size_t codes_len);

/**
 * Decodes `n` codes into `pixels_out` (`n × height × width × channels`).
 * Outputs are not clamped.
 *
 * # Safety
 * `codes` must hold `n × code_dim` values; `pixels_out` must hold
 * `pixels_len` values.
 */
enum TdrStatus tdr_model_decode(const struct TdrModel *model,
                                const double *codes,
                                size_t n,
                                double *pixels_out,
                                size_t pixels_len);

/**
 * Encodes then decodes `n` images.
 *
 * # Safety
 * As for [`tdr_model_encode`], with `pixels_out` holding `pixels_len` values.
 */
enum TdrStatus tdr_model_reconstruct(const struct TdrModel *model,
                                     const double *pixels,
                                     size_t n,
                                     double *pixels_out,
                                     size_t pixels_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSDR_H */
