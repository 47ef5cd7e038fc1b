#ifndef CBNLAB_H
#define CBNLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CbnlabConstraint {
  CBNLAB_CONSTRAINT_TANH = 0,
  CBNLAB_CONSTRAINT_SIGMOID = 1,
  CBNLAB_CONSTRAINT_NONE = 2,
} CbnlabConstraint;

typedef enum CbnlabStatus {
  CBNLAB_STATUS_OK = 0,
  CBNLAB_STATUS_NULL_POINTER = 1,
  CBNLAB_STATUS_INVALID_ARGUMENT = 2,
  CBNLAB_STATUS_SHAPE = 3,
  CBNLAB_STATUS_IO = 4,
  CBNLAB_STATUS_INTERNAL = 5,
  CBNLAB_STATUS_BUFFER_TOO_SMALL = 6,
} CbnlabStatus;

/**
 * Opaque generator handle.
 */
typedef struct CbnlabGenerator CbnlabGenerator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to fit). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cbnlab_last_error(char *buf, size_t len);

/**
 * Weights a central-biasing generator of the reference size adds for a
 * latent code of length `latent_dim`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CbnlabStatus cbnlab_params_added(size_t latent_dim, uint64_t *out);

/**
 * Build a generator from a JSON spec (`{}` or null for the defaults) and a
 * seed.
 *
 * # Safety
 * `spec_json` must be null or a NUL-terminated string; `out` must be valid.
 */
enum CbnlabStatus cbnlab_generator_new(const char *spec_json,
                                       uint64_t seed,
                                       struct CbnlabGenerator **out);

/**
 * Load a generator checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be valid.
 */
enum CbnlabStatus cbnlab_generator_load(const char *dir, struct CbnlabGenerator **out);

/**
 * # Safety
 * `g` must be null or a handle from this library, not used afterwards.
 */
void cbnlab_generator_free(struct CbnlabGenerator *g);

/**
 * Image extent, latent size and learnable parameter count. Any output
 * pointer may be null.
 *
 * # Safety
 * `g` must be a live handle.
 */
enum CbnlabStatus cbnlab_generator_info(const struct CbnlabGenerator *g,
                                        size_t *extent,
                                        size_t *latent_dim,
                                        size_t *param_count);

/**
 * Inference forward pass. `x` holds `batch` images of [in_channels, E, E],
 * `codes` holds `batch` rows of `latent_dim`; `out` receives `batch`
 * images of [out_channels, E, E] and must hold `out_len` doubles.
 *
 * # Safety
 * Pointers must reference arrays of the sizes implied by the generator.
 */
enum CbnlabStatus cbnlab_generator_forward(const struct CbnlabGenerator *g,
                                           const double *x,
                                           const double *codes,
                                           size_t batch,
                                           double *out,
                                           size_t out_len);

/**
 * Central-biasing instance normalization of `y` [b, c, h, w] with bias
 * net weights `f` [c, s] applied to `codes` [b, s]; result written to `out`
 * (same size as `y`).
 *
 * # Safety
 * Pointers must reference arrays of the stated sizes.
 */
enum CbnlabStatus cbnlab_cbin_forward(const double *y,
                                      size_t b,
                                      size_t c,
                                      size_t h,
                                      size_t w,
                                      const double *codes,
                                      size_t s,
                                      const double *f,
                                      enum CbnlabConstraint constraint,
                                      double eps,
                                      double *out);

/**
 * Run the self checks whose names contain `filter` (null for all). Writes
 * JSON lines to `*json_out` (free with `cbnlab_string_free`) and the number
 * of failed checks to `*failed`.
 *
 * # Safety
 * `filter` must be null or NUL-terminated; output pointers must be valid.
 */
enum CbnlabStatus cbnlab_run_checks(const char *filter, char **json_out, size_t *failed);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void cbnlab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBNLAB_H */
