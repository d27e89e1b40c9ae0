#ifndef GEOROM_H
#define GEOROM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all functions.
typedef enum GeoromStatus {
  GEOROM_STATUS_OK = 0,
  GEOROM_STATUS_INVALID_ARGUMENT = 1,
  GEOROM_STATUS_NUMERICAL = 2,
  GEOROM_STATUS_IO = 3,
  GEOROM_STATUS_FORMAT = 4,
  GEOROM_STATUS_NULL_POINTER = 5,
  GEOROM_STATUS_PANIC = 6,
} GeoromStatus;

// Opaque trained model.
typedef struct GeoromModel GeoromModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *georom_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full message length.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t georom_last_error(char *buf, size_t len);

// Field values per snapshot.
size_t georom_field_dim(void);

// Latent coordinates per state.
size_t georom_latent_dim(void);

// Loads an autoencoder checkpoint and a vector-field checkpoint.
//
// # Safety
// Paths must be null or NUL-terminated; `out` must be null or writable.
enum GeoromStatus georom_model_load(const char *ae_checkpoint,
                                    const char *node_checkpoint,
                                    struct GeoromModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`georom_model_load`] and not be used afterwards.
void georom_model_free(struct GeoromModel *model);

// Encodes one normalized field of `georom_field_dim()` values.
//
// # Safety
// Buffers must hold the stated number of `double`s.
enum GeoromStatus georom_model_encode(const struct GeoromModel *model,
                                      const double *field,
                                      size_t field_len,
                                      double *latent_out,
                                      size_t latent_len);

// Decodes one latent state into a normalized field.
//
// # Safety
// Buffers must hold the stated number of `double`s.
enum GeoromStatus georom_model_decode(const struct GeoromModel *model,
                                      const double *latent,
                                      size_t latent_len,
                                      double *field_out,
                                      size_t field_len);

// Integrates the latent dynamics for parameter `mu[3]` over `n_times`
// strictly increasing times; writes `n_times × latent_dim` values,
// starting with `z0`.
//
// # Safety
// `mu` holds 3 values, `z0` holds `latent_dim`, `times` holds `n_times`
// and `out` holds `out_len` writable values.
enum GeoromStatus georom_model_rollout(const struct GeoromModel *model,
                                       const double *mu,
                                       const double *z0,
                                       size_t z0_len,
                                       const double *times,
                                       size_t n_times,
                                       double *out,
                                       size_t out_len);

// Spectral norm of the decoder Jacobian at `latent`, by power iteration.
//
// # Safety
// `latent` holds `latent_len` values; `gain_out` must be writable.
enum GeoromStatus georom_model_decoder_gain(const struct GeoromModel *model,
                                            const double *latent,
                                            size_t latent_len,
                                            size_t iters,
                                            double *gain_out);

// One-sided signed-rank p-value for "differences tend to be positive".
// `*defined_out` is 0 when every difference is zero.
//
// # Safety
// `diffs` holds `n` values; both outputs must be writable.
enum GeoromStatus georom_signed_rank_test(const double *diffs,
                                          size_t n,
                                          double *p_out,
                                          int32_t *defined_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOROM_H */
