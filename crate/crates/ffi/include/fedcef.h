#ifndef FEDCEF_H
#define FEDCEF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_DIMENSION_MISMATCH = 3,
  FC_STATUS_NON_FINITE = 4,
  FC_STATUS_CONFIG = 5,
  FC_STATUS_IO = 6,
  FC_STATUS_DECODE = 7,
  FC_STATUS_BUFFER_TOO_SMALL = 8,
  FC_STATUS_RUNTIME = 9,
  FC_STATUS_PANIC = 10,
} FcStatus;

typedef enum FcCompressorKind {
  FC_COMPRESSOR_KIND_IDENTITY = 0,
  FC_COMPRESSOR_KIND_TOP_K = 1,
  FC_COMPRESSOR_KIND_RAND_K = 2,
} FcCompressorKind;

/**
 * Parsed run configuration.
 */
typedef struct FcConfig FcConfig;

/**
 * Compressed payload.
 */
typedef struct FcPayload FcPayload;

/**
 * Result of a run: the metrics series and the final global model.
 */
typedef struct FcSeries FcSeries;

/**
 * One metrics row. `lyapunov` is NaN when `has_lyapunov` is false.
 */
typedef struct FcMetricsRow {
  uint64_t round;
  double objective;
  double prox_grad_sq;
  uint64_t uplink_bytes;
  uint64_t downlink_bytes;
  uint64_t nnz;
  double lyapunov;
  bool has_lyapunov;
  bool condition_ok;
} FcMetricsRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *fc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Parse a TOML config.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FcStatus fc_config_parse(const char *toml, struct FcConfig **out);

/**
 * Override the seed of a parsed config.
 *
 * # Safety
 * `config` must come from [`fc_config_parse`].
 */
enum FcStatus fc_config_set_seed(struct FcConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must come from [`fc_config_parse`] or be null.
 */
void fc_config_free(struct FcConfig *config);

/**
 * Run the configured experiment.
 *
 * # Safety
 * `config` must come from [`fc_config_parse`]; `out` must be valid.
 */
enum FcStatus fc_run(const struct FcConfig *config, struct FcSeries **out);

/**
 * Number of rows (`T + 1`), or 0 for a null handle.
 *
 * # Safety
 * `series` must come from [`fc_run`] or be null.
 */
size_t fc_series_len(const struct FcSeries *series);

/**
 * # Safety
 * `series` must come from [`fc_run`]; `out` must be valid.
 */
enum FcStatus fc_series_row(const struct FcSeries *series, size_t index, struct FcMetricsRow *out);

/**
 * Copy the final global model into `out[0..len]`; `len` must equal the
 * model dimension.
 *
 * # Safety
 * `series` must come from [`fc_run`]; `out` must hold `len` doubles.
 */
enum FcStatus fc_series_final_model(const struct FcSeries *series, double *out, size_t len);

/**
 * # Safety
 * `series` must come from [`fc_run`] or be null.
 */
void fc_series_free(struct FcSeries *series);

/**
 * Soft-thresholding `prox_{tau * lambda |.|_1}` of `x[0..len]` into `out`.
 * `lambda = 0` selects the zero regularizer.
 *
 * # Safety
 * `x` and `out` must each hold `len` doubles.
 */
enum FcStatus fc_prox_l1(double lambda, double tau, const double *x, double *out, size_t len);

/**
 * Compress `x[0..len]` with `kind` (an [`FcCompressorKind`] value), keeping
 * `k` entries (ignored for identity). RandK draws its mask from the stream
 * derived from `(seed, label)`; `label` may be null for the other kinds.
 *
 * # Safety
 * `x` must hold `len` doubles, `label` must be NUL-terminated or null and
 * `out` must be valid.
 */
enum FcStatus fc_compress(uint32_t kind,
                          size_t k,
                          uint64_t seed,
                          const char *label,
                          const double *x,
                          size_t len,
                          struct FcPayload **out);

/**
 * Accounted size: 8 bytes per sparse entry or 4 per dense coordinate.
 *
 * # Safety
 * `payload` must be a live handle or null (returns 0).
 */
uint64_t fc_payload_bytes(const struct FcPayload *payload);

/**
 * Dimension of the vector a payload encodes; 0 for null.
 *
 * # Safety
 * `payload` must be a live handle or null.
 */
size_t fc_payload_dim(const struct FcPayload *payload);

/**
 * Expand into a dense vector of length `len` (must equal the dimension).
 *
 * # Safety
 * `payload` must be live and `out` must hold `len` doubles.
 */
enum FcStatus fc_payload_densify(const struct FcPayload *payload, double *out, size_t len);

/**
 * Serialize to the wire format. `*written` receives the encoded length;
 * with a null `buf` or a short `cap` nothing is copied and
 * `FC_STATUS_BUFFER_TOO_SMALL` is returned unless `buf` is null.
 *
 * # Safety
 * `buf` must hold `cap` bytes or be null; `written` must be valid.
 */
enum FcStatus fc_payload_encode(const struct FcPayload *payload,
                                uint8_t *buf,
                                size_t cap,
                                size_t *written);

/**
 * Parse the wire format.
 *
 * # Safety
 * `bytes` must hold `len` bytes; `out` must be valid.
 */
enum FcStatus fc_payload_decode(const uint8_t *bytes, size_t len, struct FcPayload **out);

/**
 * # Safety
 * `payload` must be a live handle or null.
 */
void fc_payload_free(struct FcPayload *payload);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCEF_H */
