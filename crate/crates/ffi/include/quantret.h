#ifndef QUANTRET_H
#define QUANTRET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Vector encoding. `Float32` is only meaningful for storage sizing.
typedef enum QrDtype {
  QR_DTYPE_INT8 = 0,
  QR_DTYPE_BINARY = 1,
  QR_DTYPE_FLOAT32 = 2,
} QrDtype;

// Result code of every exported function.
typedef enum QrStatus {
  QR_STATUS_OK = 0,
  QR_STATUS_NULL_POINTER = 1,
  QR_STATUS_INVALID_ARGUMENT = 2,
  QR_STATUS_DIMENSION_MISMATCH = 3,
  QR_STATUS_NON_FINITE = 4,
  QR_STATUS_UNDEFINED_COSINE = 5,
  QR_STATUS_EMPTY_INDEX = 6,
  QR_STATUS_FORMAT = 7,
  QR_STATUS_INTERNAL = 8,
} QrStatus;

// Opaque exact-search index.
typedef struct QrIndex QrIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL.
// The pointer stays valid until the next failing call on the same thread.
const char *qr_last_error(void);

// Bytes needed for one packed binary code of `dim` components.
size_t qr_binary_bytes(size_t dim);

// `out[i] = floor(127 * tanh(x[i]) + 0.5)`.
//
// # Safety
// `x` and `out` must point to `dim` readable / writable elements.
enum QrStatus qr_quantize_int8(const double *x, size_t dim, int8_t *out);

// Packs sign bits (`x >= 0` is set) LSB first into `qr_binary_bytes(dim)` bytes.
//
// # Safety
// `x` must hold `dim` elements and `out` `out_len` bytes.
enum QrStatus qr_quantize_binary(const double *x, size_t dim, uint8_t *out, size_t out_len);

// Cosine of two int8 codes.
//
// # Safety
// `a` and `b` must hold `dim` elements; `out` must be writable.
enum QrStatus qr_similarity_int8(const int8_t *a, const int8_t *b, size_t dim, double *out);

// Cosine of two packed sign codes of `dim` bits.
//
// # Safety
// `a` and `b` must hold `qr_binary_bytes(dim)` bytes; `out` must be writable.
enum QrStatus qr_similarity_binary(const uint8_t *a, const uint8_t *b, size_t dim, double *out);

// Whole vectors of `dim` components that fit in one MB.
//
// # Safety
// `out` must be writable.
enum QrStatus qr_docs_per_mb(size_t dim, enum QrDtype dtype, uint64_t *out);

// Spherical interpolation of two flattened parameter vectors, `t` in [0, 1].
//
// # Safety
// `a`, `b` and `out` must hold `len` elements.
enum QrStatus qr_slerp(const double *a, const double *b, size_t len, double t, double *out);

// Quantizes `n` row-major vectors of `dim` components into a new index.
// `ids` may be NULL, in which case rows are named "0", "1", ...
//
// # Safety
// `data` must hold `n * dim` elements, `ids` (if given) `n` NUL-terminated
// UTF-8 strings, and `out` must be writable.
enum QrStatus qr_index_build(const double *data,
                             size_t n,
                             size_t dim,
                             const char *const *ids,
                             enum QrDtype dtype,
                             struct QrIndex **out);

// Releases an index. NULL is ignored.
//
// # Safety
// `index` must come from `qr_index_build` and not be used afterwards.
void qr_index_free(struct QrIndex *index);

// Number of rows, or 0 for NULL.
//
// # Safety
// `index` must be NULL or a live handle.
size_t qr_index_len(const struct QrIndex *index);

// Id of row `row`, or NULL when out of range. Valid while the index lives.
//
// # Safety
// `index` must be NULL or a live handle.
const char *qr_index_id(const struct QrIndex *index, size_t row);

// Top-`k` rows for a raw query, best first, ties broken by ascending id.
// Writes up to `k` row numbers and scores and stores the count in `found`.
//
// # Safety
// `query` must hold `dim` elements, `rows` and `scores` `k` elements each,
// and `found` must be writable.
enum QrStatus qr_index_search(const struct QrIndex *index,
                              const double *query,
                              size_t dim,
                              size_t k,
                              size_t *rows,
                              double *scores,
                              size_t *found);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUANTRET_H */
