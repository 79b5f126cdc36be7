#ifndef DDS_H
#define DDS_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DdsStatus {
  DDS_STATUS_OK = 0,
  DDS_STATUS_NULL_POINTER = 1,
  DDS_STATUS_INVALID_ARGUMENT = 2,
  DDS_STATUS_SHAPE_MISMATCH = 3,
  DDS_STATUS_BUFFER_TOO_SMALL = 4,
  DDS_STATUS_NON_FINITE = 5,
  DDS_STATUS_UNSUPPORTED = 6,
  DDS_STATUS_NUMERICAL = 7,
  DDS_STATUS_IO = 8,
  DDS_STATUS_PANIC = 9,
} DdsStatus;

// How the run derives its masks from the two reference images.
typedef enum DdsMaskMode {
  // Analytic blob support; `part` selects the blob, `-1` the union.
  DDS_MASK_MODE_ANALYTIC = 0,
  // Pixels whose `threshold_channel` exceeds `threshold_tau`.
  DDS_MASK_MODE_THRESHOLD = 1,
} DdsMaskMode;

// Which image of a finished run to copy out.
typedef enum DdsImage {
  DDS_IMAGE_SOURCE = 0,
  DDS_IMAGE_TARGET = 1,
  DDS_IMAGE_CROSSOVER = 2,
  // The dual-domain result `G_t(ẑ)`.
  DDS_IMAGE_RESULT = 3,
  DDS_IMAGE_RESULT_SOURCE = 4,
} DdsImage;

// A source/target generator pair.
typedef struct DdsPair DdsPair;

// A finished synthesis run.
typedef struct DdsRun DdsRun;

typedef struct DdsRunParams {
  double alpha;
  double beta;
  double gamma;
  double lr;
  uintptr_t max_iterations;
  // Seed of the paired reference latent.
  uint64_t z_seed;
  // Seed of the random latent initialization.
  uint64_t init_seed;
  // Start from the reference latent instead of a random draw.
  bool init_from_reference;
  // Use the Euclidean norm instead of the mean squared error for the
  // crossover term.
  bool crossover_l2;
  enum DdsMaskMode mask_mode;
  int32_t part;
  uintptr_t threshold_channel;
  double threshold_tau;
} DdsRunParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dds_version(void);

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *dds_last_error_message(void);

// Fills `out` with the default parameters.
//
// # Safety
// `out` must be null or point to writable `DdsRunParams` storage.
enum DdsStatus dds_run_params_default(struct DdsRunParams *out);

// Analytic blob pair rendering `size`×`size` images.
//
// # Safety
// `out` must be null or point to writable pointer storage.
enum DdsStatus dds_pair_new_analytic(uintptr_t size, struct DdsPair **out);

// Seeded neural pair whose target weights are perturbed by `scale`.
//
// # Safety
// `out` must be null or point to writable pointer storage.
enum DdsStatus dds_pair_new_neural(uint64_t seed,
                                   double scale,
                                   uintptr_t size,
                                   struct DdsPair **out);

// # Safety
// `pair` must be null or a handle from a `dds_pair_new_*` call not yet freed.
void dds_pair_free(struct DdsPair *pair);

// Latent dimension and image side of a pair.
//
// # Safety
// `pair` must be a live handle; the out pointers must be writable or null.
enum DdsStatus dds_pair_info(const struct DdsPair *pair,
                             uintptr_t *latent_dim,
                             uintptr_t *image_size);

// Runs a paired synthesis on `pair` with the default backbone.
//
// # Safety
// `pair` must be a live handle, `params` readable, `out` writable.
enum DdsStatus dds_run(const struct DdsPair *pair,
                       const struct DdsRunParams *params,
                       struct DdsRun **out);

// # Safety
// `run` must be null or a handle from [`dds_run`] not yet freed.
void dds_run_free(struct DdsRun *run);

// Number of completed iterations (rows of the loss trace).
//
// # Safety
// `run` must be a live handle and `out` writable.
enum DdsStatus dds_run_iterations(const struct DdsRun *run, uintptr_t *out);

// Copies the loss trace as rows of `(L_s, L_t, L_c, total)`; needs
// `4 * iterations` doubles.
//
// # Safety
// `run` must be a live handle and `out` point to `capacity` doubles.
enum DdsStatus dds_run_losses(const struct DdsRun *run, double *out, uintptr_t capacity);

// Copies one image of the run; needs `3 * n * n` doubles.
//
// # Safety
// `run` must be a live handle and `out` point to `capacity` doubles.
enum DdsStatus dds_run_image(const struct DdsRun *run,
                             enum DdsImage which,
                             double *out,
                             uintptr_t capacity);

// Final latent code; needs `latent_dim` doubles.
//
// # Safety
// `run` must be a live handle and `out` point to `capacity` doubles.
enum DdsStatus dds_run_latent(const struct DdsRun *run, double *out, uintptr_t capacity);

// Global SSIM of two `[0, 1]` buffers of `len` values.
//
// # Safety
// `x`, `y` must point to `len` doubles and `out` be writable.
enum DdsStatus dds_ssim(const double *x, const double *y, uintptr_t len, double *out);

// PSNR in dB of two `[0, 1]` buffers; `+inf` when identical.
//
// # Safety
// `x`, `y` must point to `len` doubles and `out` be writable.
enum DdsStatus dds_psnr(const double *x, const double *y, uintptr_t len, double *out);

// Fréchet distance between two row-major sample matrices of `dim` columns
// with `rows_a` and `rows_b` rows.
//
// # Safety
// `a` must point to `rows_a * dim` doubles, `b` to `rows_b * dim`, and
// `out` be writable.
enum DdsStatus dds_fid(const double *a,
                       uintptr_t rows_a,
                       const double *b,
                       uintptr_t rows_b,
                       uintptr_t dim,
                       double *out);

// Copies the message of the last error into a caller buffer, truncating
// and always NUL-terminating. Returns the full message length.
//
// # Safety
// `buf` must be null or point to `capacity` writable bytes.
uintptr_t dds_copy_last_error(char *buf, uintptr_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDS_H */
