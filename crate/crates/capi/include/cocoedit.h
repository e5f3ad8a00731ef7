#ifndef COCOEDIT_H
#define COCOEDIT_H

/* Generated by cbindgen from cocoedit-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum CocoStatus {
  COCO_STATUS_OK = 0,
  COCO_STATUS_NULL_POINTER = 1,
  COCO_STATUS_INVALID_ARGUMENT = 2,
  COCO_STATUS_PARSE_ERROR = 3,
  COCO_STATUS_INVALID_MASK = 4,
  COCO_STATUS_EMPTY_REGION = 5,
  COCO_STATUS_UNDEFINED_CORRELATION = 6,
  COCO_STATUS_LOOKUP_ERROR = 7,
  COCO_STATUS_IO_ERROR = 8,
  COCO_STATUS_PANIC = 9,
} CocoStatus;

// Which masked metric to compute.
typedef enum CocoMetricKind {
  COCO_METRIC_KIND_MSE = 0,
  COCO_METRIC_KIND_PSNR_DB = 1,
  COCO_METRIC_KIND_PSNR_NORM = 2,
  COCO_METRIC_KIND_SSIM = 3,
} CocoMetricKind;

// Clipping-scale selection for [`cocoedit_optimality`].
typedef enum CocoZcMode {
  // Group standard deviation plus a small floor.
  COCO_ZC_MODE_STD = 0,
  // Largest centered magnitude plus a small floor.
  COCO_ZC_MODE_MAX_ABS = 1,
  // The fixed value passed alongside.
  COCO_ZC_MODE_FIXED = 2,
} CocoZcMode;

// Opaque intensity grid handle.
typedef struct CocoGrid CocoGrid;

// Opaque binary edit-mask handle.
typedef struct CocoMask CocoMask;

// Metric parameters; obtain defaults from [`cocoedit_metric_params_default`].
typedef struct CocoMetricParams {
  // PSNR normalization ceiling in dB.
  double tau_db;
  double max_intensity;
  // Odd SSIM window size.
  size_t window_size;
  double window_sigma;
} CocoMetricParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent error on this thread. The pointer is
// valid until the next failing call on the same thread.
const char *cocoedit_last_error_message(void);

// Create a grid from a row-major buffer of height*width values.
//
// # Safety
// `values` must point to `height * width` readable doubles and `out` must
// be a valid destination pointer.
enum CocoStatus cocoedit_grid_new(size_t height,
                                  size_t width,
                                  const double *values,
                                  struct CocoGrid **out);

// Read an 8-bit PGM (P2/P5, maxval 255) as an intensity grid in [0, 1].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid destination.
enum CocoStatus cocoedit_grid_read_pgm(const char *path, struct CocoGrid **out);

// Write a grid as binary P5 with maxval 255.
//
// # Safety
// `grid` must be a live handle from this library; `path` NUL-terminated.
enum CocoStatus cocoedit_grid_write_pgm(const struct CocoGrid *grid, const char *path);

// # Safety
// `grid` must be a live handle from this library.
size_t cocoedit_grid_height(const struct CocoGrid *grid);

// # Safety
// `grid` must be a live handle from this library.
size_t cocoedit_grid_width(const struct CocoGrid *grid);

// Copy the grid values into `out`, which must hold height*width doubles.
//
// # Safety
// `grid` must be live and `out` writable for `len` doubles.
enum CocoStatus cocoedit_grid_values(const struct CocoGrid *grid, double *out, size_t len);

// # Safety
// `grid` must come from this library and not already be freed.
void cocoedit_grid_free(struct CocoGrid *grid);

// Create a mask from a row-major buffer of 0/1 bytes (1 = edit region).
//
// # Safety
// `bits` must point to `height * width` readable bytes; `out` valid.
enum CocoStatus cocoedit_mask_new(size_t height,
                                  size_t width,
                                  const uint8_t *bits,
                                  struct CocoMask **out);

// Read a PGM mask whose pixels are strictly 0 or 255.
//
// # Safety
// `path` NUL-terminated; `out` valid.
enum CocoStatus cocoedit_mask_read_pgm(const char *path, struct CocoMask **out);

// Write a mask as binary P5 with pixels in {0, 255}.
//
// # Safety
// `mask` must be live; `path` NUL-terminated.
enum CocoStatus cocoedit_mask_write_pgm(const struct CocoMask *mask, const char *path);

// Square dilation by a Chebyshev radius; returns a new mask handle.
//
// # Safety
// `mask` must be live; `out` valid.
enum CocoStatus cocoedit_mask_dilate(const struct CocoMask *mask,
                                     size_t radius,
                                     struct CocoMask **out);

// Any-pooling downsample by an integer factor; returns a new mask handle.
//
// # Safety
// `mask` must be live; `out` valid.
enum CocoStatus cocoedit_mask_downsample(const struct CocoMask *mask,
                                         size_t factor,
                                         struct CocoMask **out);

// Bitwise complement; returns a new mask handle.
//
// # Safety
// `mask` must be live; `out` valid.
enum CocoStatus cocoedit_mask_complement(const struct CocoMask *mask, struct CocoMask **out);

// # Safety
// `mask` must be a live handle from this library.
size_t cocoedit_mask_active_count(const struct CocoMask *mask);

// # Safety
// `mask` must come from this library and not already be freed.
void cocoedit_mask_free(struct CocoMask *mask);

struct CocoMetricParams cocoedit_metric_params_default(void);

// Compute a masked metric between `a` and `b` over the 1-bits of `region`.
//
// `region` marks the pixels to evaluate; callers scoring non-edit
// consistency should pass the complement of the edit mask.
//
// # Safety
// All handles must be live; `params`, `out_value`, `out_active_pixels`
// must be valid (the last may be NULL if the count is not needed).
enum CocoStatus cocoedit_masked_metric(enum CocoMetricKind kind,
                                       const struct CocoGrid *a,
                                       const struct CocoGrid *b,
                                       const struct CocoMask *region,
                                       const struct CocoMetricParams *params,
                                       double *out_value,
                                       size_t *out_active_pixels);

// Pixel-similarity reward of `sample` against `input` over the complement
// of `edit_mask`: `w_ssim * SSIM + (1 - w_ssim) * normalized PSNR`.
//
// # Safety
// All handles must be live; `params` and `out_value` valid.
enum CocoStatus cocoedit_sim_reward(const struct CocoGrid *input,
                                    const struct CocoGrid *sample,
                                    const struct CocoMask *edit_mask,
                                    const struct CocoMetricParams *params,
                                    double w_ssim,
                                    double *out_value);

// Sample Pearson correlation of two equally long sequences.
//
// # Safety
// `xs` and `ys` must point to `len` readable doubles; `out_value` valid.
enum CocoStatus cocoedit_pearson(const double *xs, const double *ys, size_t len, double *out_value);

// Center raw group rewards and map them to optimality probabilities in
// [0, 1]; also reports the clipping scale that was used.
//
// # Safety
// `raw` must point to `len` readable doubles and `out_optimality` to `len`
// writable doubles; `out_z_c` may be NULL.
enum CocoStatus cocoedit_optimality(const double *raw,
                                    size_t len,
                                    enum CocoZcMode mode,
                                    double fixed_z_c,
                                    double *out_optimality,
                                    double *out_z_c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COCOEDIT_H */
