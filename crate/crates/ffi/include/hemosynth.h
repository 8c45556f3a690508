#ifndef HEMOSYNTH_H
#define HEMOSYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_ARGUMENT = 1,
  HS_STATUS_IO = 2,
  HS_STATUS_FORMAT = 3,
  HS_STATUS_ALIGNMENT = 4,
  HS_STATUS_INVALID_PARAMETER = 5,
  HS_STATUS_INVALID_INPUT = 6,
  HS_STATUS_DEGENERATE = 7,
  HS_STATUS_UNSTABLE = 8,
  HS_STATUS_SYNTHESIS_FAILED = 9,
  HS_STATUS_NOT_FOUND = 10,
  HS_STATUS_PANIC = 11,
} HsStatus;

/**
 * Tissue label map, x fastest, one class code per voxel.
 */
typedef struct HsLabelMap HsLabelMap;

/**
 * Intensity volume, x fastest.
 */
typedef struct HsVolume HsVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call on the same thread.
 */
const char *hs_last_error_message(void);

/**
 * Loads a NIfTI-1 volume (`.nii` or `.nii.gz`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_volume_load(const char *path, struct HsVolume **out_volume);

/**
 * Writes a volume as float32 NIfTI-1, gzipped when the path ends in `.gz`.
 *
 * # Safety
 * `volume` must be a live handle and `path` a NUL-terminated string.
 */
enum HsStatus hs_volume_save(const struct HsVolume *volume, const char *path);

/**
 * # Safety
 * `volume` must be NULL or a handle not yet freed.
 */
void hs_volume_free(struct HsVolume *volume);

/**
 * # Safety
 * `volume` must be a live handle; `dims` must hold 3 elements.
 */
enum HsStatus hs_volume_dims(const struct HsVolume *volume, size_t *dims);

/**
 * Voxel spacing in mm.
 *
 * # Safety
 * `volume` must be a live handle; `spacing` must hold 3 elements.
 */
enum HsStatus hs_volume_spacing(const struct HsVolume *volume, double *spacing);

/**
 * Borrowed voxel data, `nx * ny * nz` floats, x fastest. NULL for a NULL
 * handle. Valid while the handle lives.
 *
 * # Safety
 * `volume` must be NULL or a live handle.
 */
const float *hs_volume_data(const struct HsVolume *volume);

/**
 * Loads a tissue label map.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_labels` must be writable.
 */
enum HsStatus hs_labelmap_load(const char *path, struct HsLabelMap **out_labels);

/**
 * # Safety
 * `labels` must be NULL or a handle not yet freed.
 */
void hs_labelmap_free(struct HsLabelMap *labels);

/**
 * # Safety
 * `labels` must be a live handle; `dims` must hold 3 elements.
 */
enum HsStatus hs_labelmap_dims(const struct HsLabelMap *labels, size_t *dims);

/**
 * Borrowed class codes (0 background .. 8 corpus callosum), x fastest.
 *
 * # Safety
 * `labels` must be NULL or a live handle.
 */
const uint8_t *hs_labelmap_data(const struct HsLabelMap *labels);

/**
 * Generates a normal phantom case of the given size.
 *
 * # Safety
 * Both out pointers must be writable.
 */
enum HsStatus hs_phantom_generate(size_t nx,
                                  size_t ny,
                                  size_t nz,
                                  uint64_t seed,
                                  struct HsVolume **out_volume,
                                  struct HsLabelMap **out_labels);

/**
 * Case anomaly score under the reference scorer: the maximum heat over all
 * region-of-interest slices. Intensities outside [0, 1] are min-max
 * normalized first, as in the command line pipeline.
 *
 * # Safety
 * Both handles must be live.
 */
enum HsStatus hs_case_score(const struct HsVolume *volume,
                            const struct HsLabelMap *labels,
                            double *out_score);

/**
 * Area under the ROC curve (trapezoidal, ties count half).
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out_value` must be writable.
 */
enum HsStatus hs_auroc(const double *scores, const uint8_t *labels, size_t n, double *out_value);

/**
 * Area under the precision-recall curve (step interpolation).
 *
 * # Safety
 * As for [`hs_auroc`].
 */
enum HsStatus hs_aupr(const double *scores, const uint8_t *labels, size_t n, double *out_value);

/**
 * Threshold maximizing sensitivity + specificity - 1; a sample is
 * positive when its score is strictly above it.
 *
 * # Safety
 * As for [`hs_auroc`].
 */
enum HsStatus hs_youden_threshold(const double *scores,
                                  const uint8_t *labels,
                                  size_t n,
                                  double *out_value);

/**
 * Paired DeLong test of two AUROCs on the same samples.
 *
 * # Safety
 * `scores_a`, `scores_b` and `labels` must hold `n` elements; the out
 * pointers must be writable.
 */
enum HsStatus hs_delong_test(const double *scores_a,
                             const double *scores_b,
                             const uint8_t *labels,
                             size_t n,
                             double *out_z,
                             double *out_p);

/**
 * Wilson score interval for `k` successes out of `n`.
 *
 * # Safety
 * The out pointers must be writable.
 */
enum HsStatus hs_wilson_interval(size_t k, size_t n, double level, double *out_lo, double *out_hi);

/**
 * Dice similarity of two masks of `n` elements; 1 when both are empty.
 *
 * # Safety
 * `a` and `b` must hold `n` elements; `out_value` must be writable.
 */
enum HsStatus hs_dsc(const uint8_t *a, const uint8_t *b, size_t n, double *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEMOSYNTH_H */
