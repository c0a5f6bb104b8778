#ifndef VHI_H
#define VHI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum VhiStatus {
  VHI_STATUS_OK = 0,
  // NULL pointer, bad UTF-8, or a size that does not match.
  VHI_STATUS_INVALID_ARGUMENT = 1,
  // Input rejected by the pipeline (malformed file, inconsistent data).
  VHI_STATUS_VALIDATION = 2,
  VHI_STATUS_IO = 3,
  VHI_STATUS_GEOMETRY_MISMATCH = 4,
  // Unknown lesion id.
  VHI_STATUS_NOT_FOUND = 5,
  // Internal panic; the library state is unchanged.
  VHI_STATUS_PANIC = 6,
} VhiStatus;

// A candidate segmentation: both tiers plus labeled lesions.
typedef struct VhiCandidate VhiCandidate;

// A binary mask on a voxel grid.
typedef struct VhiMask VhiMask;

// A 3D intensity volume.
typedef struct VhiVolume VhiVolume;

// Intensity limits. `l_lower` is the sensitive limit, `l_upper` the
// conservative one.
typedef struct VhiThresholds {
  double l_lower;
  double l_upper;
  double n;
  bool clamped;
  uint64_t iterations;
} VhiThresholds;

// One candidate lesion. Bounding boxes are inclusive voxel coordinates.
typedef struct VhiLesionInfo {
  uint32_t id;
  uint64_t voxel_count;
  uint64_t conservative_voxel_count;
  uint64_t bbox_min[3];
  uint64_t bbox_max[3];
  double centroid[3];
} VhiLesionInfo;

// V_HI of both tiers.
typedef struct VhiMeasurement {
  uint64_t voxel_count_sensitive;
  double volume_mm3_sensitive;
  uint64_t voxel_count_conservative;
  double volume_mm3_conservative;
} VhiMeasurement;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing why the most recent call on this thread failed, or
// an empty string if it succeeded. The pointer stays valid until the
// next call into this library from the same thread.
const char *vhi_last_error_message(void);

// Library version, a static NUL-terminated string.
const char *vhi_version(void);

// Load a volume from a `.nii` file or a raw `.json` sidecar header.
//
// # Safety
// `path` must be a NUL-terminated string; `out_volume` must be writable.
enum VhiStatus vhi_volume_load(const char *path, struct VhiVolume **out_volume);

// Build a volume from `len` z-major values (`x` fastest).
//
// # Safety
// `dims` and `spacing_mm` point to 3 elements, `values` to `len`.
enum VhiStatus vhi_volume_from_data(const size_t *dims,
                                    const double *spacing_mm,
                                    const double *values,
                                    size_t len,
                                    struct VhiVolume **out_volume);

// Grid dimensions of a volume.
//
// # Safety
// `volume` is a live handle; `out_dims` points to 3 writable elements.
enum VhiStatus vhi_volume_dims(const struct VhiVolume *volume, size_t *out_dims);

// # Safety
// `volume` is NULL or a handle not yet freed.
void vhi_volume_free(struct VhiVolume *volume);

// Load a mask from RLE-JSON or NIfTI (nonzero = set).
//
// # Safety
// `path` must be a NUL-terminated string; `out_mask` must be writable.
enum VhiStatus vhi_mask_load(const char *path, struct VhiMask **out_mask);

// Build a mask from `len` z-major bytes; nonzero means set.
//
// # Safety
// `dims` and `spacing_mm` point to 3 elements, `bits` to `len`.
enum VhiStatus vhi_mask_from_data(const size_t *dims,
                                  const double *spacing_mm,
                                  const uint8_t *bits,
                                  size_t len,
                                  struct VhiMask **out_mask);

// Save a mask as RLE-JSON, or as NIfTI when the path ends in `.nii`.
//
// # Safety
// `mask` is a live handle; `path` a NUL-terminated string.
enum VhiStatus vhi_mask_save(const struct VhiMask *mask, const char *path);

// Number of set voxels.
//
// # Safety
// `mask` is a live handle; `out_count` is writable.
enum VhiStatus vhi_mask_count(const struct VhiMask *mask, uint64_t *out_count);

// # Safety
// `mask` is NULL or a handle not yet freed.
void vhi_mask_free(struct VhiMask *mask);

// Thresholds from the STIR intensities inside a normal-bone mask.
//
// # Safety
// `stir` and `normal_mask` are live handles; `out_thresholds` is writable.
enum VhiStatus vhi_compute_thresholds(const struct VhiVolume *stir,
                                      const struct VhiMask *normal_mask,
                                      struct VhiThresholds *out_thresholds);

// Thresholds from known quartiles and maximum of the normal-bone
// intensities.
//
// # Safety
// `out_thresholds` is writable.
enum VhiStatus vhi_thresholds_from_quartiles(double q_lower,
                                             double q_upper,
                                             double i_max,
                                             struct VhiThresholds *out_thresholds);

// Threshold the disease region, drop in-plane regions smaller than
// `min_region_px`, and label lesions.
//
// # Safety
// Handles are live; `thresholds` is readable; `out_candidate` writable.
enum VhiStatus vhi_candidate_build(const struct VhiVolume *stir,
                                   const struct VhiMask *disease_mask,
                                   const struct VhiThresholds *thresholds,
                                   size_t min_region_px,
                                   struct VhiCandidate **out_candidate);

// Number of lesions; ids run from 1 to this count.
//
// # Safety
// `candidate` is a live handle; `out_count` is writable.
enum VhiStatus vhi_candidate_lesion_count(const struct VhiCandidate *candidate,
                                          uint32_t *out_count);

// Summary of lesion `lesion_id`.
//
// # Safety
// `candidate` is a live handle; `out_info` is writable.
enum VhiStatus vhi_candidate_lesion_info(const struct VhiCandidate *candidate,
                                         uint32_t lesion_id,
                                         struct VhiLesionInfo *out_info);

// V_HI after removing the listed lesions (all others are kept).
//
// # Safety
// `candidate` is a live handle; `removed_ids` points to `n_removed`
// elements (may be NULL when zero); `out_measurement` is writable.
enum VhiStatus vhi_candidate_measure(const struct VhiCandidate *candidate,
                                     const uint32_t *removed_ids,
                                     size_t n_removed,
                                     struct VhiMeasurement *out_measurement);

// Copy of the sensitive (`conservative == false`) or conservative tier.
//
// # Safety
// `candidate` is a live handle; `out_mask` is writable.
enum VhiStatus vhi_candidate_mask(const struct VhiCandidate *candidate,
                                  bool conservative,
                                  struct VhiMask **out_mask);

// # Safety
// `candidate` is NULL or a handle not yet freed.
void vhi_candidate_free(struct VhiCandidate *candidate);

// Dice coefficient of two masks (1.0 when both are empty).
//
// # Safety
// `a` and `b` are live handles; `out_dice` is writable.
enum VhiStatus vhi_dice(const struct VhiMask *a, const struct VhiMask *b, double *out_dice);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VHI_H */
