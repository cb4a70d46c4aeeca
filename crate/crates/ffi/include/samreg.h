#ifndef SAMREG_H
#define SAMREG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SamregStatus {
  SAMREG_STATUS_OK = 0,
  SAMREG_STATUS_NULL_POINTER = 1,
  SAMREG_STATUS_INVALID_ARGUMENT = 2,
  SAMREG_STATUS_DIMENSION = 3,
  SAMREG_STATUS_EMPTY_INPUT = 4,
  SAMREG_STATUS_IO = 5,
  SAMREG_STATUS_FORMAT = 6,
  SAMREG_STATUS_DIVERGENCE = 7,
  SAMREG_STATUS_BUFFER_TOO_SMALL = 8,
  SAMREG_STATUS_INTERNAL = 9,
} SamregStatus;

typedef enum SamregMatchMode {
  SAMREG_MATCH_MODE_ONE_TO_ONE = 0,
  SAMREG_MATCH_MODE_ONE_TO_MANY = 1,
} SamregMatchMode;

/**
 * Opaque displacement field handle.
 */
typedef struct SamregField SamregField;

/**
 * Opaque image handle.
 */
typedef struct SamregImage SamregImage;

/**
 * Opaque ROI pair set handle.
 */
typedef struct SamregPairSet SamregPairSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *samreg_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *samreg_version(void);

/**
 * Create an image from `ndim` (2 or 3) extents and `dims` product values in
 * row-major order. Spacing is 1 on every axis.
 *
 * # Safety
 * `dims` must point to `ndim` values and `data` to their product; `out` must be writable.
 */
enum SamregStatus samreg_image_new(size_t ndim,
                                   const size_t *dims,
                                   const double *data,
                                   struct SamregImage **out);

/**
 * Read a single-channel grid file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SamregStatus samreg_image_read(const char *path, struct SamregImage **out);

/**
 * Write an image as a 32-bit float grid file.
 *
 * # Safety
 * `image` must be a live handle and `path` a NUL-terminated string.
 */
enum SamregStatus samreg_image_write(const struct SamregImage *image, const char *path);

/**
 * Number of voxels of an image.
 *
 * # Safety
 * `image` must be a live handle or null (which yields 0).
 */
size_t samreg_image_len(const struct SamregImage *image);

/**
 * Copy the image values into `buf`, which must hold `samreg_image_len` values.
 *
 * # Safety
 * `image` must be a live handle and `buf` writable for `len` values.
 */
enum SamregStatus samreg_image_copy(const struct SamregImage *image, double *buf, size_t len);

/**
 * # Safety
 * `image` must come from this library and not be used afterwards.
 */
void samreg_image_free(struct SamregImage *image);

/**
 * Segment, embed and match two 2D images with the builtin pipeline.
 *
 * # Safety
 * Image handles must be live and `out` writable.
 */
enum SamregStatus samreg_register(const struct SamregImage *moving,
                                  const struct SamregImage *fixed,
                                  double epsilon,
                                  enum SamregMatchMode mode,
                                  struct SamregPairSet **out);

/**
 * # Safety
 * `pairs` must be a live handle or null (which yields 0).
 */
size_t samreg_pairs_len(const struct SamregPairSet *pairs);

/**
 * Candidate ids and similarity of pair `index`.
 *
 * # Safety
 * `pairs` must be a live handle and the out pointers writable.
 */
enum SamregStatus samreg_pairs_get(const struct SamregPairSet *pairs,
                                   size_t index,
                                   size_t *moving_id,
                                   size_t *fixed_id,
                                   double *similarity);

/**
 * # Safety
 * `pairs` must come from this library and not be used afterwards.
 */
void samreg_pairs_free(struct SamregPairSet *pairs);

/**
 * Fit a displacement field to a pair set with default settings apart
 * from `lambda` and the per-level iteration cap.
 *
 * # Safety
 * `pairs` must be a live handle and `out` writable.
 */
enum SamregStatus samreg_fit(const struct SamregPairSet *pairs,
                             double lambda,
                             size_t iterations,
                             struct SamregField **out);

/**
 * Zero displacement field on the grid of `image`.
 *
 * # Safety
 * `image` must be a live handle and `out` writable.
 */
enum SamregStatus samreg_field_zeros(const struct SamregImage *image, struct SamregField **out);

/**
 * Number of displacement components (voxels × axes).
 *
 * # Safety
 * `field` must be a live handle or null (which yields 0).
 */
size_t samreg_field_len(const struct SamregField *field);

/**
 * Copy the displacement vectors (axis fastest) into `buf`.
 *
 * # Safety
 * `field` must be a live handle and `buf` writable for `len` values.
 */
enum SamregStatus samreg_field_copy(const struct SamregField *field, double *buf, size_t len);

/**
 * # Safety
 * `field` must come from this library and not be used afterwards.
 */
void samreg_field_free(struct SamregField *field);

/**
 * Pull `image` back through `field` into a new image.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum SamregStatus samreg_warp(const struct SamregImage *image,
                              const struct SamregField *field,
                              struct SamregImage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAMREG_H */
