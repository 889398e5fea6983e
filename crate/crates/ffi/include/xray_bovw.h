#ifndef XRAY_BOVW_H
#define XRAY_BOVW_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum XbwStatus {
  XBW_STATUS_OK = 0,
  XBW_STATUS_NULL_POINTER = 1,
  XBW_STATUS_INVALID_ARGUMENT = 2,
  XBW_STATUS_IO = 3,
  XBW_STATUS_FORMAT = 4,
  XBW_STATUS_ARTIFACT_MISMATCH = 5,
  XBW_STATUS_DATA = 6,
  XBW_STATUS_PANIC = 7,
} XbwStatus;

/**
 * Loaded vocabulary, model and configuration.
 */
typedef struct XbwDetector XbwDetector;

/**
 * Grayscale image handle.
 */
typedef struct XbwImage XbwImage;

/**
 * Inclusive pixel box.
 */
typedef struct XbwBox {
  uint32_t x_min;
  uint32_t y_min;
  uint32_t x_max;
  uint32_t y_max;
} XbwBox;

typedef struct XbwDetection {
  struct XbwBox bbox;
  double score;
  uint32_t contributing_boxes;
} XbwDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *xbw_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated and
 * NUL-terminated) and returns the full message length, 0 if none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t xbw_last_error(char *buf, uintptr_t len);

/**
 * Creates an image from 8-bit row-major pixels.
 *
 * # Safety
 * `pixels` must point to `width * height` readable bytes; `out` must be valid
 * for writes.
 */
enum XbwStatus xbw_image_from_gray8(uint32_t width,
                                    uint32_t height,
                                    const uint8_t *pixels,
                                    struct XbwImage **out);

/**
 * Loads a PNG or PNM file as grayscale.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum XbwStatus xbw_image_load(const char *path, struct XbwImage **out);

/**
 * # Safety
 * `img` must be null or a handle from this library not yet freed.
 */
void xbw_image_free(struct XbwImage *img);

/**
 * Loads the vocabulary and model files and checks them against the
 * configuration (`config_path` may be null for defaults).
 *
 * # Safety
 * Paths must be NUL-terminated strings (config may be null); `out` must be
 * valid for writes.
 */
enum XbwStatus xbw_detector_open(const char *vocab_path,
                                 const char *model_path,
                                 const char *config_path,
                                 struct XbwDetector **out);

/**
 * # Safety
 * `det` must be null or a handle from this library not yet freed.
 */
void xbw_detector_free(struct XbwDetector *det);

/**
 * Runs the full pipeline on one image. `*found` is 1 and `*out` filled when
 * a detection exists, 0 otherwise.
 *
 * # Safety
 * Handles must be live; `out` and `found` must be valid for writes.
 */
enum XbwStatus xbw_detect(const struct XbwDetector *det,
                          const struct XbwImage *img,
                          struct XbwDetection *out,
                          int32_t *found);

/**
 * Intersection over union of two inclusive boxes; -1 for inverted boxes.
 */
double xbw_iou(struct XbwBox a, struct XbwBox b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XRAY_BOVW_H */
