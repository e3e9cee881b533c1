#ifndef SEGVID_H
#define SEGVID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SegvidStatus {
  SEGVID_STATUS_OK = 0,
  SEGVID_STATUS_NULL_POINTER = 1,
  SEGVID_STATUS_INVALID_ARGUMENT = 2,
  SEGVID_STATUS_INVALID_EXTENT = 3,
  SEGVID_STATUS_SHAPE_MISMATCH = 4,
  SEGVID_STATUS_FORMAT = 5,
  SEGVID_STATUS_IO = 6,
  SEGVID_STATUS_RUNTIME = 7,
  SEGVID_STATUS_PANIC = 8,
} SegvidStatus;

/**
 * Codec handle.
 */
typedef struct SegvidCodec SegvidCodec;

/**
 * Segment plan handle.
 */
typedef struct SegvidPlan SegvidPlan;

/**
 * `T × H × W × C` float video handle.
 */
typedef struct SegvidVideo SegvidVideo;

/**
 * Timing prediction in the unit of the durations passed in.
 */
typedef struct SegvidTiming {
  double first_output;
  double full_output;
  double sequential_total;
} SegvidTiming;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version.
 */
const char *segvid_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `cap > 0`). Returns the full message length
 * including the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t segvid_last_error(char *buf, size_t cap);

/**
 * Builds the segment plan for `t` latent blocks, segment length `m` and `n`
 * neighbours.
 *
 * # Safety
 * `out` must be a valid pointer to receive the handle.
 */
enum SegvidStatus segvid_plan_new(size_t t, size_t m, size_t n, struct SegvidPlan **out);

/**
 * # Safety
 * `p` must be null or a handle from [`segvid_plan_new`] not yet freed.
 */
void segvid_plan_free(struct SegvidPlan *p);

/**
 * Number of segments S, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live plan handle.
 */
size_t segvid_plan_segment_count(const struct SegvidPlan *p);

/**
 * Start block and set sizes of segment `s` (1-based).
 *
 * # Safety
 * `p` must be a live plan handle; output pointers must be valid.
 */
enum SegvidStatus segvid_plan_segment(const struct SegvidPlan *p,
                                      size_t s,
                                      size_t *start,
                                      size_t *noisy_len,
                                      size_t *neighbor_len,
                                      size_t *window_len);

/**
 * Writes the 1-based window indices of segment `s` into `buf`. `len`
 * receives the window size; when it exceeds `cap` nothing is written and
 * `SEGVID_STATUS_INVALID_ARGUMENT` is returned.
 *
 * # Safety
 * `p` must be a live plan handle, `buf` must hold `cap` elements, `len` must
 * be valid.
 */
enum SegvidStatus segvid_plan_window(const struct SegvidPlan *p,
                                     size_t s,
                                     size_t *buf,
                                     size_t cap,
                                     size_t *len);

/**
 * Largest per-segment window token count for `h × w` latent blocks, or 0
 * for a null handle.
 *
 * # Safety
 * `p` must be null or a live plan handle.
 */
size_t segvid_plan_max_tokens(const struct SegvidPlan *p, size_t h, size_t w);

/**
 * Copies `len = t·h·w·c` row-major floats into a new video.
 *
 * # Safety
 * `data` must point to `len` readable floats; `out` must be valid.
 */
enum SegvidStatus segvid_video_new(size_t t,
                                   size_t h,
                                   size_t w,
                                   size_t c,
                                   const float *data,
                                   size_t len,
                                   struct SegvidVideo **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum SegvidStatus segvid_video_load(const char *path, struct SegvidVideo **out);

/**
 * # Safety
 * `v` must be a live video handle; `path` a NUL-terminated string.
 */
enum SegvidStatus segvid_video_save(const struct SegvidVideo *v, const char *path);

/**
 * Writes `[T, H, W, C]` into `dims`.
 *
 * # Safety
 * `v` must be a live video handle; `dims` must hold 4 elements.
 */
enum SegvidStatus segvid_video_dims(const struct SegvidVideo *v, size_t *dims);

/**
 * Borrowed pointer to the video's values, valid until the handle is freed.
 * `len` receives the element count. Returns null for a null handle.
 *
 * # Safety
 * `v` must be null or a live video handle; `len` must be null or valid.
 */
const float *segvid_video_data(const struct SegvidVideo *v, size_t *len);

/**
 * FNV-1a checksum over the bit patterns of the values; 0 for null.
 *
 * # Safety
 * `v` must be null or a live video handle.
 */
uint64_t segvid_video_checksum(const struct SegvidVideo *v);

/**
 * # Safety
 * `v` must be null or a handle not yet freed.
 */
void segvid_video_free(struct SegvidVideo *v);

/**
 * # Safety
 * `out` must be valid.
 */
enum SegvidStatus segvid_codec_new(size_t spatial,
                                   size_t temporal,
                                   size_t channels,
                                   uint64_t lift_seed,
                                   struct SegvidCodec **out);

/**
 * # Safety
 * `c` must be null or a handle not yet freed.
 */
void segvid_codec_free(struct SegvidCodec *c);

/**
 * Encodes a pixel video into a new latent video.
 *
 * # Safety
 * `c` and `v` must be live handles; `out` must be valid.
 */
enum SegvidStatus segvid_codec_encode(const struct SegvidCodec *c,
                                      const struct SegvidVideo *v,
                                      struct SegvidVideo **out);

/**
 * Decodes a latent video into a new pixel video.
 *
 * # Safety
 * `c` and `z` must be live handles; `out` must be valid.
 */
enum SegvidStatus segvid_codec_decode(const struct SegvidCodec *c,
                                      const struct SegvidVideo *z,
                                      struct SegvidVideo **out);

/**
 * Two-worker pipeline timing from `n` per-segment denoise and decode
 * durations.
 *
 * # Safety
 * `denoise` and `decode` must hold `n` values; `out` must be valid.
 */
enum SegvidStatus segvid_predict_timing(const double *denoise,
                                        const double *decode,
                                        size_t n,
                                        struct SegvidTiming *out);

/**
 * PSNR with peak 1.0; `+inf` for identical videos.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be valid.
 */
enum SegvidStatus segvid_psnr(const struct SegvidVideo *a,
                              const struct SegvidVideo *b,
                              double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SEGVID_H */
