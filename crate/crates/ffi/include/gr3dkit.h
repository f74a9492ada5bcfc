#ifndef GR3DKIT_H
#define GR3DKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum Gr3dStatus {
  GR3D_STATUS_OK = 0,
  GR3D_STATUS_NULL_POINTER = 1,
  GR3D_STATUS_INVALID_UTF8 = 2,
  GR3D_STATUS_INVALID_ARGUMENT = 3,
  GR3D_STATUS_INVALID_BOX = 4,
  GR3D_STATUS_DEGENERATE_GEOMETRY = 5,
  GR3D_STATUS_PARSE_ERROR = 6,
  GR3D_STATUS_PROTOCOL_VIOLATION = 7,
  GR3D_STATUS_NO_VALID_DEPTH = 8,
  GR3D_STATUS_EMPTY_INPUT = 9,
  GR3D_STATUS_IO = 10,
  GR3D_STATUS_PANIC = 99,
} Gr3dStatus;

/**
 * Opaque region-insertion protocol state.
 */
typedef struct Gr3dProtocol Gr3dProtocol;

/**
 * Opaque incremental parser.
 */
typedef struct Gr3dStreamParser Gr3dStreamParser;

typedef struct Gr3dNormalized {
  uint32_t width;
  uint32_t height;
  double scale;
} Gr3dNormalized;

typedef struct Gr3dGcotReport {
  double a_acc;
  double g_acc;
  double consistency;
  size_t num_records;
} Gr3dGcotReport;

/**
 * What the decoder should do after a protocol call.
 */
typedef struct Gr3dAction {
  /**
   * True when generation must pause until a region is inserted.
   */
  bool paused;
  /**
   * The pending box when `paused`.
   */
  double region[4];
} Gr3dAction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *gr3d_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be freed twice.
 */
void gr3d_string_free(char *s);

/**
 * 3D IoU of two 9-number boxes `[x, y, z, w, h, l, pitch, roll, yaw]`.
 *
 * # Safety
 * `a` and `b` must point to 9 doubles; `out` must be writable.
 */
enum Gr3dStatus gr3d_iou3d(const double *a, const double *b, double *out);

/**
 * Row-major `n x m` IoU matrix between `n` and `m` packed 9-number boxes.
 * Degenerate pairs are written as 0.
 *
 * # Safety
 * `a` holds `9 n` doubles, `b` holds `9 m`, `out` has room for `n m`.
 */
enum Gr3dStatus gr3d_iou3d_matrix(const double *a,
                                  size_t n,
                                  const double *b,
                                  size_t m,
                                  double *out);

/**
 * IoU of two `[x1, y1, x2, y2]` boxes.
 *
 * # Safety
 * `a` and `b` must point to 4 doubles; `out` must be writable.
 */
enum Gr3dStatus gr3d_iou2d(const double *a, const double *b, double *out);

/**
 * Image size after rescaling to a 1000 px focal length.
 *
 * # Safety
 * `out` must be writable.
 */
enum Gr3dStatus gr3d_normalize_intrinsics(double fx,
                                          double fy,
                                          double cx,
                                          double cy,
                                          uint32_t width,
                                          uint32_t height,
                                          struct Gr3dNormalized *out);

/**
 * Parses grounded text into tokens, one JSON object per line. With
 * `strict` false, malformed spans become `malformed` tokens.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum Gr3dStatus gr3d_parse(const char *text, bool strict, char **out);

/**
 * Inverse of [`gr3d_parse`]: renders token lines back to grounded text.
 *
 * # Safety
 * `tokens_jsonl` must be a NUL-terminated string; `out` must be writable.
 */
enum Gr3dStatus gr3d_serialize(const char *tokens_jsonl, char **out);

/**
 * Detection AP. `kind` is `"3d"` or `"2d"`; prediction and ground-truth
 * text use the command-line file format. `thresholds` may be NULL for the
 * default sweep. The JSON report is byte-identical to the command line's.
 *
 * # Safety
 * String arguments must be NUL-terminated (or NULL where allowed); `out`
 * must be writable.
 */
enum Gr3dStatus gr3d_evaluate(const char *kind,
                              const char *pred_jsonl,
                              const char *gt_jsonl,
                              const char *thresholds,
                              bool all_points,
                              size_t jobs,
                              char **out);

/**
 * Grounded-reasoning accuracy over record lines.
 *
 * # Safety
 * `records_jsonl` must be NUL-terminated; `out` must be writable.
 */
enum Gr3dStatus gr3d_evaluate_gcot(const char *records_jsonl, struct Gr3dGcotReport *out);

/**
 * Samples up to `n` depth-backed 3D points inside `region` (`[x1, y1, x2,
 * y2]`). `depth` is a row-major `width x height` raster in meters; `mask`
 * may be NULL, otherwise zero bytes mark invalid pixels. Points are written
 * as `x, y, z` triples into `out_xyz` (room for `3 n` doubles) and their
 * number into `out_count`.
 *
 * # Safety
 * Buffers must have the sizes described above.
 */
enum Gr3dStatus gr3d_sample_region_points(const float *depth,
                                          const uint8_t *mask,
                                          uint32_t width,
                                          uint32_t height,
                                          double fx,
                                          double fy,
                                          double cx,
                                          double cy,
                                          const double *region,
                                          size_t n,
                                          uint64_t seed,
                                          double *out_xyz,
                                          size_t *out_count);

struct Gr3dStreamParser *gr3d_stream_parser_new(void);

/**
 * # Safety
 * `p` must come from [`gr3d_stream_parser_new`] and not be used afterwards.
 */
void gr3d_stream_parser_free(struct Gr3dStreamParser *p);

/**
 * Feeds `len` bytes; events completed so far are returned as JSON lines.
 *
 * # Safety
 * `p` must be a live parser, `chunk` must hold `len` bytes and `out` must
 * be writable.
 */
enum Gr3dStatus gr3d_stream_parser_feed(struct Gr3dStreamParser *p,
                                        const uint8_t *chunk,
                                        size_t len,
                                        char **out);

/**
 * Flushes the parser at end of input.
 *
 * # Safety
 * `p` must be a live parser and `out` writable.
 */
enum Gr3dStatus gr3d_stream_parser_finish(struct Gr3dStreamParser *p, char **out);

struct Gr3dProtocol *gr3d_protocol_new(void);

/**
 * # Safety
 * `p` must come from [`gr3d_protocol_new`] and not be used afterwards.
 */
void gr3d_protocol_free(struct Gr3dProtocol *p);

/**
 * Consumes decoder output. `events` (may be NULL) receives the parse
 * events as JSON lines.
 *
 * # Safety
 * `p` must be live, `chunk` NUL-terminated and `out_action` writable.
 */
enum Gr3dStatus gr3d_protocol_decode(struct Gr3dProtocol *p,
                                     const char *chunk,
                                     struct Gr3dAction *out_action,
                                     char **events);

/**
 * Inserts the region for the pending box and resumes decoding.
 *
 * # Safety
 * `p` must be live, `region` must hold 4 doubles and `out_action` writable.
 */
enum Gr3dStatus gr3d_protocol_insert_region(struct Gr3dProtocol *p,
                                            const double *region,
                                            struct Gr3dAction *out_action,
                                            char **events);

/**
 * Ends decoding and returns the segment layout as JSON lines.
 *
 * # Safety
 * `p` must be live and `out` writable.
 */
enum Gr3dStatus gr3d_protocol_finish(struct Gr3dProtocol *p, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GR3DKIT_H */
