#ifndef VOLCAP_H
#define VOLCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values match the CLI exit codes where the
 * classes overlap.
 */
typedef enum VcStatus {
  VC_OK = 0,
  /**
   * Writing a file failed.
   */
  VC_OUTPUT = 1,
  /**
   * Bad argument, missing file or invalid parameter.
   */
  VC_INPUT = 2,
  /**
   * Malformed data or mismatched shapes.
   */
  VC_FORMAT = 3,
  /**
   * Degenerate geometry such as collinear correspondences.
   */
  VC_NUMERICAL = 4,
  VC_NULL_POINTER = 5,
  VC_PANIC = 6,
} VcStatus;

typedef enum VcChannel {
  VC_DEPTH = 0,
  VC_COLOR = 1,
} VcChannel;

typedef enum VcAction {
  VC_RENDER = 0,
  VC_SKIP = 1,
  VC_JUMP_TO = 2,
  VC_WAIT = 3,
} VcAction;

/**
 * Opaque camera calibration.
 */
typedef struct VcCamera VcCamera;

/**
 * Opaque temporal filter for one depth stream.
 */
typedef struct VcFilter VcFilter;

/**
 * Opaque triangle mesh.
 */
typedef struct VcMesh VcMesh;

/**
 * Opaque synchronizer with a queue of decisions not yet collected.
 */
typedef struct VcSync VcSync;

/**
 * Temporal filter parameters; see [`vc_filter_params_default`].
 */
typedef struct VcFilterParams {
  uint64_t historic_window_ms;
  size_t small_n;
  uint16_t small_threshold_mm;
  size_t large_n2;
  uint16_t large_lambda_mm;
  double large_ratio;
} VcFilterParams;

/**
 * Refinement passes to run after the grid mesh is built.
 */
typedef struct VcMeshStages {
  bool refine;
  bool feather;
  bool prune;
} VcMeshStages;

typedef struct VcSyncPolicy {
  uint64_t out_of_order_wait_ms;
  uint64_t max_lag_ms;
  uint32_t delivery_fps;
  uint32_t capture_fps;
} VcSyncPolicy;

/**
 * One renderer decision. `frame_number` is 0 for `VC_WAIT`.
 */
typedef struct VcDecision {
  uint64_t time_us;
  enum VcAction action;
  uint32_t frame_number;
} VcDecision;

typedef struct VcSyncStats {
  uint64_t frames;
  uint64_t rendered;
  uint64_t jumps;
  uint64_t skipped;
  uint64_t superseded;
  double mean_render_latency_ms;
} VcSyncStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *vc_last_error(void);

/**
 * Library version as a static string.
 */
const char *vc_version(void);

/**
 * The built-in 320x288 depth / 1920x1080 color pinhole model.
 */
struct VcCamera *vc_camera_default(void);

/**
 * Loads a camera JSON file into `*out`.
 *
 * # Safety
 * `path` is a nul-terminated string and `out` is writable.
 */
enum VcStatus vc_camera_load(const char *path, struct VcCamera **out);

/**
 * Depth sensor size in pixels.
 *
 * # Safety
 * `camera` is a live handle; `width` and `height` are writable.
 */
enum VcStatus vc_camera_depth_size(const struct VcCamera *camera, size_t *width, size_t *height);

/**
 * # Safety
 * `camera` is null or a handle not yet freed.
 */
void vc_camera_free(struct VcCamera *camera);

/**
 * Least-squares rigid fit of `n` point pairs given as packed `xyz` triples.
 * Writes the row-major rotation to `rotation[9]`, the translation to
 * `translation[3]` and, when non-null, the summed squared residual.
 *
 * # Safety
 * `a` and `b` hold `3 * n` doubles; `rotation` and `translation` are
 * writable for 9 and 3 doubles.
 */
enum VcStatus vc_fit_rigid(const double *a,
                           const double *b,
                           size_t n,
                           double *rotation,
                           double *translation,
                           double *residual_out);

struct VcFilterParams vc_filter_params_default(void);

/**
 * Creates a filter for `width x height` depth frames. `params` may be null
 * for the defaults.
 *
 * # Safety
 * `params` is null or readable; `out` is writable.
 */
enum VcStatus vc_filter_new(size_t width,
                            size_t height,
                            const struct VcFilterParams *params,
                            struct VcFilter **out);

/**
 * Filters one frame of `len` millimeter readings (0 = invalid) into
 * `output`, which may alias `depth`.
 *
 * # Safety
 * `filter` is a live handle; `depth` is readable and `output` writable for
 * `len` values.
 */
enum VcStatus vc_filter_process(struct VcFilter *filter,
                                uint32_t frame_number,
                                uint64_t timestamp_us,
                                const uint16_t *depth,
                                uint16_t *output,
                                size_t len);

/**
 * # Safety
 * `filter` is null or a handle not yet freed.
 */
void vc_filter_free(struct VcFilter *filter);

/**
 * Builds a mesh from a depth frame (millimeters, row-major) and an RGB8
 * color frame sized for `camera`. `stages` may be null to run every pass.
 *
 * # Safety
 * `camera` is a live handle; `depth` holds `depth_len` values and `rgb`
 * holds `rgb_len` bytes; `out` is writable.
 */
enum VcStatus vc_mesh_build(const struct VcCamera *camera,
                            uint32_t frame_number,
                            const uint16_t *depth,
                            size_t depth_len,
                            const uint8_t *rgb,
                            size_t rgb_len,
                            const struct VcMeshStages *stages,
                            struct VcMesh **out);

/**
 * Valid vertices; 0 for a null handle.
 *
 * # Safety
 * `mesh` is null or a live handle.
 */
size_t vc_mesh_vertex_count(const struct VcMesh *mesh);

/**
 * Triangles; 0 for a null handle.
 *
 * # Safety
 * `mesh` is null or a live handle.
 */
size_t vc_mesh_triangle_count(const struct VcMesh *mesh);

/**
 * Copies up to `capacity` triangles as grid vertex index triples into
 * `indices` (3 values each) and returns how many were copied.
 *
 * # Safety
 * `mesh` is a live handle and `indices` is writable for `3 * capacity`
 * values.
 */
size_t vc_mesh_triangles(const struct VcMesh *mesh, uint32_t *indices, size_t capacity);

/**
 * Writes the mesh as ASCII PLY.
 *
 * # Safety
 * `mesh` is a live handle and `path` a nul-terminated string.
 */
enum VcStatus vc_mesh_write_ply(const struct VcMesh *mesh, const char *path);

/**
 * # Safety
 * `mesh` is null or a handle not yet freed.
 */
void vc_mesh_free(struct VcMesh *mesh);

struct VcSyncPolicy vc_sync_policy_default(void);

/**
 * `policy` may be null for the defaults.
 *
 * # Safety
 * `policy` is null or readable; `out` is writable.
 */
enum VcStatus vc_sync_new(const struct VcSyncPolicy *policy, struct VcSync **out);

/**
 * Feeds one packet. Packets must arrive in non-decreasing arrival order.
 * Resulting decisions are queued for [`vc_sync_next`].
 *
 * # Safety
 * `sync` is a live handle.
 */
enum VcStatus vc_sync_push(struct VcSync *sync,
                           enum VcChannel channel,
                           uint32_t frame_number,
                           uint64_t send_time_us,
                           uint64_t arrival_time_us);

/**
 * Advances virtual time to `now_us`, queueing timeouts (or one wait).
 *
 * # Safety
 * `sync` is a live handle.
 */
enum VcStatus vc_sync_poll(struct VcSync *sync, uint64_t now_us);

/**
 * Times out every outstanding frame at the end of a stream.
 *
 * # Safety
 * `sync` is a live handle.
 */
enum VcStatus vc_sync_finish(struct VcSync *sync);

/**
 * Pops the oldest queued decision into `out`. Returns false when the queue
 * is empty or an argument is null.
 *
 * # Safety
 * `sync` is null or a live handle; `out` is null or writable.
 */
bool vc_sync_next(struct VcSync *sync, struct VcDecision *out);

/**
 * # Safety
 * `sync` is a live handle; `out` is writable.
 */
enum VcStatus vc_sync_stats(const struct VcSync *sync, struct VcSyncStats *out);

/**
 * # Safety
 * `sync` is null or a handle not yet freed.
 */
void vc_sync_free(struct VcSync *sync);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLCAP_H */
