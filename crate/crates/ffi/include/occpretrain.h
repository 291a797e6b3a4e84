#ifndef OCCPRETRAIN_H
#define OCCPRETRAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bytes needed for a hex digest plus its terminating NUL.
 */
#define OCCP_DIGEST_LEN 65

typedef enum OccpStatus {
  OCCP_STATUS_OK = 0,
  OCCP_STATUS_NULL_POINTER = 1,
  OCCP_STATUS_INVALID_ARGUMENT = 2,
  OCCP_STATUS_DOMAIN = 3,
  OCCP_STATUS_FORMAT = 4,
  OCCP_STATUS_IO = 5,
  OCCP_STATUS_CONTRACT = 6,
  OCCP_STATUS_BUFFER_TOO_SMALL = 7,
  OCCP_STATUS_PANIC = 8,
} OccpStatus;

/**
 * Pinhole camera with its camera-to-ego extrinsic.
 */
typedef struct OccpCamera OccpCamera;

/**
 * Model checkpoint with provenance.
 */
typedef struct OccpCheckpoint OccpCheckpoint;

/**
 * Voxel occupancy grid.
 */
typedef struct OccpGrid OccpGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *occp_version(void);

/**
 * Message of the last failure on this thread; empty if none. Valid until
 * the next failing call on the same thread.
 */
const char *occp_last_error(void);

/**
 * Voxelizes `count` ego-frame points (`xyz`, 3 doubles each). `labels`
 * holds one class id per point (1 ground, 2 static, 3 dynamic) or is null
 * for all-static. `dims` is (D, H, W) along (z, y, x).
 */
enum OccpStatus occp_voxelize(const double *xyz,
                              const uint8_t *labels,
                              size_t count,
                              const double *origin,
                              const double *voxel_size,
                              const size_t *dims,
                              struct OccpGrid **out);

/**
 * Writes (D, H, W) to `dims`.
 */
enum OccpStatus occp_grid_dims(const struct OccpGrid *grid, size_t *dims);

enum OccpStatus occp_grid_occupied_count(const struct OccpGrid *grid, size_t *out);

enum OccpStatus occp_grid_get(const struct OccpGrid *grid, size_t d, size_t h, size_t w, bool *out);

/**
 * Serializes to the UOOG format.
 */
enum OccpStatus occp_grid_encode(const struct OccpGrid *grid,
                                 uint8_t *buf,
                                 size_t cap,
                                 size_t *len);

enum OccpStatus occp_grid_decode(const uint8_t *bytes, size_t len, struct OccpGrid **out);

void occp_grid_free(struct OccpGrid *grid);

/**
 * Mean focal loss of `count` probabilities against binary targets.
 */
enum OccpStatus occp_focal_loss(const uint8_t *targets,
                                const double *probs,
                                size_t count,
                                double alpha_pos,
                                double alpha_neg,
                                double gamma,
                                double *out);

/**
 * `rotation` is row-major 3x3 and, with `translation`, maps camera
 * coordinates to the ego frame.
 */
enum OccpStatus occp_camera_new(double fx,
                                double fy,
                                double cx,
                                double cy,
                                size_t width,
                                size_t height,
                                const double *rotation,
                                const double *translation,
                                struct OccpCamera **out);

/**
 * Projects an ego-frame point to pixel `(u, v)` and camera z-depth.
 */
enum OccpStatus occp_project(const struct OccpCamera *camera, const double *point, double *uvd);

/**
 * Ego-frame point seen at pixel `(u, v)` and camera z-depth `depth`.
 */
enum OccpStatus occp_unproject(const struct OccpCamera *camera,
                               double u,
                               double v,
                               double depth,
                               double *point);

void occp_camera_free(struct OccpCamera *camera);

enum OccpStatus occp_checkpoint_load(const char *path, struct OccpCheckpoint **out);

/**
 * Writes atomically to `path`.
 */
enum OccpStatus occp_checkpoint_save(const struct OccpCheckpoint *ck, const char *path);

enum OccpStatus occp_checkpoint_decode(const uint8_t *bytes,
                                       size_t len,
                                       struct OccpCheckpoint **out);

/**
 * Serializes to the UOCK format.
 */
enum OccpStatus occp_checkpoint_encode(const struct OccpCheckpoint *ck,
                                       uint8_t *buf,
                                       size_t cap,
                                       size_t *len);

enum OccpStatus occp_checkpoint_tensor_count(const struct OccpCheckpoint *ck, size_t *out);

/**
 * SHA-256 of the tensor section as NUL-terminated hex; `buf` must hold
 * [`OCCP_DIGEST_LEN`] bytes.
 */
enum OccpStatus occp_checkpoint_digest(const struct OccpCheckpoint *ck, char *buf, size_t cap);

/**
 * New checkpoint without the occupancy decoder and semantic head, its
 * lineage extended with the parent's digest.
 */
enum OccpStatus occp_checkpoint_strip_decoder(const struct OccpCheckpoint *ck,
                                              struct OccpCheckpoint **out);

void occp_checkpoint_free(struct OccpCheckpoint *ck);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCPRETRAIN_H */
