#ifndef PDNET_H
#define PDNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdnetStatus {
  PDNET_STATUS_OK = 0,
  PDNET_STATUS_NULL_POINTER = 1,
  PDNET_STATUS_INVALID_ARGUMENT = 2,
  PDNET_STATUS_CONFIG = 3,
  PDNET_STATUS_IO = 4,
  PDNET_STATUS_FORMAT = 5,
  PDNET_STATUS_NUMERIC = 6,
  PDNET_STATUS_BUFFER_TOO_SMALL = 7,
  PDNET_STATUS_PANIC = 8,
} PdnetStatus;

typedef enum PdnetTask {
  PDNET_TASK_CLASSIFICATION = 0,
  PDNET_TASK_SEGMENTATION = 1,
} PdnetTask;

// A point cloud with optional normals and labels.
typedef struct PdnetCloud PdnetCloud;

// A trained network loaded from a run directory.
typedef struct PdnetModel PdnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pdnet_version(void);

// Message for the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *pdnet_last_error(void);

// Creates a cloud from `n` packed positions.
//
// # Safety
// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
enum PdnetStatus pdnet_cloud_new(const double *xyz, size_t n, struct PdnetCloud **out);

// Reads a PDCLOUD1 file.
//
// # Safety
// `file` must be a NUL-terminated string; `out` must be writable.
enum PdnetStatus pdnet_cloud_read(const char *file, struct PdnetCloud **out);

// Writes a PDCLOUD1 file.
//
// # Safety
// `cloud` must be a live handle; `file` a NUL-terminated string.
enum PdnetStatus pdnet_cloud_write(const struct PdnetCloud *cloud, const char *file);

// Writes an ASCII PLY file with whatever normals and labels the cloud has.
//
// # Safety
// `cloud` must be a live handle; `file` a NUL-terminated string.
enum PdnetStatus pdnet_cloud_write_ply(const struct PdnetCloud *cloud, const char *file);

// Releases a cloud. Null is ignored.
//
// # Safety
// `cloud` must be null or a handle not yet freed.
void pdnet_cloud_free(struct PdnetCloud *cloud);

// Number of points, or 0 for a null handle.
//
// # Safety
// `cloud` must be null or a live handle.
size_t pdnet_cloud_len(const struct PdnetCloud *cloud);

// Copies `3 * len` packed positions into `xyz`.
//
// # Safety
// `cloud` must be a live handle; `xyz` must hold `cap` doubles.
enum PdnetStatus pdnet_cloud_positions(const struct PdnetCloud *cloud, double *xyz, size_t cap);

// Replaces the cloud's normals with PCA estimates from `k` nearest neighbors.
//
// # Safety
// `cloud` must be a live handle.
enum PdnetStatus pdnet_cloud_estimate_normals(struct PdnetCloud *cloud, size_t k);

// Copies `3 * len` packed unit normals into `nxyz`. Fails with
// `InvalidArgument` if the cloud has none.
//
// # Safety
// `cloud` must be a live handle; `nxyz` must hold `cap` doubles.
enum PdnetStatus pdnet_cloud_normals(const struct PdnetCloud *cloud, double *nxyz, size_t cap);

// Sets one label per point.
//
// # Safety
// `cloud` must be a live handle; `labels` must hold `n` values.
enum PdnetStatus pdnet_cloud_set_labels(struct PdnetCloud *cloud, const uint32_t *labels, size_t n);

// Farthest point sampling: writes `count` indices, starting from `start`.
//
// # Safety
// `xyz` must hold `3 * n` doubles and `out` `count` slots.
enum PdnetStatus pdnet_farthest_point_sample(const double *xyz,
                                             size_t n,
                                             size_t count,
                                             size_t start,
                                             size_t *out);

// Exact `k` nearest supports of each query, nearest first, ties to the lower
// index. Writes `nq * k` indices and, if `distances` is not null, as many
// Euclidean distances.
//
// # Safety
// Inputs must hold `3 * nq` and `3 * ns` doubles; outputs `nq * k` slots.
enum PdnetStatus pdnet_knn(const double *queries,
                           size_t nq,
                           const double *support,
                           size_t ns,
                           size_t k,
                           size_t *indices,
                           double *distances);

// Loads a trained network from a run directory written by `pdnet train`.
// `checkpoint` names a file in that directory, e.g. `best.ckpt`.
//
// # Safety
// Strings must be NUL-terminated; `out` must be writable.
enum PdnetStatus pdnet_model_load(const char *run_dir,
                                  const char *checkpoint,
                                  struct PdnetModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void pdnet_model_free(struct PdnetModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pdnet_model_classes(const struct PdnetModel *model);

// Input points per cloud the model expects, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t pdnet_model_input_points(const struct PdnetModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum PdnetStatus pdnet_model_task(const struct PdnetModel *model, enum PdnetTask *out);

// Predicted labels: one for classification, one per point for
// segmentation. Normals are estimated from `normal_k` neighbors when the
// model uses them. `written` receives the label count.
//
// # Safety
// Handles must be live; `labels` must hold `cap` values; `written` must be writable.
enum PdnetStatus pdnet_model_predict(const struct PdnetModel *model,
                                     const struct PdnetCloud *cloud,
                                     size_t normal_k,
                                     uint32_t *labels,
                                     size_t cap,
                                     size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDNET_H */
