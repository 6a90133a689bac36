#ifndef DVAE_UMOT_H
#define DVAE_UMOT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum DvaeStatus {
  DVAE_STATUS_OK = 0,
  DVAE_STATUS_NULL_POINTER = 1,
  DVAE_STATUS_INVALID_ARGUMENT = 2,
  DVAE_STATUS_IO = 3,
  DVAE_STATUS_DATA = 4,
  DVAE_STATUS_NUMERIC = 5,
  DVAE_STATUS_PANIC = 6,
} DvaeStatus;

// Pre-trained SRNN weights.
typedef struct DvaeModel DvaeModel;

// Output of [`dvae_track`].
typedef struct DvaeResult DvaeResult;

// Detections of a sequence, filled frame by frame.
typedef struct DvaeScene DvaeScene;

// Tracker settings. `dynamics` is 0 for the DVAE, 1 for the linear
// baseline; `n_objects` 0 means one object per first-frame detection.
typedef struct DvaeTrackerConfig {
  double r_phi;
  uintptr_t init_window;
  uintptr_t init_iters;
  uintptr_t iters;
  bool fine_tune;
  double fine_tune_lr;
  bool m_step_phi;
  uint32_t dynamics;
  uint64_t seed;
  uintptr_t n_objects;
} DvaeTrackerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, e.g. `0.1.0`. The string is static.
const char *dvae_version(void);

// Checkpoint format version read by [`dvae_model_load`].
uint32_t dvae_checkpoint_format(void);

// Message of the last failed call on this thread (empty after success).
// Valid until the next call on the same thread.
const char *dvae_last_error(void);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum DvaeStatus dvae_model_load(const char *path, struct DvaeModel **out);

// # Safety
// `model` must come from [`dvae_model_load`] or be null.
void dvae_model_free(struct DvaeModel *model);

// # Safety
// `out` must be a valid pointer.
enum DvaeStatus dvae_scene_new(struct DvaeScene **out);

// Appends a frame of `count` boxes read from `boxes[4 * count]`.
//
// # Safety
// `scene` must be a live handle; `boxes` must hold `4 * count` doubles
// (it may be null when `count` is 0).
enum DvaeStatus dvae_scene_push_frame(struct DvaeScene *scene,
                                      const double *boxes,
                                      uintptr_t count);

// # Safety
// `scene` must be a live handle.
uintptr_t dvae_scene_num_frames(const struct DvaeScene *scene);

// # Safety
// `scene` must come from [`dvae_scene_new`] or be null.
void dvae_scene_free(struct DvaeScene *scene);

// Fills `cfg` with the default settings.
//
// # Safety
// `cfg` must be a valid pointer.
enum DvaeStatus dvae_tracker_config_default(struct DvaeTrackerConfig *cfg);

// Tracks the scene. `model` may be null for the linear baseline; `cfg`
// may be null for the defaults.
//
// # Safety
// Non-null pointers must be live handles or valid pointers.
enum DvaeStatus dvae_track(const struct DvaeModel *model,
                           const struct DvaeScene *scene,
                           const struct DvaeTrackerConfig *cfg,
                           struct DvaeResult **out);

// # Safety
// `result` must be a live handle.
uintptr_t dvae_result_num_objects(const struct DvaeResult *result);

// # Safety
// `result` must be a live handle.
uintptr_t dvae_result_num_frames(const struct DvaeResult *result);

// Writes the estimated box of object `n` at frame `t` (both from 0) into
// `out[4]`.
//
// # Safety
// `result` must be a live handle and `out` must hold 4 doubles.
enum DvaeStatus dvae_result_position(const struct DvaeResult *result,
                                     uintptr_t n,
                                     uintptr_t t,
                                     double *out);

// Object that detection `k` of frame `t` is assigned to (argmax of the
// assignment posterior).
//
// # Safety
// `result` must be a live handle and `out` a valid pointer.
enum DvaeStatus dvae_result_assignment(const struct DvaeResult *result,
                                       uintptr_t t,
                                       uintptr_t k,
                                       uintptr_t *out);

// # Safety
// `result` must come from [`dvae_track`] or be null.
void dvae_result_free(struct DvaeResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DVAE_UMOT_H */
