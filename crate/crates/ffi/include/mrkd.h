/* C interface for the mrkd training kit. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible call.
typedef enum MrkdStatus {
  MRKD_STATUS_OK = 0,
  // A required pointer argument was null.
  MRKD_STATUS_NULL_ARGUMENT = 1,
  // A configuration or input value was rejected.
  MRKD_STATUS_INVALID = 2,
  // Incompatible shapes or lengths.
  MRKD_STATUS_DIMENSION = 3,
  MRKD_STATUS_IO = 4,
  // A binary or JSON payload did not parse.
  MRKD_STATUS_FORMAT = 5,
  // A computation left the finite range.
  MRKD_STATUS_NUMERIC = 6,
  // A verification ran to completion and found violations.
  MRKD_STATUS_TOLERANCE = 7,
  // A string argument was not valid UTF-8.
  MRKD_STATUS_UTF8 = 8,
  // An internal panic was caught at the boundary.
  MRKD_STATUS_PANIC = 9,
} MrkdStatus;

// Loss variant selector for [`mrkd_loss_eval`].
typedef enum MrkdMethod {
  MRKD_METHOD_CE = 0,
  MRKD_METHOD_LSR = 1,
  MRKD_METHOD_KD = 2,
  MRKD_METHOD_LSR_KD = 3,
  MRKD_METHOD_LSR_KD_TC = 4,
  MRKD_METHOD_MR_KD = 5,
  MRKD_METHOD_MR_KD_TC = 6,
} MrkdMethod;

// Opaque handle to a parameter set.
typedef struct MrkdParams MrkdParams;

// Opaque handle to a snapshot ring.
typedef struct MrkdRing MrkdRing;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *mrkd_version(void);

// Message for the most recent failure on this thread. Valid until the next
// failing call on the same thread; never null.
const char *mrkd_last_error(void);

// Seeded He-normal initialization. `topology` lists layer widths
// `[input, hidden.., output]` and needs at least two entries.
//
// # Safety
// `topology` must point to `topology_len` readable values; `out` must be a
// valid pointer to receive the handle.
enum MrkdStatus mrkd_params_init(const size_t *topology,
                                 size_t topology_len,
                                 uint64_t seed,
                                 struct MrkdParams **out);

// Deep copy; the clone shares no storage with the original.
//
// # Safety
// `params` must be a live handle from this library; `out` must be valid.
enum MrkdStatus mrkd_params_clone(const struct MrkdParams *params, struct MrkdParams **out);

// Releases a handle; accepts null.
//
// # Safety
// `params` must be null or a handle produced by this library, not yet freed.
void mrkd_params_free(struct MrkdParams *params);

// # Safety
// `params` must be a live handle; `out` must be valid.
enum MrkdStatus mrkd_params_input_dim(const struct MrkdParams *params, size_t *out);

// # Safety
// `params` must be a live handle; `out` must be valid.
enum MrkdStatus mrkd_params_output_dim(const struct MrkdParams *params, size_t *out);

// Writes the versioned binary parameter format.
//
// # Safety
// `params` must be a live handle; `path` a valid C string.
enum MrkdStatus mrkd_params_save(const struct MrkdParams *params, const char *path);

// Reads the versioned binary parameter format.
//
// # Safety
// `path` must be a valid C string; `out` must be valid.
enum MrkdStatus mrkd_params_load(const char *path, struct MrkdParams **out);

// Forward pass of a row-major `batch x dim` input; writes `batch x M`
// logits into `out_logits` (`out_len` must equal `batch * M`).
//
// # Safety
// Pointers must cover the stated element counts.
enum MrkdStatus mrkd_forward(const struct MrkdParams *params,
                             const double *inputs,
                             size_t batch,
                             size_t dim,
                             double *out_logits,
                             size_t out_len);

// Evaluates one per-sample loss. `teacher_logits` is a row-major
// `teacher_count x class_count` buffer (null when the method takes no
// teachers); `gamma` is read only by the TC variants. Writes the loss value
// and its gradient with respect to the student logits (`class_count`
// entries).
//
// # Safety
// Pointers must cover the stated element counts.
enum MrkdStatus mrkd_loss_eval(enum MrkdMethod method,
                               double alpha,
                               double tau,
                               double gamma,
                               size_t class_count,
                               size_t true_class,
                               const double *student_logits,
                               const double *teacher_logits,
                               size_t teacher_count,
                               double *out_value,
                               double *out_grad);

// Creates a ring of `n` deep copies of `params`, shifted every
// `kappa_steps` ticks.
//
// # Safety
// `params` must be a live handle; `out` must be valid.
enum MrkdStatus mrkd_ring_new(const struct MrkdParams *params,
                              size_t n,
                              uint64_t kappa_steps,
                              struct MrkdRing **out);

// Advances the ring by one step; `out_shifted` reports whether the copies
// shifted. Call once per training step before the parameter update.
//
// # Safety
// Handles must be live; `out_shifted` must be valid.
enum MrkdStatus mrkd_ring_tick(struct MrkdRing *ring,
                               const struct MrkdParams *params,
                               bool *out_shifted);

// Number of copies in the ring.
//
// # Safety
// `ring` must be a live handle; `out` must be valid.
enum MrkdStatus mrkd_ring_len(const struct MrkdRing *ring, size_t *out);

// Forward passes of the batch through every copy. `out` receives
// `n * batch * M` values, copy-major (all logits of copy 0 first).
//
// # Safety
// Pointers must cover the stated element counts.
enum MrkdStatus mrkd_ring_teacher_logits(const struct MrkdRing *ring,
                                         const double *inputs,
                                         size_t batch,
                                         size_t dim,
                                         double *out,
                                         size_t out_len);

// Writes the ring checkpoint format.
//
// # Safety
// `ring` must be a live handle; `path` a valid C string.
enum MrkdStatus mrkd_ring_save(const struct MrkdRing *ring, const char *path);

// Reads a ring checkpoint.
//
// # Safety
// `path` must be a valid C string; `out` must be valid.
enum MrkdStatus mrkd_ring_load(const char *path, struct MrkdRing **out);

// Releases a ring handle; accepts null.
//
// # Safety
// `ring` must be null or a handle produced by this library, not yet freed.
void mrkd_ring_free(struct MrkdRing *ring);

// Runs a full experiment from a JSON spec string under `out_root`; on
// success writes the aggregate mean and standard deviation of final-epoch
// test error.
//
// # Safety
// Strings must be valid C strings; output pointers must be valid.
enum MrkdStatus mrkd_train_json(const char *spec_json,
                                const char *out_root,
                                double *out_mean,
                                double *out_std);

// Runs the finite-difference gradient suite over all loss variants.
// Writes the worst normalized error and returns `Tolerance` when it meets
// or exceeds `tolerance`.
//
// # Safety
// `out_max_err` must be valid.
enum MrkdStatus mrkd_gradcheck(double tolerance, size_t cases, uint64_t seed, double *out_max_err);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
