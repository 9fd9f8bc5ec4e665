#ifndef ODPR_H
#define ODPR_H

/* Generated by cbindgen from the odpr-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Priority family selector for [`OdprPriorityOptions::kind`].
typedef enum {
  // Iterative advantage priority: fit a value function, weight by linear
  // advantage priority, refit under the new weights, repeat.
  ODPR_PRIORITY_KIND_ADVANTAGE = 0,
  // Single-shot normalized trajectory-return priority.
  ODPR_PRIORITY_KIND_RETURN = 1,
} OdprPriorityKind;

// Result of every fallible call in this API.
typedef enum {
  ODPR_STATUS_OK = 0,
  // A required pointer argument was null.
  ODPR_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  ODPR_STATUS_UTF8 = 2,
  ODPR_STATUS_INVALID_ARGUMENT = 3,
  ODPR_STATUS_IO = 4,
  // Malformed binary or CSV input.
  ODPR_STATUS_FORMAT = 5,
  // A structural invariant failed (dimension mismatch, weights off the
  // simplex, ...).
  ODPR_STATUS_INVARIANT = 6,
  // A weight file does not belong to the dataset it was loaded against.
  ODPR_STATUS_PAIRING = 7,
  ODPR_STATUS_CONFIG = 8,
  // Value or policy training diverged.
  ODPR_STATUS_DIVERGENCE = 9,
  ODPR_STATUS_SINGULAR = 10,
  // An internal panic was caught at the boundary.
  ODPR_STATUS_PANIC = 11,
} OdprStatus;

// Opaque transition dataset. Create with [`odpr_dataset_load`],
// [`odpr_dataset_from_csv`] or [`odpr_dataset_generate_bandit`]; release
// with [`odpr_dataset_free`].
typedef struct OdprDataset OdprDataset;

// Opaque per-transition priority weights (a probability vector paired to
// the dataset it was computed from). Release with [`odpr_weights_free`].
typedef struct OdprWeights OdprWeights;

// Knobs for [`odpr_weights_compute`]. Initialize with
// [`odpr_priority_options_init`] and override selectively.
typedef struct {
  // One of the [`OdprPriorityKind`] values.
  int32_t kind;
  // Fit-then-reweight rounds of the advantage priority.
  uint32_t iterations;
  // Target std of `N * w` for the final rescaling.
  double sigma;
  // Baseline added to normalized returns (return priority only).
  double p_base;
  // Nonzero: clip `N * w` below 1 up to 1 before the final rescaling.
  int32_t clip_below_one;
  // Discount used by the value fits.
  double gamma;
  // TD steps per value fit.
  uint32_t fit_steps;
  // Minibatch size per TD step.
  uint32_t fit_batch_size;
  double fit_learning_rate;
  // Seeds both the value fits and their samplers.
  uint64_t seed;
} OdprPriorityOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *odpr_version(void);

// Static human-readable name of a status code.
const char *odpr_status_name(OdprStatus status);

// Message describing the most recent failure on the calling thread, or an
// empty string. The pointer stays valid until the next failing call on the
// same thread.
const char *odpr_last_error_message(void);

// Load a dataset from its binary file format.
OdprStatus odpr_dataset_load(const char *path, OdprDataset **out);

// Load a dataset from headered CSV: columns `state_0..`, `action_0..`,
// `reward`, `next_state_0..`, `terminal` and optionally `trajectory`.
OdprStatus odpr_dataset_from_csv(const char *path, OdprDataset **out);

// Sample the four-mode Gaussian bandit dataset: `per_mode` single-step
// trajectories around each mode, deterministic in `seed`.
OdprStatus odpr_dataset_generate_bandit(size_t per_mode, uint64_t seed, OdprDataset **out);

// Write a dataset to its binary file format.
OdprStatus odpr_dataset_save(const OdprDataset *dataset, const char *path);

// Number of transitions; 0 for a null handle.
size_t odpr_dataset_len(const OdprDataset *dataset);

// State dimensionality; 0 for a null handle.
size_t odpr_dataset_state_dim(const OdprDataset *dataset);

// Action dimensionality; 0 for a null handle.
size_t odpr_dataset_action_dim(const OdprDataset *dataset);

// Release a dataset handle. Null is a no-op.
void odpr_dataset_free(OdprDataset *dataset);

// Fill `options` with the library defaults (advantage kind, 4 iterations,
// sigma 2, discount 0.99, 20000 TD steps of batch 256 at 1e-3, seed 0).
OdprStatus odpr_priority_options_init(OdprPriorityOptions *options);

// Compute priority weights for `dataset` under `options`. The result is a
// probability vector over transitions, rescaled so `N * w` has std
// `options->sigma`.
OdprStatus odpr_weights_compute(const OdprDataset *dataset,
                                const OdprPriorityOptions *options,
                                OdprWeights **out);

// Number of weights; 0 for a null handle.
size_t odpr_weights_len(const OdprWeights *weights);

// Copy the weight vector into `buf`, which must hold exactly
// `odpr_weights_len` doubles.
OdprStatus odpr_weights_copy(const OdprWeights *weights, double *buf, size_t len);

// Std of `N * w`; NaN for a null handle.
double odpr_weights_nw_std(const OdprWeights *weights);

// Effective sample size `1 / sum(w^2)`; NaN for a null handle.
double odpr_weights_ess(const OdprWeights *weights);

// Write weights to disk, paired to `dataset` by a content hash so they can
// only be loaded back against the same data.
OdprStatus odpr_weights_save(const OdprWeights *weights,
                             const OdprDataset *dataset,
                             const char *path);

// Load weights written by [`odpr_weights_save`], verifying they belong to
// `dataset` (`ODPR_STATUS_PAIRING` otherwise).
OdprStatus odpr_weights_load(const char *path, const OdprDataset *dataset, OdprWeights **out);

// Release a weights handle. Null is a no-op.
void odpr_weights_free(OdprWeights *weights);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ODPR_H */
