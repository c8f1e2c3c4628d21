/* C interface for the lactate-threshold estimator. */

#ifndef LACTATE_THRESHOLD_H
#define LACTATE_THRESHOLD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function in this interface.
 */
typedef enum LtStatus {
  /**
   * Success.
   */
  LT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  LT_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  LT_STATUS_INVALID_UTF8 = 2,
  /**
   * The model file could not be read.
   */
  LT_STATUS_IO = 3,
  /**
   * The model file is malformed.
   */
  LT_STATUS_BAD_MODEL = 4,
  /**
   * The stage data violates the test protocol or is too short.
   */
  LT_STATUS_BAD_SESSION = 5,
  /**
   * The estimated lactate curve has no threshold.
   */
  LT_STATUS_ESTIMATION_FAILED = 6,
  /**
   * An internal invariant failed.
   */
  LT_STATUS_INTERNAL = 7,
} LtStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct LtModel LtModel;

/**
 * Estimated threshold for one athlete.
 */
typedef struct LtEstimate {
  /**
   * Threshold running speed, km/h.
   */
  double speed_kmh;
  /**
   * Threshold pace, s/km.
   */
  double pace_s_per_km;
  /**
   * Estimated blood lactate at the threshold, mmol/L.
   */
  double lactate_mmol_l;
} LtEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the underlying library as a NUL-terminated static string.
 */
const char *lt_version(void);

/**
 * Short English description of a status code (static storage).
 */
const char *lt_status_message(enum LtStatus status);

/**
 * Loads a model file produced by `ltcli train` into a new handle.
 *
 * On success writes the handle to `out_model`; the caller owns it and must
 * release it with [`lt_model_free`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out_model` a valid
 * pointer to writable memory.
 */
enum LtStatus lt_model_load(const char *path, struct LtModel **out_model);

/**
 * Parses a model from an in-memory NUL-terminated text buffer.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out_model` a valid
 * pointer to writable memory.
 */
enum LtStatus lt_model_from_text(const char *text, struct LtModel **out_model);

/**
 * Releases a handle returned by [`lt_model_load`] or
 * [`lt_model_from_text`]. Passing null is a no-op.
 *
 * # Safety
 * `model` must be a handle returned by this library, released at most once.
 */
void lt_model_free(struct LtModel *model);

/**
 * Number of hidden units of the loaded model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle returned by this library, or null.
 */
uintptr_t lt_model_hidden_units(const struct LtModel *model);

/**
 * Number of recurrent delay taps of the loaded model, or 0 for a null
 * handle.
 *
 * # Safety
 * `model` must be a live handle returned by this library, or null.
 */
uintptr_t lt_model_delays(const struct LtModel *model);

/**
 * Estimates the lactate threshold of one athlete from an incremental test
 * without lactate measurements.
 *
 * `speeds` holds the completed stage speeds in km/h, following the test
 * protocol ladder (9.0, 10.5, 12.0, 13.5, 14.5, 15.5, ...). `hr_end`,
 * `hrr_1min` and `rpe` are parallel arrays of length `n_stages` with heart
 * rate at stage end, heart rate after one minute of recovery, and perceived
 * exertion (Borg 0-10). Arrays the model's feature set does not use may be
 * null; channels the model uses must be non-null.
 *
 * # Safety
 * All non-null pointers must reference readable arrays of `n_stages`
 * elements; `out` must point to writable memory.
 */
enum LtStatus lt_estimate(const struct LtModel *model,
                          const double *speeds,
                          const double *hr_end,
                          const double *hrr_1min,
                          const double *rpe,
                          uintptr_t n_stages,
                          struct LtEstimate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LACTATE_THRESHOLD_H */
