#ifndef SLOWFAST_H
#define SLOWFAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2, 3 and 4 match the command-line exit codes.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_CONFIG = 2,
  /**
   * The order fit had fewer than three points above the noise floor.
   */
  SF_STATUS_INCONCLUSIVE = 3,
  SF_STATUS_IO = 4,
  SF_STATUS_USAGE = 5,
  SF_STATUS_INVALID_UTF8 = 6,
  SF_STATUS_INTERNAL = 7,
  SF_STATUS_PANIC = 8,
  SF_STATUS_BUFFER_TOO_SMALL = 9,
} SfStatus;

/**
 * Opaque experiment handle.
 */
typedef struct SfExperiment SfExperiment;

/**
 * One row of a weak-error sweep.
 */
typedef struct SfWeakErrorPoint {
  double epsilon;
  double mean_diff;
  double std_error;
  size_t replicas;
  uint64_t seed;
} SfWeakErrorPoint;

/**
 * Log-log fit; the numeric fields are NaN when the status is inconclusive.
 */
typedef struct SfOrderFit {
  double slope;
  double intercept;
  double r_squared;
  size_t used;
  size_t excluded;
} SfOrderFit;

typedef struct SfCorrector {
  double u1;
  /**
   * 95% half-width.
   */
  double ci_halfwidth;
  double std_error;
  double s_max;
} SfCorrector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sf_version(void);

/**
 * Bytes needed (including the NUL) to hold the last error message of this thread.
 */
size_t sf_last_error_length(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to fit). Returns `BUFFER_TOO_SMALL` when truncated.
 *
 * # Safety
 * `buf` must point to at least `len` writable bytes.
 */
enum SfStatus sf_last_error_message(char *buf, size_t len);

/**
 * Parses, validates and freezes an experiment from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum SfStatus sf_experiment_from_toml(const char *toml, struct SfExperiment **out);

/**
 * Builds an experiment from a named preset (`smoke`, `acceptance`, `ou`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum SfStatus sf_experiment_from_preset(const char *name, struct SfExperiment **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `exp` must come from one of the constructors and not be used afterwards.
 */
void sf_experiment_free(struct SfExperiment *exp);

/**
 * Number of spectral modes, or 0 for a null handle.
 *
 * # Safety
 * `exp` must be null or a live handle.
 */
size_t sf_experiment_modes(const struct SfExperiment *exp);

/**
 * Number of ε values in the configured sweep, or 0 for a null handle.
 *
 * # Safety
 * `exp` must be null or a live handle.
 */
size_t sf_experiment_epsilon_count(const struct SfExperiment *exp);

/**
 * Weak difference `E φ(U^ε_T) − E φ(Ū_T)` at one ε over `replicas` replicas.
 * `lane` selects the fast-noise stream.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be writable.
 */
enum SfStatus sf_weak_error(const struct SfExperiment *exp,
                            double epsilon,
                            uint64_t lane,
                            size_t replicas,
                            uint64_t seed,
                            struct SfWeakErrorPoint *out);

/**
 * Runs the configured ε ladder into `out[0..capacity]`; `written` receives
 * the number of points.
 *
 * # Safety
 * `exp` must be a live handle; `out` must hold `capacity` elements; `written` must be writable.
 */
enum SfStatus sf_sweep(const struct SfExperiment *exp,
                       struct SfWeakErrorPoint *out,
                       size_t capacity,
                       size_t *written);

/**
 * Least-squares fit of `log|mean_diff|` against `log ε` over the points with
 * `|mean_diff| > 2·stderr`. Returns `INCONCLUSIVE` with fewer than three.
 *
 * # Safety
 * `points` must hold `n` elements; `out` must be writable.
 */
enum SfStatus sf_order_fit(const struct SfWeakErrorPoint *points, size_t n, struct SfOrderFit *out);

/**
 * First-order corrector `u₁` with the configured settings and seed.
 *
 * # Safety
 * `exp` must be a live handle; `out` must be writable.
 */
enum SfStatus sf_corrector(const struct SfExperiment *exp, struct SfCorrector *out);

/**
 * Full sweep with outputs (CSV, JSON report, manifest) written to `out_dir`.
 * Returns `INCONCLUSIVE` when the order fit lacked usable points.
 *
 * # Safety
 * `exp` must be a live handle; `out_dir` must be a NUL-terminated string.
 */
enum SfStatus sf_run_sweep(const struct SfExperiment *exp, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLOWFAST_H */
