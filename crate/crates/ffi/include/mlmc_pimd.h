#ifndef MLMC_PIMD_H
#define MLMC_PIMD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How level sums are evaluated.
 */
typedef enum MlmcLevelSum {
  MLMC_LEVEL_SUM_ENUMERATE = 0,
  MLMC_LEVEL_SUM_TRANSFER = 1,
} MlmcLevelSum;

/**
 * Which level allocation [`mlmc_estimate`] uses.
 */
typedef enum MlmcMethod {
  MLMC_METHOD_RM = 0,
  MLMC_METHOD_MLMC = 1,
} MlmcMethod;

/**
 * Result code of every fallible call.
 */
typedef enum MlmcStatus {
  MLMC_STATUS_OK = 0,
  MLMC_STATUS_NULL_POINTER = 1,
  MLMC_STATUS_INVALID_ARGUMENT = 2,
  MLMC_STATUS_MODEL = 3,
  MLMC_STATUS_POLYMER = 4,
  MLMC_STATUS_DYNAMICS = 5,
  MLMC_STATUS_ESTIMATOR = 6,
  MLMC_STATUS_ORACLE = 7,
  MLMC_STATUS_CONFIG = 8,
  MLMC_STATUS_IO = 9,
  MLMC_STATUS_PANIC = 10,
} MlmcStatus;

/**
 * Opaque estimate report handle.
 */
typedef struct MlmcReport MlmcReport;

/**
 * Opaque test case handle.
 */
typedef struct MlmcTestCase MlmcTestCase;

/**
 * Langevin and level-sum settings.
 */
typedef struct MlmcSamplerOptions {
  double gamma;
  double dt;
  uint64_t n_burn;
  enum MlmcLevelSum level_sum;
} MlmcSamplerOptions;

/**
 * One level of a report.
 */
typedef struct MlmcLevel {
  size_t k;
  uint64_t count;
  double mean_a;
  double mean_b;
  double var_a;
  double var_b;
  uint64_t seed_a;
  uint64_t seed_b;
} MlmcLevel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mlmc_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *mlmc_last_error_message(void);

/**
 * Defaults: `gamma = 1`, `dt = 0.005`, `n_burn = 100000`, enumeration.
 */
struct MlmcSamplerOptions mlmc_sampler_options_default(void);

/**
 * Looks up a built-in model and observable by name, e.g.
 * `"coupled-wells"` and `"mixed-trig"`.
 *
 * # Safety
 * `model` and `observable` must be NUL-terminated strings; `out` must be
 * writable.
 */
enum MlmcStatus mlmc_test_case_new(const char *model,
                                   const char *observable,
                                   double beta,
                                   double mass,
                                   struct MlmcTestCase **out);

/**
 * # Safety
 * `case` must come from [`mlmc_test_case_new`] and not be used afterwards.
 */
void mlmc_test_case_free(struct MlmcTestCase *case_);

/**
 * Counts per level for `method`; `counts` must hold `k0 + 1` entries.
 *
 * # Safety
 * `counts` must point to `len` writable values.
 */
enum MlmcStatus mlmc_allocation_plan(enum MlmcMethod method,
                                     size_t beads,
                                     size_t k0,
                                     uint64_t n_total,
                                     uint64_t *counts,
                                     size_t len);

/**
 * Runs RM-PIMD or MLMC-PIMD. Seeds derive from `(seed, replicate)`.
 *
 * # Safety
 * `case` and `options` must be valid; `out` must be writable.
 */
enum MlmcStatus mlmc_estimate(const struct MlmcTestCase *case_,
                              enum MlmcMethod method,
                              size_t beads,
                              size_t k0,
                              uint64_t n_total,
                              const struct MlmcSamplerOptions *options,
                              uint64_t seed,
                              uint64_t replicate,
                              struct MlmcReport **out);

/**
 * Time average of `W_N[A]` along one PIMD-SH trajectory of `n_samples`
 * steps after burn-in.
 *
 * # Safety
 * `case` and `options` must be valid; `out` must be writable.
 */
enum MlmcStatus mlmc_pimdsh_estimate(const struct MlmcTestCase *case_,
                                     size_t beads,
                                     double eta,
                                     const struct MlmcSamplerOptions *options,
                                     uint64_t n_samples,
                                     uint64_t seed,
                                     struct MlmcReport **out);

/**
 * # Safety
 * `report` must be valid and `value` writable.
 */
enum MlmcStatus mlmc_report_estimate(const struct MlmcReport *report, double *value);

/**
 * Seconds spent producing the report.
 *
 * # Safety
 * `report` must be valid and `value` writable.
 */
enum MlmcStatus mlmc_report_wall_clock(const struct MlmcReport *report, double *value);

/**
 * Number of levels in the report; 0 for PIMD-SH or a null handle.
 *
 * # Safety
 * `report` must be valid or null.
 */
size_t mlmc_report_level_count(const struct MlmcReport *report);

/**
 * # Safety
 * `report` must be valid and `level` writable.
 */
enum MlmcStatus mlmc_report_level(const struct MlmcReport *report,
                                  size_t k,
                                  struct MlmcLevel *level);

/**
 * # Safety
 * `report` must come from an estimator call and not be used afterwards.
 */
void mlmc_report_free(struct MlmcReport *report);

/**
 * Exact thermal average on a Fourier grid of `n_points` over
 * `[-half_width, half_width]`.
 *
 * # Safety
 * `case` must be valid and `value` writable.
 */
enum MlmcStatus mlmc_pseudospectral_reference(const struct MlmcTestCase *case_,
                                              size_t n_points,
                                              double half_width,
                                              double *value);

/**
 * Truncated average `I_{2k0}` by quadrature for `beads <= 4`.
 *
 * # Safety
 * `case` must be valid and `value` writable.
 */
enum MlmcStatus mlmc_quadrature_truncated_average(const struct MlmcTestCase *case_,
                                                  size_t beads,
                                                  size_t k0,
                                                  size_t n_points,
                                                  double half_width,
                                                  double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLMC_PIMD_H */
