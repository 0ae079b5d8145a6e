#ifndef DCATTACK_H
#define DCATTACK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_ARGUMENT = 2,
  DC_STATUS_IO = 3,
  DC_STATUS_PARSE = 4,
  DC_STATUS_VALIDATION = 5,
  DC_STATUS_MODEL = 6,
  DC_STATUS_SOLVER = 7,
  DC_STATUS_ATTACK = 8,
  DC_STATUS_DEFENSE = 9,
  DC_STATUS_INVARIANT = 10,
  DC_STATUS_JSON = 11,
  DC_STATUS_PANIC = 12,
} DcStatus;

/**
 * Result of a squeeze run.
 */
typedef struct DcBounds DcBounds;

/**
 * Parsed network case.
 */
typedef struct DcCase DcCase;

/**
 * Feasibility matrices of a case for a fixed slack generator.
 */
typedef struct DcModel DcModel;

/**
 * Affine generation policy with its certified radius.
 */
typedef struct DcPolicy DcPolicy;

typedef struct DcAttackOptions {
  double eps;
  uint32_t restarts;
  uint64_t seed;
} DcAttackOptions;

typedef struct DcAttackResult {
  /**
   * `δᵀδ` of the best certified perturbation.
   */
  double norm_sq;
  bool certified;
  /**
   * Length of the perturbation vector (load buses).
   */
  size_t n_delta;
} DcAttackResult;

typedef struct DcSqueezeOptions {
  double budget_seconds;
  double match_threshold;
  double eps;
  uint32_t restarts;
  uint64_t seed;
  uint32_t verify_samples;
  /**
   * Slack generator index, or -1 for the default choice.
   */
  int64_t slack_gen;
} DcSqueezeOptions;

typedef struct DcBoundsSummary {
  double lb;
  /**
   * NaN when no attack was certified.
   */
  double ub;
  double gap;
  bool matched;
  size_t rounds;
  double elapsed_seconds;
} DcBoundsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dcattack_version(void);

/**
 * Message of the last failed call on this thread (empty after a success).
 * Valid until the next call into the library on the same thread.
 */
const char *dcattack_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void dcattack_string_free(char *s);

/**
 * Loads a MATPOWER `.m` or canonical `.json` case.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DcStatus dcattack_case_load(const char *path, struct DcCase **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DcStatus dcattack_case_from_json(const char *json, struct DcCase **out);

/**
 * Canonical JSON of the case; free with [`dcattack_string_free`].
 *
 * # Safety
 * `case` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dcattack_case_to_json(const struct DcCase *case_, char **out);

/**
 * # Safety
 * `case` must be a live handle; it may be null.
 */
size_t dcattack_case_bus_count(const struct DcCase *case_);

/**
 * # Safety
 * `case` must come from this library or be null; it is invalid afterwards.
 */
void dcattack_case_free(struct DcCase *case_);

/**
 * Builds `A p + B δ + c <= 0`. `slack_gen < 0` picks the default slack.
 *
 * # Safety
 * `case` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dcattack_model_build(const struct DcCase *case_,
                                   int64_t slack_gen,
                                   struct DcModel **out);

/**
 * Row count, reduced generator count and perturbation length.
 *
 * # Safety
 * `model` must be a live handle; the out-pointers may be null.
 */
enum DcStatus dcattack_model_dims(const struct DcModel *model,
                                  size_t *rows,
                                  size_t *n_p,
                                  size_t *n_delta);

/**
 * Writes `A p + B δ + c` into `out` (length at least `rows`).
 *
 * # Safety
 * `p` and `delta` must point to `n_p` and `n_delta` values, `out` to `out_len`.
 */
enum DcStatus dcattack_model_residual(const struct DcModel *model,
                                      const double *p,
                                      size_t n_p,
                                      const double *delta,
                                      size_t n_delta,
                                      double *out,
                                      size_t out_len);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void dcattack_model_free(struct DcModel *model);

struct DcAttackOptions dcattack_attack_default_options(void);

/**
 * Multistart attack. The best certified perturbation is written to `delta`
 * (length at least `n_delta`).
 *
 * # Safety
 * `model` must be a live handle, `options` may be null for defaults,
 * `delta` must hold `delta_len` values and `result` must be valid.
 */
enum DcStatus dcattack_attack(const struct DcModel *model,
                              const struct DcAttackOptions *options,
                              double *delta,
                              size_t delta_len,
                              struct DcAttackResult *result);

/**
 * Warm start followed by the local radius optimization.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dcattack_defend(const struct DcModel *model, struct DcPolicy **out);

/**
 * Certified radius `t` (squared norm), or NaN for a null handle.
 *
 * # Safety
 * `policy` must be a live handle or null.
 */
double dcattack_policy_radius(const struct DcPolicy *policy);

/**
 * Copies `p0` (length `n_p`).
 *
 * # Safety
 * `policy` must be a live handle and `out` must hold `len` values.
 */
enum DcStatus dcattack_policy_p0(const struct DcPolicy *policy, double *out, size_t len);

/**
 * Copies `G` row-major (`n_p x n_delta`).
 *
 * # Safety
 * `policy` must be a live handle and `out` must hold `len` values.
 */
enum DcStatus dcattack_policy_g(const struct DcPolicy *policy, double *out, size_t len);

/**
 * Sampled verification of the policy on its ball; fails with
 * [`DcStatus::Defense`] when any sample is infeasible.
 *
 * # Safety
 * Handles must be live; `max_residual` may be null.
 */
enum DcStatus dcattack_policy_verify(const struct DcModel *model,
                                     const struct DcPolicy *policy,
                                     size_t samples,
                                     uint64_t seed,
                                     double *max_residual);

/**
 * # Safety
 * `policy` must come from this library or be null.
 */
void dcattack_policy_free(struct DcPolicy *policy);

struct DcSqueezeOptions dcattack_squeeze_default_options(void);

/**
 * Alternates attack and defense until the bounds meet or a stop rule fires.
 *
 * # Safety
 * `case` must be a live handle, `options` may be null, `out` must be valid.
 */
enum DcStatus dcattack_squeeze(const struct DcCase *case_,
                               const struct DcSqueezeOptions *options,
                               struct DcBounds **out);

/**
 * # Safety
 * `bounds` must be a live handle and `out` valid.
 */
enum DcStatus dcattack_bounds_summary(const struct DcBounds *bounds, struct DcBoundsSummary *out);

/**
 * Full bounds report as JSON; free with [`dcattack_string_free`].
 *
 * # Safety
 * `bounds` must be a live handle and `out` valid.
 */
enum DcStatus dcattack_bounds_to_json(const struct DcBounds *bounds, char **out);

/**
 * # Safety
 * `bounds` must come from this library or be null.
 */
void dcattack_bounds_free(struct DcBounds *bounds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCATTACK_H */
