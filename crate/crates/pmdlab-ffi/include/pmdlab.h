#ifndef PMDLAB_H
#define PMDLAB_H

/* Generated from the pmdlab-ffi crate by cbindgen; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of an FFI call.
 */
typedef enum PmdlabStatus {
  PMDLAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PMDLAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PMDLAB_STATUS_BAD_ENCODING = 2,
  /**
   * Input parsed but failed validation (model, class, or run config).
   */
  PMDLAB_STATUS_INVALID_INPUT = 3,
  /**
   * The computation ran but a numerical guarantee did not hold.
   */
  PMDLAB_STATUS_CHECK_FAILED = 4,
  /**
   * The request needs a combination the laboratory does not provide.
   */
  PMDLAB_STATUS_UNSUPPORTED = 5,
  /**
   * A panic escaped the core; treat the call as failed and the
   * offending handle as poisoned.
   */
  PMDLAB_STATUS_PANICKED = 6,
} PmdlabStatus;

/**
 * A validated model plus the policy class runs optimize over. Opaque
 * to C; create with `pmdlab_lab_from_json` or `pmdlab_lab_builtin`,
 * release with `pmdlab_lab_free`.
 */
typedef struct PmdlabLab PmdlabLab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a laboratory from model and class JSON (same layout the CLI
 * `gen` subcommand writes).
 *
 * # Safety
 * String arguments follow `borrow_str`; `out_lab` must be a valid
 * pointer to a handle slot.
 */
enum PmdlabStatus pmdlab_lab_from_json(const char *mdp_json,
                                       const char *class_json,
                                       struct PmdlabLab **out_lab);

/**
 * Builds one of the named built-in instances ("fig1" or
 * "fig2-smoothness").
 *
 * # Safety
 * See `pmdlab_lab_from_json`.
 */
enum PmdlabStatus pmdlab_lab_builtin(const char *name, struct PmdlabLab **out_lab);

/**
 * Releases a laboratory handle. Null is a no-op.
 *
 * # Safety
 * `lab` must have come from a `pmdlab_lab_*` constructor and not been
 * freed before.
 */
void pmdlab_lab_free(struct PmdlabLab *lab);

/**
 * Writes a one-object JSON description of the handle (sizes, discount,
 * class kind).
 *
 * # Safety
 * `lab` as in `pmdlab_lab_free`; `out_json` must be a valid slot.
 */
enum PmdlabStatus pmdlab_lab_describe(const struct PmdlabLab *lab, char **out_json);

/**
 * Evaluates a full policy table (JSON `[[p(a|s)...]...]`) exactly and
 * writes the scalar start-weighted value.
 *
 * # Safety
 * Pointer arguments as in the other entry points; `out_value` must be
 * a valid `double` slot.
 */
enum PmdlabStatus pmdlab_policy_value(const struct PmdlabLab *lab,
                                      const char *policy_json,
                                      double *out_value);

/**
 * Runs mirror descent on the handle's class with a JSON run config
 * (same schema as the CLI's `pmd` block) and writes a JSON summary:
 * step size, smoothness estimate, reference value, and the per-iterate
 * `k`/`value`/`gap` series.
 *
 * # Safety
 * Pointer arguments as in the other entry points.
 */
enum PmdlabStatus pmdlab_run(const struct PmdlabLab *lab, const char *config_json, char **out_json);

/**
 * Runs the full certification suite and writes the report array as
 * JSON. Returns `Ok` when every check passes and `CheckFailed` (with
 * the JSON still written) when any fails.
 *
 * # Safety
 * `out_json` must be a valid slot.
 */
enum PmdlabStatus pmdlab_verify(uint64_t seed, char **out_json);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have come from this library and not been freed before.
 */
void pmdlab_string_free(char *s);

/**
 * Takes the pending error message for this thread, or null when the
 * last call succeeded. The caller frees it with `pmdlab_string_free`.
 */
char *pmdlab_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMDLAB_H */
