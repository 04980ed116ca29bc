#ifndef LYAPGEN_H
#define LYAPGEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LyapgenStatus {
  LYAPGEN_STATUS_OK = 0,
  LYAPGEN_STATUS_NULL_POINTER = 1,
  LYAPGEN_STATUS_INVALID_UTF8 = 2,
  LYAPGEN_STATUS_UNKNOWN_SYSTEM = 3,
  LYAPGEN_STATUS_PARSE = 4,
  LYAPGEN_STATUS_DIMENSION_MISMATCH = 5,
  LYAPGEN_STATUS_INVALID_CONFIG = 6,
  LYAPGEN_STATUS_OUT_OF_RANGE = 7,
  /**
   * Evaluation, training or I/O failure.
   */
  LYAPGEN_STATUS_FAILED = 8,
  LYAPGEN_STATUS_PANIC = 9,
} LyapgenStatus;

typedef enum LyapgenVerdict {
  LYAPGEN_VERDICT_VALID = 0,
  LYAPGEN_VERDICT_INVALID = 1,
  LYAPGEN_VERDICT_INDETERMINATE = 2,
} LyapgenVerdict;

/**
 * A symbolic expression over `x1..xn`.
 */
typedef struct LyapgenExpr LyapgenExpr;

/**
 * Outcome of checking one candidate.
 */
typedef struct LyapgenReport LyapgenReport;

/**
 * A registered dynamical system.
 */
typedef struct LyapgenSystem LyapgenSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy of the last error message on this thread, or NULL if there was none.
 * Free with [`lyapgen_string_free`].
 */
char *lyapgen_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed. NULL is ignored.
 */
void lyapgen_string_free(char *s);

/**
 * Looks up a registered system by name; networked systems are flattened.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` writable.
 */
enum LyapgenStatus lyapgen_system_new(const char *name, struct LyapgenSystem **out);

/**
 * # Safety
 * `sys` must come from [`lyapgen_system_new`] and not have been freed. NULL
 * is ignored.
 */
void lyapgen_system_free(struct LyapgenSystem *sys);

/**
 * State dimension, or 0 for NULL.
 *
 * # Safety
 * `sys` must be NULL or a live handle.
 */
size_t lyapgen_system_dim(const struct LyapgenSystem *sys);

/**
 * # Safety
 * `text` must be a NUL-terminated string and `out` writable.
 */
enum LyapgenStatus lyapgen_expr_parse(const char *text, struct LyapgenExpr **out);

/**
 * # Safety
 * `e` must come from this library and not have been freed. NULL is ignored.
 */
void lyapgen_expr_free(struct LyapgenExpr *e);

/**
 * Printed form in the parser's syntax, or NULL for a NULL handle. Free with
 * [`lyapgen_string_free`].
 *
 * # Safety
 * `e` must be NULL or a live handle.
 */
char *lyapgen_expr_to_string(const struct LyapgenExpr *e);

/**
 * Evaluates `e` at the point `x[0..n]`.
 *
 * # Safety
 * `x` must point to `n` readable doubles and `out` must be writable.
 */
enum LyapgenStatus lyapgen_expr_eval(const struct LyapgenExpr *e,
                                     const double *x,
                                     size_t n,
                                     double *out);

/**
 * Symbolic Lie derivative of `v` along the system's vector field.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LyapgenStatus lyapgen_lie_derivative(const struct LyapgenSystem *sys,
                                          const struct LyapgenExpr *v,
                                          struct LyapgenExpr **out);

/**
 * Falsifies the candidate `v` with tolerance `tol`, `n_check` dense samples
 * and the given seed; other settings take their defaults.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LyapgenStatus lyapgen_verify(const struct LyapgenSystem *sys,
                                  const struct LyapgenExpr *v,
                                  double tol,
                                  size_t n_check,
                                  uint64_t seed,
                                  struct LyapgenReport **out);

/**
 * # Safety
 * `r` must come from this library and not have been freed. NULL is ignored.
 */
void lyapgen_report_free(struct LyapgenReport *r);

/**
 * # Safety
 * `r` must be a live handle and `out` writable.
 */
enum LyapgenStatus lyapgen_report_verdict(const struct LyapgenReport *r, enum LyapgenVerdict *out);

/**
 * Number of counterexamples, or 0 for NULL.
 *
 * # Safety
 * `r` must be NULL or a live handle.
 */
size_t lyapgen_report_counterexample_count(const struct LyapgenReport *r);

/**
 * Copies counterexample `index` into `buf[0..len]`; `len` must be at least
 * the system dimension.
 *
 * # Safety
 * `r` must be a live handle and `buf` must point to `len` writable doubles.
 */
enum LyapgenStatus lyapgen_report_counterexample(const struct LyapgenReport *r,
                                                 size_t index,
                                                 double *buf,
                                                 size_t len);

/**
 * Largest `LfV` and `-V` over the probes; NaN when not measured.
 *
 * # Safety
 * `r` must be a live handle; each output pointer may be NULL.
 */
enum LyapgenStatus lyapgen_report_violations(const struct LyapgenReport *r,
                                             double *max_lie,
                                             double *max_neg_v);

/**
 * Full report as JSON, or NULL for a NULL handle. Free with
 * [`lyapgen_string_free`].
 *
 * # Safety
 * `r` must be NULL or a live handle.
 */
char *lyapgen_report_to_json(const struct LyapgenReport *r);

/**
 * Runs the discovery loop for a JSON run configuration (every field
 * optional) and writes the JSON run report to `out`. Free it with
 * [`lyapgen_string_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` writable.
 */
enum LyapgenStatus lyapgen_run(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LYAPGEN_H */
