/* Generated by cbindgen from tunnelkit-ffi. Do not edit. */

#ifndef TUNNELKIT_H
#define TUNNELKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum TkStatus {
  TK_STATUS_OK = 0,
  TK_STATUS_NULL_ARGUMENT = 1,
  TK_STATUS_INVALID_UTF8 = 2,
  TK_STATUS_CONFIG = 3,
  TK_STATUS_DOMAIN = 4,
  TK_STATUS_POTENTIAL = 5,
  TK_STATUS_NUMERICS = 6,
  TK_STATUS_IO = 7,
  TK_STATUS_OUT_OF_RANGE = 8,
  TK_STATUS_BUFFER_TOO_SMALL = 9,
  TK_STATUS_PANIC = 10,
} TkStatus;

/**
 * Which stages a report covers.
 */
typedef enum TkCommand {
  TK_COMMAND_WELLS = 0,
  TK_COMMAND_SPECTRUM = 1,
  TK_COMMAND_INTERACTION = 2,
  TK_COMMAND_SWEEP = 3,
  TK_COMMAND_REPORT = 4,
} TkCommand;

/**
 * A parsed config with its mesh, fields and wells.
 */
typedef struct TkProblem TkProblem;

/**
 * The result of running a command on a problem.
 */
typedef struct TkReport TkReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tk_version(void);

/**
 * Copies the last error message of this thread into `buf`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes or be null; `needed` may be null.
 */
enum TkStatus tk_last_error(char *buf, uintptr_t len, uintptr_t *needed);

/**
 * Builds a problem from config text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TkStatus tk_problem_from_str(const char *text, uint64_t seed, struct TkProblem **out);

/**
 * Builds a problem from a config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TkStatus tk_problem_load(const char *path, uint64_t seed, struct TkProblem **out);

/**
 * Releases a problem. Null is ignored.
 *
 * # Safety
 * `p` must come from `tk_problem_*` and not be used afterwards.
 */
void tk_problem_free(struct TkProblem *p);

/**
 * Number of mesh nodes.
 *
 * # Safety
 * `p` must be a live problem handle and `out` a valid pointer.
 */
enum TkStatus tk_problem_node_count(const struct TkProblem *p, uintptr_t *out);

/**
 * Number of selected wells.
 *
 * # Safety
 * `p` must be a live problem handle and `out` a valid pointer.
 */
enum TkStatus tk_problem_well_count(const struct TkProblem *p, uintptr_t *out);

/**
 * Coordinates and harmonic frequencies of well `j`. `lambda` receives up
 * to `lambda_len` values; `n_lambda` the number available.
 *
 * # Safety
 * `p` must be a live handle; `coords` must point to two doubles; `lambda`
 * must point to `lambda_len` doubles or be null; `n_lambda` may be null.
 */
enum TkStatus tk_problem_well(const struct TkProblem *p,
                              uintptr_t j,
                              double *coords,
                              double *lambda,
                              uintptr_t lambda_len,
                              uintptr_t *n_lambda);

/**
 * Runs `command` on a problem.
 *
 * # Safety
 * `p` must be a live problem handle and `out` a valid pointer.
 */
enum TkStatus tk_run(const struct TkProblem *p, enum TkCommand command, struct TkReport **out);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `r` must come from `tk_run` and not be used afterwards.
 */
void tk_report_free(struct TkReport *r);

/**
 * Pretty JSON of the report. Call with a null buffer to size it.
 *
 * # Safety
 * `r` must be a live report; `buf` must point to `len` bytes or be null.
 */
enum TkStatus tk_report_json(const struct TkReport *r, char *buf, uintptr_t len, uintptr_t *needed);

/**
 * Number of hbar values with interaction data (0 for reports without it).
 *
 * # Safety
 * `r` must be a live report and `out` a valid pointer.
 */
enum TkStatus tk_report_hbar_count(const struct TkReport *r, uintptr_t *out);

/**
 * Lowest direct and predicted gaps at the `i`-th hbar of the interaction stage.
 *
 * # Safety
 * `r` must be a live report; the output pointers must be valid.
 */
enum TkStatus tk_report_splitting(const struct TkReport *r,
                                  uintptr_t i,
                                  double *hbar,
                                  double *direct,
                                  double *predicted);

/**
 * Fitted (S, p, c) of `ln Delta = -S/hbar + p ln hbar + c` from a sweep.
 *
 * # Safety
 * `r` must be a live report and `out` must point to three doubles.
 */
enum TkStatus tk_report_fit(const struct TkReport *r, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TUNNELKIT_H */
