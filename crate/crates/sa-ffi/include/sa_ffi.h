/* C interface to the stochastic approximation experiment library. */

#ifndef SA_FFI_H
#define SA_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible function.
 */
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_ARGUMENT = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  SA_STATUS_INVALID_CONFIG = 3,
  SA_STATUS_RUN_FAILED = 4,
} SaStatus;

/**
 * Opaque experiment configuration.
 */
typedef struct SaConfig SaConfig;

/**
 * Opaque experiment report.
 */
typedef struct SaReport SaReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sa_last_error(void);

/**
 * Build a configuration from a JSON document (same schema as the CLI's
 * `--config` file; `experiment` is required).
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum SaStatus sa_config_from_json(const char *json, struct SaConfig **out);

/**
 * Build the default configuration for a named experiment.
 *
 * # Safety
 * `experiment` must be a valid NUL-terminated string and `out` valid.
 */
enum SaStatus sa_config_default(const char *experiment, struct SaConfig **out);

/**
 * # Safety
 * `config` must come from a `sa_config_*` constructor, and not be freed twice.
 */
void sa_config_free(struct SaConfig *config);

/**
 * Run the configured experiment. Divergence inside a study is recorded in
 * the rows, never an error.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum SaStatus sa_run_experiment(const struct SaConfig *config, struct SaReport **out);

/**
 * # Safety
 * `report` must come from `sa_run_experiment`, and not be freed twice.
 */
void sa_report_free(struct SaReport *report);

/**
 * Render the report as CSV. The caller owns the string and must release it
 * with `sa_string_free`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum SaStatus sa_report_to_csv(const struct SaReport *report, char **out);

/**
 * Render the report as JSON (records plus meta block). Caller owns the
 * string; release with `sa_string_free`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum SaStatus sa_report_to_json(const struct SaReport *report, char **out);

/**
 * # Safety
 * `s` must come from this library, and not be freed twice.
 */
void sa_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *sa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SA_FFI_H */
