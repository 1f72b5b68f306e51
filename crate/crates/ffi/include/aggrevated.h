#ifndef AGGREVATED_H
#define AGGREVATED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum AgvStatus {
  AGV_STATUS_OK = 0,
  AGV_STATUS_NULL_POINTER = 1,
  AGV_STATUS_INVALID_UTF8 = 2,
  AGV_STATUS_PARSE = 3,
  AGV_STATUS_CONFIG = 4,
  AGV_STATUS_NUMERIC = 5,
  AGV_STATUS_IO = 6,
  AGV_STATUS_OUT_OF_RANGE = 7,
  AGV_STATUS_INTERNAL = 8,
  AGV_STATUS_PANIC = 9,
} AgvStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct AgvConfig AgvConfig;

/**
 * Completed run with its regret curve.
 */
typedef struct AgvRun AgvRun;

/**
 * One row of a regret curve.
 */
typedef struct AgvRecord {
  size_t episode;
  double mu_pi;
  double mu_star;
  double inst_regret;
  double cum_regret;
  double wall_ms;
} AgvRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *agv_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *agv_version(void);

/**
 * Parses configuration text. Free the result with [`agv_config_free`].
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum AgvStatus agv_config_parse(const char *text, struct AgvConfig **out);

/**
 * # Safety
 * `cfg` must come from [`agv_config_parse`] or be null.
 */
void agv_config_free(struct AgvConfig *cfg);

/**
 * Renders the fully resolved configuration. Free the string with
 * [`agv_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum AgvStatus agv_config_render(const struct AgvConfig *cfg, char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void agv_string_free(char *s);

/**
 * Runs the configured experiment in memory. Free the result with
 * [`agv_run_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum AgvStatus agv_run(const struct AgvConfig *cfg, struct AgvRun **out);

/**
 * Runs the experiment and writes the usual output files into `dir`.
 * `out` may be null when the caller only wants the files.
 *
 * # Safety
 * `cfg` must be a live handle; `dir` a NUL-terminated path.
 */
enum AgvStatus agv_run_to_dir(const struct AgvConfig *cfg, const char *dir, struct AgvRun **out);

/**
 * # Safety
 * `run` must come from [`agv_run`] / [`agv_run_to_dir`] or be null.
 */
void agv_run_free(struct AgvRun *run);

/**
 * Number of episodes recorded.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum AgvStatus agv_run_len(const struct AgvRun *run, size_t *out);

/**
 * Copies record `index` (0-based) into `out`.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum AgvStatus agv_run_record(const struct AgvRun *run, size_t index, struct AgvRecord *out);

/**
 * Cumulative regret after the last episode.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum AgvStatus agv_run_final_regret(const struct AgvRun *run, double *out);

/**
 * Runs acceptance criterion `id` (1..=14) and stores 1 in `passed` on
 * success, 0 otherwise. The detail line is left in the last-error slot.
 *
 * # Safety
 * `passed` must be writable.
 */
enum AgvStatus agv_verify_criterion(uint32_t id, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGGREVATED_H */
