#ifndef TAMSIM_H
#define TAMSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. The first three mirror the command-line exit statuses.
 */
typedef enum TamsimStatus {
  TAMSIM_STATUS_OK = 0,
  /**
   * A simulated image differed from the serial writer, or the data path failed.
   */
  TAMSIM_STATUS_MISMATCH = 1,
  /**
   * Invalid configuration or input.
   */
  TAMSIM_STATUS_CONFIG = 2,
  TAMSIM_STATUS_NULL_ARGUMENT = 3,
  TAMSIM_STATUS_INVALID_UTF8 = 4,
  TAMSIM_STATUS_BUFFER_TOO_SMALL = 5,
  TAMSIM_STATUS_PANIC = 6,
  /**
   * Serialization or other unexpected internal failure.
   */
  TAMSIM_STATUS_INTERNAL = 7,
} TamsimStatus;

/**
 * Opaque run configuration.
 */
typedef struct TamsimConfig TamsimConfig;

/**
 * Opaque result of a run.
 */
typedef struct TamsimResult TamsimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next library call on the same thread.
 */
const char *tamsim_last_error(void);

/**
 * Creates a configuration with default values.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum TamsimStatus tamsim_config_default(struct TamsimConfig **out);

/**
 * Parses a JSON configuration document. Absent fields take their
 * defaults; the configuration is validated.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer to
 * writable storage for one handle.
 */
enum TamsimStatus tamsim_config_from_json(const char *json, struct TamsimConfig **out);

/**
 * Serializes a configuration as JSON. Free the string with
 * [`tamsim_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum TamsimStatus tamsim_config_to_json(const struct TamsimConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library that was not yet freed.
 */
void tamsim_config_free(struct TamsimConfig *cfg);

/**
 * Runs the configuration. Output paths in the configuration are ignored;
 * read results through the returned handle.
 *
 * Returns `Ok` when every image matched the serial writer (or verification
 * was off) and `Mismatch` when one differed; in both cases `*out` holds a
 * result. On any other status `*out` is null.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum TamsimStatus tamsim_run(const struct TamsimConfig *cfg, struct TamsimResult **out);

/**
 * Writes whether every run in the result matched the serial writer.
 *
 * # Safety
 * `res` must be a live handle and `verified` a valid pointer.
 */
enum TamsimStatus tamsim_result_verified(const struct TamsimResult *res, bool *verified);

/**
 * Number of method runs in the result (two for `both`).
 *
 * # Safety
 * `res` must be null or a live handle.
 */
size_t tamsim_result_num_runs(const struct TamsimResult *res);

/**
 * Full JSON report document: configuration plus one record per run.
 * Free the string with [`tamsim_string_free`].
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum TamsimStatus tamsim_result_report_json(const struct TamsimResult *res, char **out);

/**
 * Message trace of run `index` as JSON lines.
 *
 * # Safety
 * `res` must be a live handle and `out` a valid pointer.
 */
enum TamsimStatus tamsim_result_trace_jsonl(const struct TamsimResult *res,
                                            size_t index,
                                            char **out);

/**
 * # Safety
 * `res` must be null or a handle from this library that was not yet freed.
 */
void tamsim_result_free(struct TamsimResult *res);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void tamsim_string_free(char *s);

/**
 * Local aggregator positions for `c` aggregators among `q` processes on a
 * node. Writes up to `cap` ranks into `out` and the full count into
 * `*written`; returns `BufferTooSmall` when `cap` is short.
 *
 * # Safety
 * `out` must point to `cap` writable elements (or be null when `cap` is 0)
 * and `written` must be a valid pointer.
 */
enum TamsimStatus tamsim_select_local_aggregators(size_t q,
                                                  size_t c,
                                                  size_t *out,
                                                  size_t cap,
                                                  size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAMSIM_H */
