#ifndef DOCBENCH_H
#define DOCBENCH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum DocbenchStatus {
  DOCBENCH_STATUS_OK = 0,
  DOCBENCH_STATUS_NULL_ARGUMENT = 1,
  DOCBENCH_STATUS_INVALID_UTF8 = 2,
  DOCBENCH_STATUS_INVALID_ARGUMENT = 3,
  DOCBENCH_STATUS_BUFFER_TOO_SMALL = 4,
  DOCBENCH_STATUS_CONFIG = 5,
  DOCBENCH_STATUS_STORAGE = 6,
  DOCBENCH_STATUS_CORRUPT_LOG = 7,
  DOCBENCH_STATUS_DUPLICATE_TRIAL = 8,
  DOCBENCH_STATUS_UNKNOWN_DATABASE = 9,
  DOCBENCH_STATUS_RUN_REJECTED = 10,
  DOCBENCH_STATUS_PANIC = 11,
} DocbenchStatus;

/**
 * Handle to a configured engine plus the runtime that drives it.
 */
typedef struct DocbenchBench DocbenchBench;

/**
 * Handle to a trial log and its aggregate views.
 */
typedef struct DocbenchStore DocbenchStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failed call on this thread, or NULL after a
 * successful call. Free with [`docbench_string_free`].
 */
char *docbench_last_error_message(void);

/**
 * # Safety
 * `s` is NULL or a string returned by this library that has not been freed.
 */
void docbench_string_free(char *s);

/**
 * Writes a deterministic JSON document of exactly `target_bytes` bytes into
 * `buf`. `*written` receives the length; with a short buffer it receives the
 * required length and `BufferTooSmall` is returned.
 *
 * # Safety
 * `buf` is valid for `buf_len` byte writes; `written` is valid for a write.
 */
enum DocbenchStatus docbench_payload_generate(size_t target_bytes,
                                              uint64_t seed,
                                              uint8_t *buf,
                                              size_t buf_len,
                                              size_t *written);

/**
 * Opens (creating if absent) the trial log at `path`. A torn final record is
 * dropped when `repair_torn_tail` is true and reported as `CorruptLog` otherwise.
 *
 * # Safety
 * `path` is a valid NUL-terminated string; `out` is valid for a write.
 */
enum DocbenchStatus docbench_store_open(const char *path,
                                        bool repair_torn_tail,
                                        struct DocbenchStore **out);

/**
 * A store with no backing file.
 *
 * # Safety
 * `out` is valid for a write.
 */
enum DocbenchStatus docbench_store_open_in_memory(struct DocbenchStore **out);

/**
 * # Safety
 * `store` is NULL or a handle from `docbench_store_open*` not yet freed.
 */
void docbench_store_free(struct DocbenchStore *store);

/**
 * Appends one trial given as a JSON object in log-line form.
 *
 * # Safety
 * `store` is a live handle; `trial_json` is a valid NUL-terminated string.
 */
enum DocbenchStatus docbench_store_append_json(const struct DocbenchStore *store,
                                               const char *trial_json);

/**
 * # Safety
 * `store` is a live handle; `count` is valid for a write.
 */
enum DocbenchStatus docbench_store_len(const struct DocbenchStore *store, size_t *count);

/**
 * Per (database, test kind) count/mean/min/max as a JSON array.
 *
 * # Safety
 * `store` is a live handle; `out` is valid for a write.
 */
enum DocbenchStatus docbench_store_aggregates_json(const struct DocbenchStore *store, char **out);

/**
 * Best and worst latency per test kind for `database_id` as a JSON array.
 *
 * # Safety
 * `store` is a live handle; `database_id` is a valid NUL-terminated string;
 * `out` is valid for a write.
 */
enum DocbenchStatus docbench_store_extremes_json(const struct DocbenchStore *store,
                                                 const char *database_id,
                                                 char **out);

/**
 * Location-bucketed average latency as a JSON array.
 *
 * # Safety
 * `store` is a live handle; `out` is valid for a write.
 */
enum DocbenchStatus docbench_store_heatmap_json(const struct DocbenchStore *store, char **out);

/**
 * Average, maximum and minimum tables rendered as `"csv"` or `"json"`.
 *
 * # Safety
 * `store` is a live handle; `format` is a valid NUL-terminated string;
 * `out` is valid for a write.
 */
enum DocbenchStatus docbench_store_report(const struct DocbenchStore *store,
                                          const char *format,
                                          char **out);

/**
 * Builds the engine from a TOML config file, or from defaults when
 * `config_path` is NULL. `DOCBENCH_*` environment overrides apply.
 *
 * # Safety
 * `config_path` is NULL or a valid NUL-terminated string; `out` is valid for a write.
 */
enum DocbenchStatus docbench_bench_new(const char *config_path, struct DocbenchBench **out);

/**
 * # Safety
 * `bench` is NULL or a handle from [`docbench_bench_new`] not yet freed.
 */
void docbench_bench_free(struct DocbenchBench *bench);

/**
 * Runs `repetitions` trials of `test_kind` against each comma-separated id in
 * `database_ids` and blocks until done. `*out` receives
 * `{"status": {...}, "trials": [...]}`. Trial errors are reported inside the
 * trials, not through the return code.
 *
 * # Safety
 * `bench` is a live handle; string arguments are valid NUL-terminated
 * strings; `out` is valid for a write.
 */
enum DocbenchStatus docbench_bench_run(const struct DocbenchBench *bench,
                                       const char *database_ids,
                                       const char *test_kind,
                                       uint32_t repetitions,
                                       uint64_t seed,
                                       char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOCBENCH_H */
