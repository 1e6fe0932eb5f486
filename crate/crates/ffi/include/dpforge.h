#ifndef DPFORGE_H
#define DPFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum DpfStatus {
  DPF_STATUS_OK = 0,
  DPF_STATUS_NULL_POINTER = 1,
  DPF_STATUS_INVALID_UTF8 = 2,
  DPF_STATUS_INVALID_ARGUMENT = 3,
  DPF_STATUS_CONFIG = 4,
  DPF_STATUS_IO = 5,
  DPF_STATUS_RUNTIME = 6,
  DPF_STATUS_PANIC = 7,
} DpfStatus;

/*
 A loaded dataset.
 */
typedef struct DpfDataset DpfDataset;

/*
 Operator clients plus an optional strategy cache.
 */
typedef struct DpfEngine DpfEngine;

/*
 A processing strategy.
 */
typedef struct DpfStrategy DpfStrategy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static string. Do not free.
 */
const char *dpf_version(void);

/*
 Message of the last failed call on this thread, or NULL. Free with
 `dpf_string_free`.
 */
char *dpf_last_error(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void dpf_string_free(char *s);

/*
 Number of strategies in the search space.
 */
size_t dpf_strategy_count(void);

/*
 The `index`-th strategy in enumeration order.

 # Safety
 `out` must be a valid pointer.
 */
enum DpfStatus dpf_strategy_at(size_t index, struct DpfStrategy **out);

/*
 Parses a strategy such as `"Cleaning -> Selection"` or `"NONE"`.

 # Safety
 `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpfStatus dpf_strategy_parse(const char *text, struct DpfStrategy **out);

/*
 Canonical text of a strategy, or NULL if `s` is NULL.

 # Safety
 `s` must be a live strategy handle or NULL.
 */
char *dpf_strategy_to_string(const struct DpfStrategy *s);

/*
 Number of teams in a strategy (0 for NULL).

 # Safety
 `s` must be a live strategy handle or NULL.
 */
size_t dpf_strategy_len(const struct DpfStrategy *s);

/*
 # Safety
 `s` must come from this library and not have been freed.
 */
void dpf_strategy_free(struct DpfStrategy *s);

/*
 Loads a JSONL dataset.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DpfStatus dpf_dataset_load(const char *path, struct DpfDataset **out);

/*
 Writes a dataset as canonical JSONL.

 # Safety
 `d` must be a live dataset handle and `path` a NUL-terminated string.
 */
enum DpfStatus dpf_dataset_save(const struct DpfDataset *d, const char *path);

/*
 Number of samples (0 for NULL).

 # Safety
 `d` must be a live dataset handle or NULL.
 */
size_t dpf_dataset_len(const struct DpfDataset *d);

/*
 Hex content fingerprint, or NULL if `d` is NULL.

 # Safety
 `d` must be a live dataset handle or NULL.
 */
char *dpf_dataset_fingerprint(const struct DpfDataset *d);

/*
 # Safety
 `d` must come from this library and not have been freed.
 */
void dpf_dataset_free(struct DpfDataset *d);

/*
 Engine with built-in clients and default operator settings. `cache_dir`
 may be NULL to run without a cache.

 # Safety
 `cache_dir` must be NULL or a NUL-terminated string; `out` a valid pointer.
 */
enum DpfStatus dpf_engine_new(uint64_t seed, const char *cache_dir, struct DpfEngine **out);

/*
 Engine built from a run configuration file, using its clients and cache.

 # Safety
 `config_path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum DpfStatus dpf_engine_from_config(const char *config_path, struct DpfEngine **out);

/*
 # Safety
 `e` must come from this library and not have been freed.
 */
void dpf_engine_free(struct DpfEngine *e);

/*
 Applies `strategy` to `input`, reusing cached prefixes when the engine
 has a cache. The result is a new dataset handle.

 # Safety
 Handles must be live; `out` must be a valid pointer.
 */
enum DpfStatus dpf_engine_apply(const struct DpfEngine *engine,
                                const struct DpfStrategy *strategy,
                                const struct DpfDataset *input,
                                struct DpfDataset **out);

/*
 Runs a full search from a configuration file. `output_dir` may be NULL to
 use the configured directory. On success `*report_json` receives the run
 report as JSON; free it with `dpf_string_free`.

 # Safety
 Strings must be NUL-terminated (or NULL where allowed); `report_json` a
 valid pointer.
 */
enum DpfStatus dpf_run_search(const char *config_path, const char *output_dir, char **report_json);

/*
 Feedback score `score - baseline`. Both inputs must be finite.

 # Safety
 `out` must be a valid pointer.
 */
enum DpfStatus dpf_compute_feedback(double score, double baseline, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPFORGE_H */
