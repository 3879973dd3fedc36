#ifndef UNIMPC_H
#define UNIMPC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UnimpcStatus {
  UNIMPC_STATUS_OK = 0,
  UNIMPC_STATUS_NULL_POINTER = 1,
  UNIMPC_STATUS_INVALID_UTF8 = 2,
  UNIMPC_STATUS_CONFIG = 3,
  UNIMPC_STATUS_IO = 4,
  UNIMPC_STATUS_NUMERIC = 5,
  UNIMPC_STATUS_INVALID = 6,
  // An output buffer is shorter than the data.
  UNIMPC_STATUS_BUFFER_TOO_SMALL = 7,
  UNIMPC_STATUS_OUT_OF_RANGE = 8,
  UNIMPC_STATUS_PANIC = 9,
} UnimpcStatus;

typedef enum UnimpcRunState {
  UNIMPC_RUN_STATE_COMPLETED = 0,
  // Every sample ran but the lap target was not reached.
  UNIMPC_RUN_STATE_INCOMPLETE = 1,
  UNIMPC_RUN_STATE_ABORTED = 2,
} UnimpcRunState;

// Opaque run configuration.
typedef struct UnimpcConfig UnimpcConfig;

// Opaque closed-loop report.
typedef struct UnimpcReport UnimpcReport;

// Rollout averages of a report.
typedef struct UnimpcAggregates {
  size_t samples;
  double n_it;
  double delta_r_avg;
  double r_avg;
  double max_violation;
  double t_prep_us;
  double t_fb_us;
} UnimpcAggregates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message of the calling thread, or null when no call has failed yet.
//
// The string stays valid until the next failing call on the same thread.
const char *unimpc_last_error(void);

// Parses a TOML run configuration.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer slot.
enum UnimpcStatus unimpc_config_from_toml(const char *toml, struct UnimpcConfig **out);

// Loads a TOML run configuration; a relative track path resolves against the file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer slot.
enum UnimpcStatus unimpc_config_load(const char *path, struct UnimpcConfig **out);

// Number of runs behind a reproduction target (`fig1`, `fig2`, `table2`, `mpcc`).
//
// # Safety
// `target` must be a NUL-terminated string and `count` writable.
enum UnimpcStatus unimpc_preset_count(const char *target, size_t *count);

// Run `index` of a reproduction target as a config handle.
//
// # Safety
// `target` must be a NUL-terminated string and `out` a writable pointer slot.
enum UnimpcStatus unimpc_config_preset(const char *target,
                                       size_t index,
                                       uint64_t seed,
                                       struct UnimpcConfig **out);

// # Safety
// `cfg` must be a live handle.
enum UnimpcStatus unimpc_config_set_seed(struct UnimpcConfig *cfg, uint64_t seed);

// # Safety
// `cfg` must be a live handle.
enum UnimpcStatus unimpc_config_set_steps(struct UnimpcConfig *cfg, size_t steps);

// Serializes a config to TOML. Free the string with [`unimpc_string_free`].
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer slot.
enum UnimpcStatus unimpc_config_to_toml(const struct UnimpcConfig *cfg, char **out);

// # Safety
// `s` is null or a string returned by this library, not yet freed.
void unimpc_string_free(char *s);

// # Safety
// `cfg` is null or a handle from this library, not yet freed.
void unimpc_config_free(struct UnimpcConfig *cfg);

// Simulates the closed loop. An engine abort still yields a report; check
// [`unimpc_report_state`].
//
// # Safety
// `cfg` must be a live handle and `out` a writable pointer slot.
enum UnimpcStatus unimpc_run(const struct UnimpcConfig *cfg, struct UnimpcReport **out);

// Run state; `abort_step` (optional) receives the sample index of an abort.
//
// # Safety
// `report` must be a live handle; `state` writable; `abort_step` null or writable.
enum UnimpcStatus unimpc_report_state(const struct UnimpcReport *report,
                                      enum UnimpcRunState *state,
                                      size_t *abort_step);

// # Safety
// `report` must be a live handle and `out` writable.
enum UnimpcStatus unimpc_report_aggregates(const struct UnimpcReport *report,
                                           struct UnimpcAggregates *out);

// State and input dimensions and the number of recorded samples.
//
// # Safety
// `report` must be a live handle; each output is null or writable.
enum UnimpcStatus unimpc_report_dims(const struct UnimpcReport *report,
                                     size_t *n_x,
                                     size_t *n_u,
                                     size_t *samples);

// State after the last applied input; `buf` needs `n_x` entries.
//
// # Safety
// `report` must be a live handle and `buf` must hold `len` doubles.
enum UnimpcStatus unimpc_report_final_state(const struct UnimpcReport *report,
                                            double *buf,
                                            size_t len);

// Measured state and applied input of sample `k`; `x` needs `n_x` and `u` needs `n_u` entries.
//
// # Safety
// `report` must be a live handle; `x` and `u` must hold `n_x` and `n_u` doubles.
enum UnimpcStatus unimpc_report_sample(const struct UnimpcReport *report,
                                       size_t k,
                                       double *x,
                                       size_t n_x,
                                       double *u,
                                       size_t n_u,
                                       size_t *n_it);

// Writes `trace.csv`, `rollout.csv`, `summary.json`, `fig1_data.csv` and `fig2_data.csv` into `dir`.
//
// # Safety
// `report` must be a live handle and `dir` a NUL-terminated string.
enum UnimpcStatus unimpc_report_write(const struct UnimpcReport *report,
                                      const char *dir);

// # Safety
// `report` is null or a handle from this library, not yet freed.
void unimpc_report_free(struct UnimpcReport *report);

// Runs the numerical self-checks; `failed` receives the number of failing checks.
//
// # Safety
// `failed` must be writable.
enum UnimpcStatus unimpc_selftest(uint64_t seed, size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNIMPC_H */
