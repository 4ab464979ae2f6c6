#ifndef AGENTREC_H
#define AGENTREC_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AgentrecStatus {
  AGENTREC_STATUS_OK = 0,
  AGENTREC_STATUS_NULL_POINTER = 1,
  AGENTREC_STATUS_INVALID_UTF8 = 2,
  AGENTREC_STATUS_IO = 3,
  AGENTREC_STATUS_NOT_FOUND = 4,
  AGENTREC_STATUS_CONFLICT = 5,
  AGENTREC_STATUS_BUDGET_EXHAUSTED = 6,
  AGENTREC_STATUS_MALFORMED_SPEC = 7,
  AGENTREC_STATUS_MALFORMED_RANKING = 8,
  AGENTREC_STATUS_SESSION_CLOSED = 9,
  AGENTREC_STATUS_INTERNAL = 10,
} AgentrecStatus;

/**
 * Opaque environment handle.
 */
typedef struct AgentrecEnv AgentrecEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a store directory and `n_bundles` task bundle directories.
 *
 * # Safety
 * `store_dir` and each of the `n_bundles` entries of `bundle_dirs` must be
 * valid NUL-terminated strings; `out` must be writable.
 */
enum AgentrecStatus agentrec_env_open(const char *store_dir,
                                      const char *const *bundle_dirs,
                                      size_t n_bundles,
                                      uint32_t budget,
                                      struct AgentrecEnv **out);

/**
 * # Safety
 * `env` must come from [`agentrec_env_open`] and not be used afterwards.
 */
void agentrec_env_free(struct AgentrecEnv *env);

/**
 * Writes the public task list as JSON.
 *
 * # Safety
 * `env` must be a live handle; `out` must be writable.
 */
enum AgentrecStatus agentrec_tasks(const struct AgentrecEnv *env, char **out);

/**
 * Opens a session; writes `{session_token, observation}`.
 *
 * # Safety
 * Pointers must be valid; `agent` may be null.
 */
enum AgentrecStatus agentrec_session_create(const struct AgentrecEnv *env,
                                            const char *run_id,
                                            const char *task_id,
                                            const char *agent,
                                            char **out);

/**
 * Runs one query spec (JSON); writes the next observation.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AgentrecStatus agentrec_session_query(const struct AgentrecEnv *env,
                                           const char *token,
                                           const char *spec_json,
                                           char **out);

/**
 * Submits `{"ranking": [...]}`; writes the receipt.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AgentrecStatus agentrec_session_submit(const struct AgentrecEnv *env,
                                            const char *token,
                                            const char *ranking_json,
                                            char **out);

/**
 * Writes the metric report for a run.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AgentrecStatus agentrec_run_metrics(const struct AgentrecEnv *env,
                                         const char *run_id,
                                         bool partial,
                                         char **out);

/**
 * HR@n over `[{"ranking": [...] | null, "positive": "..."}]`.
 *
 * # Safety
 * `rows_json` must be a valid string; `out` must be writable.
 */
enum AgentrecStatus agentrec_hit_rate(const char *rows_json, size_t n, double *out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void agentrec_string_free(char *s);

/**
 * Last error message on this thread; empty after a success. Valid until
 * the next call on the same thread.
 */
const char *agentrec_last_error(void);

const char *agentrec_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGENTREC_H */
