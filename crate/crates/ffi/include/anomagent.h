#ifndef ANOMAGENT_H
#define ANOMAGENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum AgStatus {
  AG_STATUS_OK = 0,
  AG_STATUS_NULL_POINTER = 1,
  AG_STATUS_INVALID_UTF8 = 2,
  AG_STATUS_INVALID_JSON = 3,
  AG_STATUS_PROTOCOL = 4,
  AG_STATUS_INVALID_ARGUMENT = 5,
  AG_STATUS_BACKEND = 6,
  AG_STATUS_PANIC = 7,
} AgStatus;

// Opaque trajectory handle.
typedef struct AgTrajectory AgTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message on this thread, or null. Valid until the next failing call on
// the same thread; do not free.
const char *ag_last_error_message(void);

void ag_clear_error(void);

// Library version as a static string; do not free.
const char *ag_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a pointer obtained from this library that was not freed yet.
void ag_string_free(char *s);

// Parses trajectory JSON (`{task, segments, images}`) into a new handle.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum AgStatus ag_trajectory_from_json(const char *json, struct AgTrajectory **out);

// Parses a tagged transcript for the task given as JSON (`{item_name, anomaly_type,
// normal_image}`).
//
// # Safety
// `transcript` and `task_json` must be NUL-terminated strings; `out` must be writable.
enum AgStatus ag_trajectory_parse_transcript(const char *transcript,
                                             const char *task_json,
                                             struct AgTrajectory **out);

// Trajectory as one line of JSON.
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum AgStatus ag_trajectory_to_json(const struct AgTrajectory *h, char **out);

// Trajectory as tagged transcript text.
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum AgStatus ag_trajectory_serialize(const struct AgTrajectory *h, char **out);

// Writes whether the trajectory is format-valid. When it is not and `reason` is
// non-null, a description of the first violation is written there.
//
// # Safety
// `h` must be a live handle; `valid` must be writable; `reason` may be null.
enum AgStatus ag_trajectory_check_format(const struct AgTrajectory *h, bool *valid, char **reason);

// Number of transcript segments.
//
// # Safety
// `h` must be a live handle; `out` must be writable.
enum AgStatus ag_trajectory_segment_count(const struct AgTrajectory *h, size_t *out);

// Releases a handle. Null is ignored.
//
// # Safety
// `h` must be null or a handle from this library that was not freed yet.
void ag_trajectory_free(struct AgTrajectory *h);

// Group-normalized advantages of `len` rewards into `out` (`len` slots).
//
// # Safety
// `rewards` must hold `len` values and `out` must have room for `len` values.
enum AgStatus ag_group_advantages(const double *rewards, size_t len, double std_floor, double *out);

// Negative sum of the masked log-probabilities and the number of masked tokens.
//
// # Safety
// `logprobs` and `mask` must each hold `len` values; outputs must be writable.
enum AgStatus ag_sft_loss(const double *logprobs,
                          const bool *mask,
                          size_t len,
                          double *out_loss,
                          size_t *out_tokens);

// Inception Score of a row-major `rows x cols` probability matrix.
//
// # Safety
// `probs` must hold `rows * cols` values; `out` must be writable.
enum AgStatus ag_inception_score(const double *probs, size_t rows, size_t cols, double *out);

// Sum of positive consecutive quality-score gains.
//
// # Safety
// `scores` must hold `len` values; `out` must be writable.
enum AgStatus ag_reflection_reward(const double *scores, size_t len, double *out);

// GRPO loss with diagnostics. `group_json` is `{rewards, tokens: [{new, old, ref,
// mask}]}`; `config_json` may be null for defaults. Writes the result as JSON.
//
// # Safety
// String arguments must be NUL-terminated (or null where allowed); `out` writable.
enum AgStatus ag_grpo_loss_json(const char *group_json, const char *config_json, char **out);

// Reward breakdown of an episode (a bare episode or an episode record) using the
// episode's own last quality score. `weights_json` may be null for defaults.
//
// # Safety
// String arguments must be NUL-terminated (or null where allowed); `out` writable.
enum AgStatus ag_score_episode_json(const char *episode_json, const char *weights_json, char **out);

// Builds one trajectory from a build spec. `backend_json` may be null for the default
// simulated backend. Writes trajectory JSON.
//
// # Safety
// String arguments must be NUL-terminated (or null where allowed); `out` writable.
enum AgStatus ag_build_trajectory_json(const char *spec_json, const char *backend_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANOMAGENT_H */
