#ifndef TMLAB_H
#define TMLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TmlabStatus {
  TMLAB_STATUS_OK = 0,
  TMLAB_STATUS_NULL_POINTER = 1,
  TMLAB_STATUS_INVALID_INPUT = 2,
  TMLAB_STATUS_CONFIG = 3,
  TMLAB_STATUS_IO = 4,
  TMLAB_STATUS_FORMAT = 5,
  TMLAB_STATUS_CORRUPT = 6,
  TMLAB_STATUS_STATE = 7,
  TMLAB_STATUS_NUMERIC = 8,
  TMLAB_STATUS_PANIC = 9,
} TmlabStatus;

/**
 * A running Touch-Mark episode.
 */
typedef struct TmlabEnv TmlabEnv;

/**
 * One trained team with learning switched off.
 */
typedef struct TmlabTeam TmlabTeam;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *tmlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tmlab_version(void);

/**
 * Creates an environment. `config_text` may be null for defaults, or hold
 * `section.key = value` lines in the experiment configuration format.
 *
 * # Safety
 * `config_text` must be null or a valid NUL-terminated string and `out`
 * a valid pointer.
 */
enum TmlabStatus tmlab_env_new(const char *config_text, uint64_t seed, struct TmlabEnv **out);

/**
 * # Safety
 * `handle` must be null or come from [`tmlab_env_new`] and not be used afterwards.
 */
void tmlab_env_free(struct TmlabEnv *handle);

/**
 * Starts a new episode. With `speeds` null the current speed caps carry
 * over; otherwise it points to four caps.
 *
 * # Safety
 * `handle` must be a live environment and `speeds` null or four doubles.
 */
enum TmlabStatus tmlab_env_reset(struct TmlabEnv *handle, const double *speeds);

/**
 * Advances one step. `actions` holds four `[x, y]` pairs in agent order.
 * Any of `rewards` (four doubles), `scorer` (-1 when nobody touched) and
 * `done` may be null.
 *
 * # Safety
 * Pointers must be null (where allowed) or valid for the stated lengths.
 */
enum TmlabStatus tmlab_env_step(struct TmlabEnv *handle,
                                const double *actions,
                                double *rewards,
                                int32_t *scorer,
                                bool *done);

/**
 * Writes the 15-value observation of `agent`.
 *
 * # Safety
 * `handle` must be a live environment and `out` valid for 15 doubles.
 */
enum TmlabStatus tmlab_env_observe(const struct TmlabEnv *handle, uint32_t agent, double *out);

/**
 * Writes the 20-value global state.
 *
 * # Safety
 * `handle` must be a live environment and `out` valid for 20 doubles.
 */
enum TmlabStatus tmlab_env_global_state(const struct TmlabEnv *handle, double *out);

/**
 * Current speed caps of the four agents.
 *
 * # Safety
 * `handle` must be a live environment and `out` valid for four doubles.
 */
enum TmlabStatus tmlab_env_speeds(const struct TmlabEnv *handle, double *out);

/**
 * Loads team `team` (0 or 1) from a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TmlabStatus tmlab_team_load(const char *path, uint32_t team, struct TmlabTeam **out);

/**
 * # Safety
 * `handle` must be null or come from [`tmlab_team_load`] and not be used afterwards.
 */
void tmlab_team_free(struct TmlabTeam *handle);

/**
 * Noise-free actions for the team playing in `slot` of `env`: two `[x, y]`
 * pairs into `actions`, and the selected policy (1 winning, 2 losing) into
 * `label` unless it is null.
 *
 * # Safety
 * Handles must be live, `actions` valid for four doubles.
 */
enum TmlabStatus tmlab_team_act(const struct TmlabTeam *handle,
                                const struct TmlabEnv *environment,
                                uint32_t slot,
                                double *actions,
                                uint8_t *label);

/**
 * Terminal rewards when `scorer` touches a landmark, with the weak team's
 * bonus multipliers.
 *
 * # Safety
 * `out` must be valid for four doubles.
 */
enum TmlabStatus tmlab_terminal_rewards(uint32_t scorer,
                                        double r_l,
                                        double alpha_team,
                                        double alpha_agent,
                                        uint32_t weak_team,
                                        uint32_t weak_agent,
                                        double *out);

/**
 * Dynamic multipliers from four raw per-agent statistics (landmark counts
 * or speeds).
 *
 * # Safety
 * `stats` must be valid for four doubles; the outputs must be valid pointers.
 */
enum TmlabStatus tmlab_dynamic_alphas(const double *stats,
                                      uint32_t weak_team,
                                      uint32_t weak_agent,
                                      double *alpha_team,
                                      double *alpha_agent);

/**
 * Standard deviation of per-agent landmark rates over the last `window`
 * episodes of a metrics CSV.
 *
 * # Safety
 * `metrics_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TmlabStatus tmlab_fairness(const char *metrics_path, uint64_t window, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TMLAB_H */
