#ifndef BONGARD_H
#define BONGARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every `bongard_*` function.
typedef enum BongardStatus {
  BONGARD_STATUS_OK = 0,
  BONGARD_STATUS_NULL_POINTER = 1,
  BONGARD_STATUS_INVALID_ARGUMENT = 2,
  BONGARD_STATUS_IO_ERROR = 3,
  BONGARD_STATUS_UNSATISFIABLE = 4,
  BONGARD_STATUS_EPISODE_FINISHED = 5,
  BONGARD_STATUS_BAD_CHECKPOINT = 6,
  BONGARD_STATUS_INTERNAL_ERROR = 7,
} BongardStatus;

// Opaque episode handle; owns the running episode and the pending state.
typedef struct BongardEpisode BongardEpisode;

// Opaque policy handle loaded from a training checkpoint.
typedef struct BongardPolicy BongardPolicy;

// Opaque puzzle handle.
typedef struct BongardPuzzle BongardPuzzle;

// Opaque deterministic RNG handle.
typedef struct BongardRng BongardRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Crate version as a static NUL-terminated string.
const char *bongard_version(void);

// Load a puzzle from a directory of `00.pbm` .. `11.pbm`.
//
// # Safety
// `dir` must be a valid NUL-terminated path; `out` must be valid for
// writes.
enum BongardStatus bongard_puzzle_load(const char *dir, struct BongardPuzzle **out);

// Generate a synthetic puzzle. `family` is one of
// `fill|numerosity|shape|size|enclosure|mixed`; `index` picks the
// parameterization within the family.
//
// # Safety
// `family` must be a valid NUL-terminated string; `out` must be valid for
// writes.
enum BongardStatus bongard_puzzle_generate(const char *family,
                                           uint32_t index,
                                           uint64_t seed,
                                           bool leading_pairs,
                                           struct BongardPuzzle **out);

// Puzzle id, 0 for handles without one.
//
// # Safety
// `puzzle` must be a live handle from this API (or null, which returns 0).
uint64_t bongard_puzzle_id(const struct BongardPuzzle *puzzle);

// Release a puzzle handle.
//
// # Safety
// `puzzle` must be null or a handle returned by this API, not yet freed.
void bongard_puzzle_free(struct BongardPuzzle *puzzle);

// Start an episode over a puzzle: downsample to `image_side`, fix the
// (optionally shuffled) pair order.
//
// # Safety
// `puzzle` must be a live handle; `out` must be valid for writes.
enum BongardStatus bongard_episode_start(const struct BongardPuzzle *puzzle,
                                         uint32_t episode_length,
                                         uint32_t image_side,
                                         bool shuffle,
                                         uint64_t seed,
                                         struct BongardEpisode **out);

// Length of the flattened state buffer: `2 * image_side^2`.
//
// # Safety
// `episode` must be a live handle (or null, which returns 0).
size_t bongard_episode_state_len(const struct BongardEpisode *episode);

// Copy the pending pair state (channel 0 then channel 1, row-major 0/1
// values) into `buf`.
//
// # Safety
// `episode` must be a live handle; `buf` must be valid for `len` writes.
enum BongardStatus bongard_episode_state(const struct BongardEpisode *episode,
                                         double *buf,
                                         size_t len);

// Consume the pending pair with `action` (0 = same group, 1 = different
// groups). Writes the binary reward and the episode-finished flag.
//
// # Safety
// `episode` must be a live handle; `reward_out` and `done_out` must be
// valid for writes.
enum BongardStatus bongard_episode_step(struct BongardEpisode *episode,
                                        uint32_t action,
                                        uint8_t *reward_out,
                                        bool *done_out);

// Steps taken so far.
//
// # Safety
// `episode` must be a live handle (or null, which returns 0).
uint32_t bongard_episode_cursor(const struct BongardEpisode *episode);

// Release an episode handle.
//
// # Safety
// `episode` must be null or a handle returned by this API, not yet freed.
void bongard_episode_free(struct BongardEpisode *episode);

// Base causal bounds on `E[Y|do(z)]` from an observational joint.
// Writes `[lower0, upper0, lower1, upper1]`.
//
// # Safety
// `out` must be valid for 4 writes.
enum BongardStatus bongard_base_bounds(double p00, double p01, double p10, double p11, double *out);

// History-extended bounds. `h0`/`h1` are the per-action history
// probabilities; crossed intervals are reported through `crossed_out`
// rather than repaired.
//
// # Safety
// `out` must be valid for 4 writes and `crossed_out` for 2.
enum BongardStatus bongard_extended_bounds(double p00,
                                           double p01,
                                           double p10,
                                           double p11,
                                           double h0,
                                           double h1,
                                           bool swap_history_in_lower,
                                           double *out,
                                           bool *crossed_out);

// Exact bound envelope by canonical response-type enumeration; same
// layout as [`bongard_base_bounds`].
//
// # Safety
// `out` must be valid for 4 writes.
enum BongardStatus bongard_oracle_bounds(double p00,
                                         double p01,
                                         double p10,
                                         double p11,
                                         double *out);

// Load a policy checkpoint written by the `train` command.
//
// # Safety
// `path` must be a valid NUL-terminated path; `out` must be valid for
// writes.
enum BongardStatus bongard_policy_load(const char *path, struct BongardPolicy **out);

// Greedy action for a flattened state (length `2 * image_side^2` matching
// the checkpoint). Writes 0 (same group) or 1 (different groups).
//
// # Safety
// `policy` must be a live handle; `state` must be valid for `len` reads;
// `action_out` must be valid for writes.
enum BongardStatus bongard_policy_greedy(const struct BongardPolicy *policy,
                                         const double *state,
                                         size_t len,
                                         uint32_t *action_out);

// Release a policy handle.
//
// # Safety
// `policy` must be null or a handle returned by this API, not yet freed.
void bongard_policy_free(struct BongardPolicy *policy);

// Create a seeded RNG for stochastic policy rollouts.
//
// # Safety
// `out` must be valid for writes.
enum BongardStatus bongard_rng_new(uint64_t seed, struct BongardRng **out);

// Sample an action from the policy's softmax distribution.
//
// # Safety
// All handles must be live; `state` must be valid for `len` reads;
// `action_out` must be valid for writes.
enum BongardStatus bongard_policy_sample(const struct BongardPolicy *policy,
                                         struct BongardRng *rng,
                                         const double *state,
                                         size_t len,
                                         uint32_t *action_out);

// Release an RNG handle.
//
// # Safety
// `rng` must be null or a handle returned by this API, not yet freed.
void bongard_rng_free(struct BongardRng *rng);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BONGARD_H */
