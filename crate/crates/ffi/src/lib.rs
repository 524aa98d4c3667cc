//! C ABI over the bongard crate: opaque handles, status codes, and a
//! cbindgen-generated header (`include/bongard.h`).
//!
//! Every function returns a [`BongardStatus`]; out-parameters are written
//! only on `Ok`. Handles are created and released exclusively through this
//! API. No panics cross the boundary.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bongard::agents::greedy_action;
use bongard::bounds::{base_bounds, extended_bounds, lp_oracle_bounds, JointDistribution};
use bongard::bp::{BongardProblem, PairState};
use bongard::env::{reset, Action, EnvConfig, EpisodeState};
use bongard::harness::{concept_for, AgentCheckpoint, ConceptFamily};
use bongard::synth::{generate_bp_with_id, SynthConfig};

/// Status codes returned by every `bongard_*` function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BongardStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    Unsatisfiable = 4,
    EpisodeFinished = 5,
    BadCheckpoint = 6,
    InternalError = 7,
}

/// Opaque puzzle handle.
pub struct BongardPuzzle {
    inner: BongardProblem,
}

/// Opaque episode handle; owns the running episode and the pending state.
pub struct BongardEpisode {
    env: EpisodeState,
    current: Option<PairState>,
}

/// Opaque policy handle loaded from a training checkpoint.
pub struct BongardPolicy {
    checkpoint: AgentCheckpoint,
}

fn guard(f: impl FnOnce() -> BongardStatus) -> BongardStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => BongardStatus::InternalError,
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for reads.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, BongardStatus> {
    if ptr.is_null() {
        return Err(BongardStatus::NullPointer);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| BongardStatus::InvalidArgument)
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bongard_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a puzzle from a directory of `00.pbm` .. `11.pbm`.
///
/// # Safety
/// `dir` must be a valid NUL-terminated path; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_puzzle_load(
    dir: *const c_char,
    out: *mut *mut BongardPuzzle,
) -> BongardStatus {
    guard(|| {
        if out.is_null() {
            return BongardStatus::NullPointer;
        }
        let dir = match read_str(dir) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match bongard::bp::load_bp(Path::new(dir)) {
            Ok(bp) => {
                *out = Box::into_raw(Box::new(BongardPuzzle { inner: bp }));
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::IoError,
        }
    })
}

/// Generate a synthetic puzzle. `family` is one of
/// `fill|numerosity|shape|size|enclosure|mixed`; `index` picks the
/// parameterization within the family.
///
/// # Safety
/// `family` must be a valid NUL-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_puzzle_generate(
    family: *const c_char,
    index: u32,
    seed: u64,
    leading_pairs: bool,
    out: *mut *mut BongardPuzzle,
) -> BongardStatus {
    guard(|| {
        if out.is_null() {
            return BongardStatus::NullPointer;
        }
        let family = match read_str(family) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let family: ConceptFamily = match family.parse() {
            Ok(f) => f,
            Err(_) => return BongardStatus::InvalidArgument,
        };
        let config = SynthConfig {
            seed,
            leading_pairs,
            ..SynthConfig::default()
        };
        let concept = concept_for(family, index as usize, config.max_shapes);
        match generate_bp_with_id(&concept, &config, u64::from(index)) {
            Ok(bp) => {
                *out = Box::into_raw(Box::new(BongardPuzzle { inner: bp }));
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::Unsatisfiable,
        }
    })
}

/// Puzzle id, 0 for handles without one.
///
/// # Safety
/// `puzzle` must be a live handle from this API (or null, which returns 0).
#[no_mangle]
pub unsafe extern "C" fn bongard_puzzle_id(puzzle: *const BongardPuzzle) -> u64 {
    if puzzle.is_null() {
        return 0;
    }
    (*puzzle).inner.id()
}

/// Release a puzzle handle.
///
/// # Safety
/// `puzzle` must be null or a handle returned by this API, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bongard_puzzle_free(puzzle: *mut BongardPuzzle) {
    if !puzzle.is_null() {
        drop(Box::from_raw(puzzle));
    }
}

/// Start an episode over a puzzle: downsample to `image_side`, fix the
/// (optionally shuffled) pair order.
///
/// # Safety
/// `puzzle` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_episode_start(
    puzzle: *const BongardPuzzle,
    episode_length: u32,
    image_side: u32,
    shuffle: bool,
    seed: u64,
    out: *mut *mut BongardEpisode,
) -> BongardStatus {
    guard(|| {
        if puzzle.is_null() || out.is_null() {
            return BongardStatus::NullPointer;
        }
        let config = EnvConfig {
            episode_length: episode_length as usize,
            discount: 1.0,
            image_side: image_side as usize,
            shuffle,
        };
        match reset(&(*puzzle).inner, &config, seed) {
            Ok((env, first)) => {
                *out = Box::into_raw(Box::new(BongardEpisode {
                    env,
                    current: Some(first),
                }));
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::InvalidArgument,
        }
    })
}

/// Length of the flattened state buffer: `2 * image_side^2`.
///
/// # Safety
/// `episode` must be a live handle (or null, which returns 0).
#[no_mangle]
pub unsafe extern "C" fn bongard_episode_state_len(episode: *const BongardEpisode) -> usize {
    if episode.is_null() {
        return 0;
    }
    match &(*episode).current {
        Some(state) => 2 * state.width() * state.height(),
        None => 0,
    }
}

/// Copy the pending pair state (channel 0 then channel 1, row-major 0/1
/// values) into `buf`.
///
/// # Safety
/// `episode` must be a live handle; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_episode_state(
    episode: *const BongardEpisode,
    buf: *mut f64,
    len: usize,
) -> BongardStatus {
    guard(|| {
        if episode.is_null() || buf.is_null() {
            return BongardStatus::NullPointer;
        }
        let Some(state) = &(*episode).current else {
            return BongardStatus::EpisodeFinished;
        };
        let flat = state.to_f64();
        if len < flat.len() {
            return BongardStatus::InvalidArgument;
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        BongardStatus::Ok
    })
}

/// Consume the pending pair with `action` (0 = same group, 1 = different
/// groups). Writes the binary reward and the episode-finished flag.
///
/// # Safety
/// `episode` must be a live handle; `reward_out` and `done_out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_episode_step(
    episode: *mut BongardEpisode,
    action: u32,
    reward_out: *mut u8,
    done_out: *mut bool,
) -> BongardStatus {
    guard(|| {
        if episode.is_null() || reward_out.is_null() || done_out.is_null() {
            return BongardStatus::NullPointer;
        }
        let action = match action {
            0 => Action::Same,
            1 => Action::Different,
            _ => return BongardStatus::InvalidArgument,
        };
        let ep = &mut *episode;
        match ep.env.step(action) {
            Ok(step) => {
                *reward_out = step.reward;
                *done_out = step.done;
                ep.current = step.next;
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::EpisodeFinished,
        }
    })
}

/// Steps taken so far.
///
/// # Safety
/// `episode` must be a live handle (or null, which returns 0).
#[no_mangle]
pub unsafe extern "C" fn bongard_episode_cursor(episode: *const BongardEpisode) -> u32 {
    if episode.is_null() {
        return 0;
    }
    (*episode).env.cursor() as u32
}

/// Release an episode handle.
///
/// # Safety
/// `episode` must be null or a handle returned by this API, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bongard_episode_free(episode: *mut BongardEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

fn joint_from(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<JointDistribution, BongardStatus> {
    JointDistribution::new(p00, p01, p10, p11).map_err(|_| BongardStatus::InvalidArgument)
}

/// Base causal bounds on `E[Y|do(z)]` from an observational joint.
/// Writes `[lower0, upper0, lower1, upper1]`.
///
/// # Safety
/// `out` must be valid for 4 writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_base_bounds(
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
    out: *mut f64,
) -> BongardStatus {
    guard(|| {
        if out.is_null() {
            return BongardStatus::NullPointer;
        }
        let p = match joint_from(p00, p01, p10, p11) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let b = base_bounds(&p);
        let vals = [b.do0.lower, b.do0.upper, b.do1.lower, b.do1.upper];
        ptr::copy_nonoverlapping(vals.as_ptr(), out, 4);
        BongardStatus::Ok
    })
}

/// History-extended bounds. `h0`/`h1` are the per-action history
/// probabilities; crossed intervals are reported through `crossed_out`
/// rather than repaired.
///
/// # Safety
/// `out` must be valid for 4 writes and `crossed_out` for 2.
#[no_mangle]
pub unsafe extern "C" fn bongard_extended_bounds(
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
    h0: f64,
    h1: f64,
    swap_history_in_lower: bool,
    out: *mut f64,
    crossed_out: *mut bool,
) -> BongardStatus {
    guard(|| {
        if out.is_null() || crossed_out.is_null() {
            return BongardStatus::NullPointer;
        }
        if !(0.0..=1.0).contains(&h0) || !(0.0..=1.0).contains(&h1) {
            return BongardStatus::InvalidArgument;
        }
        let p = match joint_from(p00, p01, p10, p11) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let b = extended_bounds(&p, h0, h1, swap_history_in_lower);
        let vals = [b.do0.lower, b.do0.upper, b.do1.lower, b.do1.upper];
        ptr::copy_nonoverlapping(vals.as_ptr(), out, 4);
        let crossed = [b.crossed(0), b.crossed(1)];
        ptr::copy_nonoverlapping(crossed.as_ptr(), crossed_out, 2);
        BongardStatus::Ok
    })
}

/// Exact bound envelope by canonical response-type enumeration; same
/// layout as [`bongard_base_bounds`].
///
/// # Safety
/// `out` must be valid for 4 writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_oracle_bounds(
    p00: f64,
    p01: f64,
    p10: f64,
    p11: f64,
    out: *mut f64,
) -> BongardStatus {
    guard(|| {
        if out.is_null() {
            return BongardStatus::NullPointer;
        }
        let p = match joint_from(p00, p01, p10, p11) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match lp_oracle_bounds(&p) {
            Ok(b) => {
                let vals = [b.do0.lower, b.do0.upper, b.do1.lower, b.do1.upper];
                ptr::copy_nonoverlapping(vals.as_ptr(), out, 4);
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::InvalidArgument,
        }
    })
}

/// Load a policy checkpoint written by the `train` command.
///
/// # Safety
/// `path` must be a valid NUL-terminated path; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_policy_load(
    path: *const c_char,
    out: *mut *mut BongardPolicy,
) -> BongardStatus {
    guard(|| {
        if out.is_null() {
            return BongardStatus::NullPointer;
        }
        let path = match read_str(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match AgentCheckpoint::load(Path::new(path)) {
            Ok(checkpoint) => {
                *out = Box::into_raw(Box::new(BongardPolicy { checkpoint }));
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::BadCheckpoint,
        }
    })
}

/// Greedy action for a flattened state (length `2 * image_side^2` matching
/// the checkpoint). Writes 0 (same group) or 1 (different groups).
///
/// # Safety
/// `policy` must be a live handle; `state` must be valid for `len` reads;
/// `action_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_policy_greedy(
    policy: *const BongardPolicy,
    state: *const f64,
    len: usize,
    action_out: *mut u32,
) -> BongardStatus {
    guard(|| {
        if policy.is_null() || state.is_null() || action_out.is_null() {
            return BongardStatus::NullPointer;
        }
        let input = std::slice::from_raw_parts(state, len);
        match greedy_action(&(*policy).checkpoint.spec, input) {
            Ok(action) => {
                *action_out = action.index() as u32;
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::InvalidArgument,
        }
    })
}

/// Release a policy handle.
///
/// # Safety
/// `policy` must be null or a handle returned by this API, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bongard_policy_free(policy: *mut BongardPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

// Seeded sampling helper so bindings can drive stochastic rollouts without
// shipping their own generator.

/// Opaque deterministic RNG handle.
pub struct BongardRng {
    inner: ChaCha8Rng,
}

/// Create a seeded RNG for stochastic policy rollouts.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_rng_new(seed: u64, out: *mut *mut BongardRng) -> BongardStatus {
    guard(|| {
        if out.is_null() {
            return BongardStatus::NullPointer;
        }
        *out = Box::into_raw(Box::new(BongardRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }));
        BongardStatus::Ok
    })
}

/// Sample an action from the policy's softmax distribution.
///
/// # Safety
/// All handles must be live; `state` must be valid for `len` reads;
/// `action_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bongard_policy_sample(
    policy: *const BongardPolicy,
    rng: *mut BongardRng,
    state: *const f64,
    len: usize,
    action_out: *mut u32,
) -> BongardStatus {
    guard(|| {
        if policy.is_null() || rng.is_null() || state.is_null() || action_out.is_null() {
            return BongardStatus::NullPointer;
        }
        let input = std::slice::from_raw_parts(state, len);
        match bongard::agents::act(&(*policy).checkpoint.spec, input, &[], &mut (*rng).inner) {
            Ok(outcome) => {
                *action_out = outcome.action.index() as u32;
                BongardStatus::Ok
            }
            Err(_) => BongardStatus::InvalidArgument,
        }
    })
}

/// Release an RNG handle.
///
/// # Safety
/// `rng` must be null or a handle returned by this API, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bongard_rng_free(rng: *mut BongardRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}
