//! ABI surface tests: exercise the exported functions the way a foreign
//! caller would, then compile and run an actual C client against the
//! generated header and shared library.

use std::ffi::CString;
use std::path::PathBuf;
use std::ptr;

use bongard_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn version_is_non_empty() {
    let v = bongard_version();
    assert!(!v.is_null());
    let s = unsafe { std::ffi::CStr::from_ptr(v) }.to_str().unwrap();
    assert!(!s.is_empty());
}

#[test]
fn generate_episode_roundtrip() {
    unsafe {
        let mut puzzle: *mut BongardPuzzle = ptr::null_mut();
        let family = c("fill");
        let status = bongard_puzzle_generate(family.as_ptr(), 0, 7, false, &mut puzzle);
        assert_eq!(status, BongardStatus::Ok);
        assert_eq!(bongard_puzzle_id(puzzle), 0);

        let mut episode: *mut BongardEpisode = ptr::null_mut();
        let status = bongard_episode_start(puzzle, 144, 16, true, 3, &mut episode);
        assert_eq!(status, BongardStatus::Ok);
        let len = bongard_episode_state_len(episode);
        assert_eq!(len, 2 * 16 * 16);

        let mut buf = vec![0.0f64; len];
        assert_eq!(
            bongard_episode_state(episode, buf.as_mut_ptr(), buf.len()),
            BongardStatus::Ok
        );
        assert!(buf.iter().all(|&v| v == 0.0 || v == 1.0));

        let mut total = 0u32;
        let mut done = false;
        let mut steps = 0;
        while !done {
            let mut reward = 0u8;
            let status = bongard_episode_step(episode, steps % 2, &mut reward, &mut done);
            assert_eq!(status, BongardStatus::Ok);
            total += u32::from(reward);
            steps += 1;
        }
        assert_eq!(steps, 144);
        assert_eq!(bongard_episode_cursor(episode), 144);
        assert!(total <= 144);

        // Stepping a finished episode reports EpisodeFinished.
        let mut reward = 0u8;
        assert_eq!(
            bongard_episode_step(episode, 0, &mut reward, &mut done),
            BongardStatus::EpisodeFinished
        );

        bongard_episode_free(episode);
        bongard_puzzle_free(puzzle);
    }
}

#[test]
fn bounds_functions_match_library() {
    unsafe {
        let mut out = [0.0f64; 4];
        let status = bongard_base_bounds(0.25, 0.25, 0.25, 0.25, out.as_mut_ptr());
        assert_eq!(status, BongardStatus::Ok);
        assert_eq!(out, [0.25, 0.75, 0.25, 0.75]);

        let mut oracle = [0.0f64; 4];
        assert_eq!(
            bongard_oracle_bounds(0.25, 0.25, 0.25, 0.25, oracle.as_mut_ptr()),
            BongardStatus::Ok
        );
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9);
        }

        let mut crossed = [false; 2];
        let status = bongard_extended_bounds(
            0.25,
            0.25,
            0.25,
            0.25,
            0.6,
            0.4,
            false,
            out.as_mut_ptr(),
            crossed.as_mut_ptr(),
        );
        assert_eq!(status, BongardStatus::Ok);
        assert!((out[0] - 0.4).abs() < 1e-15);
        assert!((out[1] - 0.6).abs() < 1e-15);
        assert!(!crossed[0]);
        // do(1) lower bound takes the opposite action's history probability
        // (0.6) while its upper takes h1 (0.4): a crossed interval, reported
        // as data.
        assert!(crossed[1]);
        assert!((out[2] - 0.6).abs() < 1e-15);
        assert!((out[3] - 0.4).abs() < 1e-15);

        // Not a distribution.
        assert_eq!(
            bongard_base_bounds(0.9, 0.9, 0.9, 0.9, out.as_mut_ptr()),
            BongardStatus::InvalidArgument
        );
    }
}

#[test]
fn null_pointers_are_rejected_not_fatal() {
    unsafe {
        let mut out4 = [0.0f64; 4];
        assert_eq!(
            bongard_base_bounds(0.25, 0.25, 0.25, 0.25, ptr::null_mut()),
            BongardStatus::NullPointer
        );
        let mut puzzle: *mut BongardPuzzle = ptr::null_mut();
        assert_eq!(
            bongard_puzzle_load(ptr::null(), &mut puzzle),
            BongardStatus::NullPointer
        );
        let family = c("no-such-family");
        assert_eq!(
            bongard_puzzle_generate(family.as_ptr(), 0, 1, false, &mut puzzle),
            BongardStatus::InvalidArgument
        );
        let path = c("/definitely/not/here");
        assert_eq!(
            bongard_puzzle_load(path.as_ptr(), &mut puzzle),
            BongardStatus::IoError
        );
        let mut policy: *mut BongardPolicy = ptr::null_mut();
        assert_eq!(
            bongard_policy_load(path.as_ptr(), &mut policy),
            BongardStatus::BadCheckpoint
        );
        // Free of null is a no-op.
        bongard_puzzle_free(ptr::null_mut());
        bongard_episode_free(ptr::null_mut());
        bongard_policy_free(ptr::null_mut());
        bongard_rng_free(ptr::null_mut());
        let _ = out4;
    }
}

#[test]
fn header_exists_with_expected_symbols() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("bongard.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for symbol in [
        "BONGARD_STATUS_OK",
        "bongard_puzzle_generate",
        "bongard_episode_step",
        "bongard_base_bounds",
        "bongard_extended_bounds",
        "bongard_oracle_bounds",
        "bongard_policy_greedy",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}

#[test]
fn c_client_compiles_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include_dir = manifest.join("include");
    // target/<profile>/ holds the unhashed cdylib next to the test binary's
    // deps directory.
    let lib_dir = PathBuf::from(std::env::current_exe().unwrap())
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    assert!(
        lib_dir.join("libbongard_ffi.so").is_file(),
        "cdylib not found in {}",
        lib_dir.display()
    );

    let src = r#"
#include <stdio.h>
#include <stdlib.h>
#include "bongard.h"

int main(void) {
    double out[4];
    if (bongard_base_bounds(0.25, 0.25, 0.25, 0.25, out) != BONGARD_STATUS_OK) return 1;
    if (out[0] != 0.25 || out[1] != 0.75) return 2;

    BongardPuzzle *puzzle = NULL;
    if (bongard_puzzle_generate("mixed", 1, 11, false, &puzzle) != BONGARD_STATUS_OK) return 3;
    BongardEpisode *ep = NULL;
    if (bongard_episode_start(puzzle, 36, 16, true, 5, &ep) != BONGARD_STATUS_OK) return 4;
    size_t len = bongard_episode_state_len(ep);
    double *buf = malloc(len * sizeof(double));
    unsigned total = 0;
    bool done = false;
    while (!done) {
        if (bongard_episode_state(ep, buf, len) != BONGARD_STATUS_OK) return 5;
        uint8_t reward = 0;
        if (bongard_episode_step(ep, 0, &reward, &done) != BONGARD_STATUS_OK) return 6;
        total += reward;
    }
    if (bongard_episode_cursor(ep) != 36) return 7;
    free(buf);
    bongard_episode_free(ep);
    bongard_puzzle_free(puzzle);
    printf("reward=%u\n", total);
    return 0;
}
"#;
    let dir = tempfile::tempdir().unwrap();
    let c_path = dir.path().join("client.c");
    let bin_path = dir.path().join("client");
    std::fs::write(&c_path, src).unwrap();
    let compile = std::process::Command::new("cc")
        .arg(&c_path)
        .arg("-o")
        .arg(&bin_path)
        .arg(format!("-I{}", include_dir.display()))
        .arg(format!("-L{}", lib_dir.display()))
        .arg("-lbongard_ffi")
        .output()
        .expect("cc runs");
    assert!(
        compile.status.success(),
        "cc failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );
    let run = std::process::Command::new(&bin_path)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .expect("client runs");
    assert!(
        run.status.success(),
        "client exited {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stdout)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("reward="));
}
