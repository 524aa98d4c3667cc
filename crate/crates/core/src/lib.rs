//! Bongard problems as a reinforcement-learning laboratory.
//!
//! A Bongard problem is a puzzle of two six-image groups separated by a hidden
//! property set. This crate compiles each puzzle into a contextual-bandit
//! episode over its 144 ordered image pairs, generates synthetic puzzles with
//! machine-readable ground truth, computes causal bounds on interventional
//! reward from confounded prior experience, and trains small policy-gradient
//! agents (MLP and siamese encoders) on the result.
//!
//! The `bongard` binary exposes the whole pipeline:
//! `bongard <generate|train|eval|bounds-verify|report>`.

pub mod agents;
pub mod bounds;
pub mod bp;
pub mod env;
pub mod harness;
pub mod nn;
pub mod synth;
