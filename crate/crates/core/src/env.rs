//! The Bongard decision process: one episode per puzzle, states are ordered
//! image pairs, binary actions, binary rewards.
//!
//! Actions never influence the next state; the pair sequence is fixed by the
//! reset seed, which makes the process a contextual bandit rather than a
//! full MDP.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::HistoryClassStats;
use crate::bp::{downsample, make_state, BongardProblem, PairState};

/// Total ordered pairs per puzzle: 12 images squared.
pub const PAIR_COUNT: usize = 144;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("bad environment config: {0}")]
    BadConfig(String),
}

/// Environment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Steps per episode, at most 144.
    pub episode_length: usize,
    /// Discount factor in (0, 1].
    pub discount: f64,
    /// Images are downsampled to this square side before pairing.
    pub image_side: usize,
    /// Shuffle the pair order per episode (seeded); identity order otherwise.
    pub shuffle: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_length: PAIR_COUNT,
            discount: 0.99,
            image_side: 16,
            shuffle: true,
        }
    }
}

impl EnvConfig {
    fn validate(&self) -> Result<(), EnvError> {
        if self.episode_length == 0 || self.episode_length > PAIR_COUNT {
            return Err(EnvError::BadConfig(format!(
                "episode_length {} outside 1..={PAIR_COUNT}",
                self.episode_length
            )));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(EnvError::BadConfig(format!(
                "discount {} outside (0, 1]",
                self.discount
            )));
        }
        if self.image_side == 0 {
            return Err(EnvError::BadConfig("image_side must be positive".into()));
        }
        Ok(())
    }
}

/// Binary action: assign the pair to the same group or to different groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Same,
    Different,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Same => 0,
            Action::Different => 1,
        }
    }

    pub fn from_index(idx: usize) -> Self {
        match idx {
            0 => Action::Same,
            1 => Action::Different,
            _ => panic!("action index {idx} out of range"),
        }
    }
}

/// One ordered pair with its ground-truth group relation.
#[derive(Debug, Clone)]
pub struct LabeledPair {
    pub i: usize,
    pub j: usize,
    pub state: PairState,
    pub same_group: bool,
}

/// All 144 ordered pairs of a puzzle in row-major `(i, j)` order,
/// self-pairs included and labeled same-group.
pub fn compile_pairs(bp: &BongardProblem) -> Vec<LabeledPair> {
    let mut pairs = Vec::with_capacity(PAIR_COUNT);
    for i in 0..12 {
        for j in 0..12 {
            let state = make_state(bp.image(i), bp.image(j))
                .expect("puzzle images share dimensions");
            pairs.push(LabeledPair {
                i,
                j,
                state,
                same_group: (i < 6) == (j < 6),
            });
        }
    }
    pairs
}

/// Per-step record of what happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub pair_index: usize,
    pub action: Action,
    pub reward: u8,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Step {
    pub next: Option<PairState>,
    pub reward: u8,
    pub done: bool,
}

/// A running episode over one puzzle.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pairs: Vec<LabeledPair>,
    order: Vec<usize>,
    cursor: usize,
    episode_length: usize,
    records: Vec<StepRecord>,
    remaining_same: usize,
    remaining_diff: usize,
}

/// Start an episode: downsample, compile pairs, fix the pair order.
///
/// Returns the episode plus the first state. The order is a seeded
/// permutation of all 144 pairs (identity when `shuffle` is off); an episode
/// shorter than 144 steps walks a prefix of it.
pub fn reset(
    bp: &BongardProblem,
    config: &EnvConfig,
    seed: u64,
) -> Result<(EpisodeState, PairState), EnvError> {
    config.validate()?;
    let side = config.image_side;
    let mut small = Vec::with_capacity(12);
    for idx in 0..12 {
        let img = downsample(bp.image(idx), side, side)
            .map_err(|e| EnvError::BadConfig(format!("downsample to {side}: {e}")))?;
        small.push(img);
    }
    let mut pairs = Vec::with_capacity(PAIR_COUNT);
    for i in 0..12 {
        for j in 0..12 {
            let state = make_state(&small[i], &small[j]).expect("same side");
            pairs.push(LabeledPair {
                i,
                j,
                state,
                same_group: (i < 6) == (j < 6),
            });
        }
    }
    let mut order: Vec<usize> = (0..PAIR_COUNT).collect();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let first = pairs[order[0]].state.clone();
    Ok((
        EpisodeState {
            pairs,
            order,
            cursor: 0,
            episode_length: config.episode_length,
            records: Vec::with_capacity(config.episode_length),
            remaining_same: PAIR_COUNT / 2,
            remaining_diff: PAIR_COUNT / 2,
        },
        first,
    ))
}

impl EpisodeState {
    /// Consume the current pair with `action`; reward 1 iff the group
    /// assignment is correct.
    pub fn step(&mut self, action: Action) -> Result<Step, EnvError> {
        if self.cursor >= self.episode_length {
            return Err(EnvError::EpisodeFinished);
        }
        let pair_index = self.order[self.cursor];
        let pair = &self.pairs[pair_index];
        let correct = (action == Action::Same) == pair.same_group;
        let reward = u8::from(correct);
        if pair.same_group {
            self.remaining_same -= 1;
        } else {
            self.remaining_diff -= 1;
        }
        self.records.push(StepRecord {
            pair_index,
            action,
            reward,
        });
        self.cursor += 1;
        let done = self.cursor == self.episode_length;
        let next = if done {
            None
        } else {
            Some(self.pairs[self.order[self.cursor]].state.clone())
        };
        Ok(Step {
            next,
            reward,
            done,
        })
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn episode_length(&self) -> usize {
        self.episode_length
    }

    pub fn done(&self) -> bool {
        self.cursor >= self.episode_length
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Ground-truth label of the pair the next `step` will consume.
    pub fn peek_same_group(&self) -> Option<bool> {
        if self.done() {
            return None;
        }
        Some(self.pairs[self.order[self.cursor]].same_group)
    }

    /// Class counts over pairs not yet consumed, for the history-extended
    /// bounds.
    pub fn history_stats(&self) -> HistoryClassStats {
        HistoryClassStats {
            remaining_same: self.remaining_same,
            remaining_diff: self.remaining_diff,
        }
    }
}

/// Discounted return of a completed episode; `gamma = 1` gives the raw
/// reward total plotted by the report command.
pub fn episode_return(records: &[StepRecord], gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut weight = 1.0;
    for r in records {
        total += weight * f64::from(r.reward);
        weight *= gamma;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_bp, Concept, FactorPredicate, SynthConfig};
    use rand::Rng;

    fn test_bp(seed: u64) -> BongardProblem {
        let concept = Concept::single(FactorPredicate::Fill { filled: true });
        generate_bp(
            &concept,
            &SynthConfig {
                seed,
                ..SynthConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn compile_pairs_counts_and_labels() {
        let bp = test_bp(1);
        let pairs = compile_pairs(&bp);
        assert_eq!(pairs.len(), 144);
        let same = pairs.iter().filter(|p| p.same_group).count();
        assert_eq!(same, 72);
        assert_eq!(pairs.len() - same, 72);
        // Row-major order and label symmetry.
        for (k, pair) in pairs.iter().enumerate() {
            assert_eq!(pair.i, k / 12);
            assert_eq!(pair.j, k % 12);
            assert_eq!(pair.same_group, pairs[pair.j * 12 + pair.i].same_group);
        }
        // Self-pairs labeled same-group.
        for i in 0..12 {
            assert!(pairs[i * 12 + i].same_group);
        }
    }

    #[test]
    fn reset_is_deterministic_and_identity_without_shuffle() {
        let bp = test_bp(2);
        let config = EnvConfig::default();
        let (a, sa) = reset(&bp, &config, 77).unwrap();
        let (b, sb) = reset(&bp, &config, 77).unwrap();
        assert_eq!(a.order, b.order);
        assert_eq!(sa, sb);

        let plain = EnvConfig {
            shuffle: false,
            ..config
        };
        let (env, _) = reset(&bp, &plain, 0).unwrap();
        assert_eq!(env.order, (0..144).collect::<Vec<_>>());
    }

    #[test]
    fn step_rewards_follow_labels() {
        let bp = test_bp(3);
        let config = EnvConfig {
            shuffle: false,
            ..EnvConfig::default()
        };
        let (mut env, _) = reset(&bp, &config, 0).unwrap();
        // Pair 0 is (0,0): same group.
        let s = env.step(Action::Same).unwrap();
        assert_eq!(s.reward, 1);
        // Pair 1 is (0,1): same group; wrong action gets 0.
        let s = env.step(Action::Different).unwrap();
        assert_eq!(s.reward, 0);
        // Pair (0,6) at index 6 crosses groups.
        for _ in 2..6 {
            env.step(Action::Same).unwrap();
        }
        let s = env.step(Action::Different).unwrap();
        assert_eq!(s.reward, 1);
    }

    #[test]
    fn short_episode_terminates_and_rejects_extra_steps() {
        let bp = test_bp(4);
        let config = EnvConfig {
            episode_length: 20,
            ..EnvConfig::default()
        };
        let (mut env, _) = reset(&bp, &config, 5).unwrap();
        for t in 0..20 {
            let s = env.step(Action::Same).unwrap();
            assert_eq!(s.done, t == 19);
            assert_eq!(s.next.is_none(), t == 19);
        }
        assert!(matches!(
            env.step(Action::Same),
            Err(EnvError::EpisodeFinished)
        ));
        assert_eq!(env.records().len(), 20);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bp = test_bp(5);
        let base = EnvConfig::default();
        for config in [
            EnvConfig {
                episode_length: 0,
                ..base
            },
            EnvConfig {
                episode_length: 145,
                ..base
            },
            EnvConfig {
                discount: 0.0,
                ..base
            },
            EnvConfig {
                discount: 1.5,
                ..base
            },
            EnvConfig {
                image_side: 200,
                ..base
            },
        ] {
            assert!(reset(&bp, &config, 0).is_err());
        }
    }

    #[test]
    fn states_do_not_depend_on_actions() {
        let bp = test_bp(6);
        let config = EnvConfig::default();
        let (mut a, first_a) = reset(&bp, &config, 9).unwrap();
        let (mut b, first_b) = reset(&bp, &config, 9).unwrap();
        assert_eq!(first_a, first_b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        loop {
            let act_a = if rng.random_bool(0.5) {
                Action::Same
            } else {
                Action::Different
            };
            let sa = a.step(act_a).unwrap();
            let sb = b.step(Action::Different).unwrap();
            assert_eq!(sa.next, sb.next);
            if sa.done {
                break;
            }
        }
    }

    #[test]
    fn replaying_recorded_actions_reproduces_rewards() {
        let bp = test_bp(7);
        let config = EnvConfig::default();
        let (mut env, _) = reset(&bp, &config, 33).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        while !env.done() {
            let action = if rng.random_bool(0.5) {
                Action::Same
            } else {
                Action::Different
            };
            env.step(action).unwrap();
        }
        let recorded = env.records().to_vec();

        let (mut replay, _) = reset(&bp, &config, 33).unwrap();
        for rec in &recorded {
            let s = replay.step(rec.action).unwrap();
            assert_eq!(s.reward, rec.reward);
        }
        assert_eq!(replay.records(), recorded.as_slice());
    }

    #[test]
    fn history_stats_track_consumed_classes() {
        let bp = test_bp(8);
        let config = EnvConfig {
            shuffle: false,
            ..EnvConfig::default()
        };
        let (mut env, _) = reset(&bp, &config, 0).unwrap();
        let fresh = env.history_stats();
        assert_eq!(fresh.remaining_same, 72);
        assert_eq!(fresh.remaining_diff, 72);
        // First row of pairs: (0, 0..11) = 6 same, 6 different.
        for _ in 0..12 {
            env.step(Action::Same).unwrap();
        }
        let stats = env.history_stats();
        assert_eq!(stats.remaining_same, 66);
        assert_eq!(stats.remaining_diff, 66);
        assert_eq!(stats.remaining_same + stats.remaining_diff, 144 - env.cursor());
    }

    #[test]
    fn episode_return_examples() {
        let records = |rs: &[u8]| {
            rs.iter()
                .map(|&reward| StepRecord {
                    pair_index: 0,
                    action: Action::Same,
                    reward,
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(episode_return(&records(&[1; 144]), 1.0), 144.0);
        assert_eq!(episode_return(&records(&[0; 144]), 1.0), 0.0);
        assert!((episode_return(&records(&[1, 1, 0]), 0.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn random_policy_mean_return_is_half_episode_length() {
        let bp = test_bp(9);
        let config = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut total = 0.0;
        let episodes = 1000;
        for ep in 0..episodes {
            let (mut env, _) = reset(&bp, &config, ep).unwrap();
            while !env.done() {
                let action = if rng.random_bool(0.5) {
                    Action::Same
                } else {
                    Action::Different
                };
                env.step(action).unwrap();
            }
            total += episode_return(env.records(), 1.0);
        }
        let mean = total / f64::from(episodes as u32);
        assert!(
            (mean - 72.0).abs() <= 1.0,
            "random baseline mean {mean} outside 72 +- 1"
        );
    }
}
