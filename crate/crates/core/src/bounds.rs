//! Causal bounds on interventional reward from confounded observational
//! data.
//!
//! For a two-armed bandit with binary reward, the joint distribution
//! `p_ij = P(X=i, Y=j)` collected under an unobserved confounder still pins
//! `E[Y | do(z)]` into an interval. This module estimates the joint from
//! pooled prior counts, computes the base intervals and their
//! history-extended refinement, and carries an independent oracle that
//! recovers the exact envelope by enumerating canonical response types.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default minimum pooled sample count before bounds are considered usable.
pub const DEFAULT_MIN_SAMPLES: u64 = 100;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("insufficient data: {total} samples, need at least {min}")]
    InsufficientData { total: u64, min: u64 },
    #[error("no pairs remain in the episode history domain")]
    EmptyHistoryDomain,
    #[error("crossed interval [{lower}, {upper}]")]
    CrossedInterval { lower: f64, upper: f64 },
    #[error("not a probability distribution: {0}")]
    InfeasibleDistribution(String),
}

/// Empirical counts over (action X, reward Y); first index is the action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl JointCounts {
    pub fn observe(&mut self, action: usize, reward: u8) {
        match (action, reward) {
            (0, 0) => self.n00 += 1,
            (0, 1) => self.n01 += 1,
            (1, 0) => self.n10 += 1,
            (1, 1) => self.n11 += 1,
            _ => panic!("action/reward outside {{0,1}}"),
        }
    }

    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn merge(&mut self, other: &JointCounts) {
        self.n00 += other.n00;
        self.n01 += other.n01;
        self.n10 += other.n10;
        self.n11 += other.n11;
    }
}

/// `p_ij = P(X=i, Y=j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl JointDistribution {
    pub fn new(p00: f64, p01: f64, p10: f64, p11: f64) -> Result<Self, BoundsError> {
        let p = Self { p00, p01, p10, p11 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        let cells = [self.p00, self.p01, self.p10, self.p11];
        for c in cells {
            if !(0.0..=1.0).contains(&c) || !c.is_finite() {
                return Err(BoundsError::InfeasibleDistribution(format!(
                    "cell {c} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = cells.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(BoundsError::InfeasibleDistribution(format!(
                "cells sum to {sum}"
            )));
        }
        Ok(())
    }
}

/// Plain ratio estimate of the joint, gated on a minimum sample count.
pub fn estimate_joint(
    counts: &JointCounts,
    min_samples: u64,
) -> Result<JointDistribution, BoundsError> {
    let total = counts.total();
    if total < min_samples {
        return Err(BoundsError::InsufficientData {
            total,
            min: min_samples,
        });
    }
    let n = total as f64;
    Ok(JointDistribution {
        p00: counts.n00 as f64 / n,
        p01: counts.n01 as f64 / n,
        p10: counts.n10 as f64 / n,
        p11: counts.n11 as f64 / n,
    })
}

/// A closed interval; `lower > upper` marks a crossed (empty) interval,
/// which is reported rather than repaired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn is_crossed(&self) -> bool {
        self.lower > self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Bounds on `E[Y | do(z)]` for both actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub do0: Interval,
    pub do1: Interval,
}

impl BoundPair {
    pub fn interval(&self, action: usize) -> Interval {
        match action {
            0 => self.do0,
            1 => self.do1,
            _ => panic!("action {action} out of range"),
        }
    }

    pub fn crossed(&self, action: usize) -> bool {
        self.interval(action).is_crossed()
    }
}

/// Base causal bounds from the observational joint:
/// `do(0)` in `[p01, p01 + p10 + p11]`, `do(1)` in `[p11, p11 + p00 + p01]`.
pub fn base_bounds(p: &JointDistribution) -> BoundPair {
    BoundPair {
        do0: Interval {
            lower: p.p01,
            upper: p.p01 + p.p10 + p.p11,
        },
        do1: Interval {
            lower: p.p11,
            upper: p.p11 + p.p00 + p.p01,
        },
    }
}

/// Class counts over pairs not yet consumed in the running episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryClassStats {
    pub remaining_same: usize,
    pub remaining_diff: usize,
}

impl HistoryClassStats {
    pub fn total(&self) -> usize {
        self.remaining_same + self.remaining_diff
    }
}

/// Probability that action `z` is the correct one for a uniformly drawn
/// remaining pair: `p(z=0 | H_t)` is the remaining same-group fraction.
pub fn history_prob(stats: &HistoryClassStats, action: usize) -> Result<f64, BoundsError> {
    let total = stats.total();
    if total == 0 {
        return Err(BoundsError::EmptyHistoryDomain);
    }
    let numer = match action {
        0 => stats.remaining_same,
        1 => stats.remaining_diff,
        _ => panic!("action {action} out of range"),
    };
    Ok(numer as f64 / total as f64)
}

/// History-extended bounds.
///
/// Written exactly as stated: the upper bound for `do(z)` takes the smaller
/// of the base upper bound and `p(z | H_t)`; the lower bound takes the
/// larger of the base lower bound and the *opposite* action's history
/// probability. `swap_history_in_lower` switches the lower bounds to the
/// matching action's probability instead, to probe the alternative reading.
/// Crossed intervals are returned as-is.
pub fn extended_bounds(
    p: &JointDistribution,
    h0: f64,
    h1: f64,
    swap_history_in_lower: bool,
) -> BoundPair {
    let base = base_bounds(p);
    let (low0_h, low1_h) = if swap_history_in_lower {
        (h0, h1)
    } else {
        (h1, h0)
    };
    BoundPair {
        do0: Interval {
            lower: base.do0.lower.max(low0_h),
            upper: base.do0.upper.min(h0),
        },
        do1: Interval {
            lower: base.do1.lower.max(low1_h),
            upper: base.do1.upper.min(h1),
        },
    }
}

/// Clamp a point estimate into a bound interval.
pub fn clamp_estimate(v: f64, interval: Interval) -> Result<f64, BoundsError> {
    if interval.is_crossed() {
        return Err(BoundsError::CrossedInterval {
            lower: interval.lower,
            upper: interval.upper,
        });
    }
    Ok(v.clamp(interval.lower, interval.upper))
}

/// Index pairs `(x, t)`: action value `x` produced by the confounder and
/// response type `t` of `Y` as a function of `X` (0: always 0, 1: identity,
/// 2: negation, 3: always 1).
fn response(t: usize, x: usize) -> usize {
    match t {
        0 => 0,
        1 => x,
        2 => 1 - x,
        3 => 1,
        _ => unreachable!(),
    }
}

/// Exact envelope of `E[Y | do(z)]` over every confounded model consistent
/// with the observational joint.
///
/// A binary confounded bandit is a mixture over 8 canonical cells: the
/// latent state fixes the observational action `x` and the response type of
/// `Y` given `X`. The observational constraints split the 8 cell masses into
/// four independent two-cell groups, so the feasible set is a product of
/// four segments and the envelope is attained on its 16 vertices.
pub fn lp_oracle_bounds(p: &JointDistribution) -> Result<BoundPair, BoundsError> {
    p.validate()?;
    // Groups of cells (x, t) sharing an observational constraint:
    //   x=0: { (0,0), (0,1) } carries p00,   { (0,2), (0,3) } carries p01
    //   x=1: { (1,0), (1,2) } carries p10,   { (1,1), (1,3) } carries p11
    let groups: [((usize, usize), (usize, usize), f64); 4] = [
        ((0, 0), (0, 1), p.p00),
        ((0, 2), (0, 3), p.p01),
        ((1, 0), (1, 2), p.p10),
        ((1, 1), (1, 3), p.p11),
    ];
    let mut best = BoundPair {
        do0: Interval {
            lower: f64::INFINITY,
            upper: f64::NEG_INFINITY,
        },
        do1: Interval {
            lower: f64::INFINITY,
            upper: f64::NEG_INFINITY,
        },
    };
    for choice in 0..16u32 {
        let mut e0 = 0.0;
        let mut e1 = 0.0;
        for (g, &(a, b, mass)) in groups.iter().enumerate() {
            let (_, t) = if choice >> g & 1 == 0 { a } else { b };
            e0 += mass * response(t, 0) as f64;
            e1 += mass * response(t, 1) as f64;
        }
        best.do0.lower = best.do0.lower.min(e0);
        best.do0.upper = best.do0.upper.max(e0);
        best.do1.lower = best.do1.lower.min(e1);
        best.do1.upper = best.do1.upper.max(e1);
    }
    Ok(best)
}

/// A concrete confounded model: a distribution over the 8 canonical cells.
#[derive(Debug, Clone)]
pub struct ResponseTypeScm {
    /// `q[x][t]`, mass of latent cell (action x, response type t).
    pub q: [[f64; 4]; 2],
}

impl ResponseTypeScm {
    /// Uniform draw from the 7-simplex over the 8 cells.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut raw = [[0.0; 4]; 2];
        let mut total = 0.0;
        for row in &mut raw {
            for cell in row.iter_mut() {
                // Exponential(1) via inverse CDF; normalized = Dirichlet(1).
                let u: f64 = rng.random::<f64>();
                let e = -(1.0 - u).ln();
                *cell = e;
                total += e;
            }
        }
        for row in &mut raw {
            for cell in row.iter_mut() {
                *cell /= total;
            }
        }
        Self { q: raw }
    }

    /// The joint an observer of this model records.
    pub fn observational_joint(&self) -> JointDistribution {
        let mut p = [[0.0; 2]; 2];
        for x in 0..2 {
            for t in 0..4 {
                p[x][response(t, x)] += self.q[x][t];
            }
        }
        JointDistribution {
            p00: p[0][0],
            p01: p[0][1],
            p10: p[1][0],
            p11: p[1][1],
        }
    }

    /// Ground-truth `E[Y | do(z)]`.
    pub fn interventional_mean(&self, z: usize) -> f64 {
        let mut e = 0.0;
        for x in 0..2 {
            for t in 0..4 {
                e += self.q[x][t] * response(t, z) as f64;
            }
        }
        e
    }
}

/// Uniform draw from the 3-simplex of joint distributions.
pub fn sample_joint<R: Rng>(rng: &mut R) -> JointDistribution {
    let mut cells = [0.0f64; 4];
    let mut total = 0.0;
    for c in &mut cells {
        let u: f64 = rng.random::<f64>();
        let e = -(1.0 - u).ln();
        *c = e;
        total += e;
    }
    for c in &mut cells {
        *c /= total;
    }
    JointDistribution {
        p00: cells[0],
        p01: cells[1],
        p10: cells[2],
        p11: cells[3],
    }
}

/// Monte-Carlo validity and tightness report for the base bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub trials: u64,
    pub containment_violations: u64,
    pub max_endpoint_gap: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.containment_violations == 0 && self.max_endpoint_gap <= 1e-9
    }
}

/// For `trials` random confounded models, check the true interventional
/// means sit inside the base bounds of their observational joints; for as
/// many random joints, compare the base endpoints against the
/// vertex-enumeration oracle.
pub fn verify_bounds<R: Rng>(trials: u64, rng: &mut R) -> VerifyReport {
    let mut violations = 0;
    let mut max_gap: f64 = 0.0;
    for _ in 0..trials {
        let scm = ResponseTypeScm::sample(rng);
        let joint = scm.observational_joint();
        let bounds = base_bounds(&joint);
        for z in 0..2 {
            let truth = scm.interventional_mean(z);
            let iv = bounds.interval(z);
            // Containment up to accumulated float rounding.
            if truth < iv.lower - 1e-12 || truth > iv.upper + 1e-12 {
                violations += 1;
            }
        }

        let p = sample_joint(rng);
        let base = base_bounds(&p);
        let oracle = lp_oracle_bounds(&p).expect("sampled joint is valid");
        for z in 0..2 {
            let b = base.interval(z);
            let o = oracle.interval(z);
            max_gap = max_gap
                .max((b.lower - o.lower).abs())
                .max((b.upper - o.upper).abs());
        }
    }
    VerifyReport {
        trials,
        containment_violations: violations,
        max_endpoint_gap: max_gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform() -> JointDistribution {
        JointDistribution::new(0.25, 0.25, 0.25, 0.25).unwrap()
    }

    #[test]
    fn estimate_joint_ratios() {
        let counts = JointCounts {
            n00: 25,
            n01: 25,
            n10: 25,
            n11: 25,
        };
        let p = estimate_joint(&counts, 100).unwrap();
        assert_eq!(p, uniform());

        let skewed = JointCounts {
            n00: 0,
            n01: 100,
            n10: 0,
            n11: 0,
        };
        let p = estimate_joint(&skewed, 100).unwrap();
        assert_eq!(p.p01, 1.0);
        assert_eq!(p.p00 + p.p10 + p.p11, 0.0);
    }

    #[test]
    fn estimate_joint_gates_on_sample_count() {
        let mut counts = JointCounts::default();
        for _ in 0..25 {
            counts.observe(0, 1);
            counts.observe(1, 0);
        }
        assert_eq!(counts.total(), 50);
        assert!(matches!(
            estimate_joint(&counts, DEFAULT_MIN_SAMPLES),
            Err(BoundsError::InsufficientData { total: 50, min: 100 })
        ));
    }

    #[test]
    fn base_bounds_frozen_examples() {
        let b = base_bounds(&uniform());
        assert_eq!(b.do0, Interval { lower: 0.25, upper: 0.75 });
        assert_eq!(b.do1, Interval { lower: 0.25, upper: 0.75 });

        let degenerate = JointDistribution::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let b = base_bounds(&degenerate);
        assert_eq!(b.do0, Interval { lower: 1.0, upper: 1.0 });
    }

    #[test]
    fn width_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = sample_joint(&mut rng);
            let b = base_bounds(&p);
            let px1 = p.p10 + p.p11;
            let px0 = p.p00 + p.p01;
            assert!((b.do0.width() - px1).abs() <= 1e-12);
            assert!((b.do1.width() - px0).abs() <= 1e-12);
        }
    }

    #[test]
    fn observational_mean_sits_inside_base_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = sample_joint(&mut rng);
            let b = base_bounds(&p);
            let px0 = p.p00 + p.p01;
            let px1 = p.p10 + p.p11;
            if px0 > 1e-9 {
                let m = p.p01 / px0;
                assert!(b.do0.contains(m.clamp(0.0, 1.0)));
            }
            if px1 > 1e-9 {
                let m = p.p11 / px1;
                assert!(b.do1.contains(m.clamp(0.0, 1.0)));
            }
        }
    }

    #[test]
    fn oracle_matches_base_bounds() {
        let o = lp_oracle_bounds(&uniform()).unwrap();
        let b = base_bounds(&uniform());
        assert!((o.do0.lower - b.do0.lower).abs() < 1e-15);
        assert!((o.do0.upper - b.do0.upper).abs() < 1e-15);

        let degenerate = JointDistribution::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let o = lp_oracle_bounds(&degenerate).unwrap();
        assert_eq!(o.do0, Interval { lower: 1.0, upper: 1.0 });

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let p = sample_joint(&mut rng);
            let base = base_bounds(&p);
            let oracle = lp_oracle_bounds(&p).unwrap();
            for z in 0..2 {
                let (b, o) = (base.interval(z), oracle.interval(z));
                assert!((b.lower - o.lower).abs() <= 1e-9);
                assert!((b.upper - o.upper).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn oracle_rejects_non_distributions() {
        let bad = JointDistribution {
            p00: 0.5,
            p01: 0.5,
            p10: 0.5,
            p11: -0.5,
        };
        assert!(matches!(
            lp_oracle_bounds(&bad),
            Err(BoundsError::InfeasibleDistribution(_))
        ));
    }

    #[test]
    fn monte_carlo_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let report = verify_bounds(10_000, &mut rng);
        assert_eq!(report.containment_violations, 0);
        assert!(report.max_endpoint_gap <= 1e-9);
        assert!(report.passed());
    }

    #[test]
    fn history_prob_counting() {
        let fresh = HistoryClassStats {
            remaining_same: 72,
            remaining_diff: 72,
        };
        assert_eq!(history_prob(&fresh, 0).unwrap(), 0.5);

        // Ten same-group pairs consumed.
        let later = HistoryClassStats {
            remaining_same: 62,
            remaining_diff: 72,
        };
        assert!((history_prob(&later, 0).unwrap() - 62.0 / 134.0).abs() < 1e-15);

        let empty_class = HistoryClassStats {
            remaining_same: 0,
            remaining_diff: 10,
        };
        assert_eq!(history_prob(&empty_class, 0).unwrap(), 0.0);

        let exhausted = HistoryClassStats {
            remaining_same: 0,
            remaining_diff: 0,
        };
        assert!(matches!(
            history_prob(&exhausted, 0),
            Err(BoundsError::EmptyHistoryDomain)
        ));
    }

    #[test]
    fn extended_bounds_frozen_examples() {
        let e = extended_bounds(&uniform(), 0.6, 0.4, false);
        assert!((e.do0.upper - 0.6).abs() < 1e-15);
        assert!((e.do0.lower - 0.4).abs() < 1e-15);

        // Both history probabilities at 1: lower bounds dominate and cross.
        let e = extended_bounds(&uniform(), 1.0, 1.0, false);
        assert_eq!(e.do0.lower, 1.0);
        assert!(e.do0.upper < 1.0);
        assert!(e.crossed(0));
        assert!(e.crossed(1));
    }

    #[test]
    fn extended_bounds_swap_flag() {
        let p = uniform();
        let literal = extended_bounds(&p, 0.9, 0.1, false);
        assert_eq!(literal.do0.lower, 0.25_f64.max(0.1));
        assert_eq!(literal.do1.lower, 0.25_f64.max(0.9));
        let swapped = extended_bounds(&p, 0.9, 0.1, true);
        assert_eq!(swapped.do0.lower, 0.25_f64.max(0.9));
        assert_eq!(swapped.do1.lower, 0.25_f64.max(0.1));
    }

    #[test]
    fn extended_nests_inside_base_when_not_crossed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let p = sample_joint(&mut rng);
            let h0: f64 = rng.random();
            let h1: f64 = rng.random();
            let base = base_bounds(&p);
            for swap in [false, true] {
                let ext = extended_bounds(&p, h0, h1, swap);
                for z in 0..2 {
                    if !ext.crossed(z) {
                        let (e, b) = (ext.interval(z), base.interval(z));
                        assert!(e.lower >= b.lower - 1e-15);
                        assert!(e.upper <= b.upper + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn clamp_estimate_behaviour() {
        let iv = Interval {
            lower: 0.25,
            upper: 0.75,
        };
        assert_eq!(clamp_estimate(0.9, iv).unwrap(), 0.75);
        assert_eq!(clamp_estimate(0.5, iv).unwrap(), 0.5);
        assert_eq!(clamp_estimate(0.1, iv).unwrap(), 0.25);
        let crossed = Interval {
            lower: 0.8,
            upper: 0.2,
        };
        assert!(matches!(
            clamp_estimate(0.5, crossed),
            Err(BoundsError::CrossedInterval { .. })
        ));
    }
}
