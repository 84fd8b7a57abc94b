//! Group-based RLVR arithmetic: within-prompt baselines and advantages,
//! importance ratios with the clipped surrogate evaluated as a scalar, and
//! the per-record pool-statistic update.
//!
//! Nothing here touches a network; the surrogate is a diagnostic value, never
//! a differentiated loss.

use crate::record::RecordId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    #[error("reward {0} outside {{-1, 0, 1}}")]
    BadReward(i8),
    #[error("a rollout group needs at least 2 rollouts, got {0}")]
    TooFewRollouts(usize),
    #[error("degenerate likelihood: p_new={p_new}, p_old={p_old}")]
    DegenerateLikelihood { p_new: f64, p_old: f64 },
}

/// n simulated rollouts for one query: verifier rewards, the within-prompt
/// baseline, and zero-sum advantages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutGroup {
    pub query_id: RecordId,
    pub rewards: Vec<i8>,
    pub baseline: f64,
    pub advantages: Vec<f64>,
    /// Equals the baseline; stored under the name the sampler consumes.
    pub group_mean: f64,
}

/// One summand of the clipped surrogate objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerm {
    pub ratio: f64,
    pub clipped_ratio: f64,
    pub advantage: f64,
    pub term_value: f64,
    pub epsilon: f64,
}

/// Whether a group came from a seed query or a verified augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    Seed,
    Augmented,
}

/// One line of the per-group JSONL log.
#[derive(Debug, Clone, Serialize)]
pub struct GroupLogLine {
    pub step: u64,
    pub query_id: RecordId,
    pub source: QuerySource,
    pub rewards: Vec<i8>,
    pub baseline: f64,
    pub advantages: Vec<f64>,
}

/// Build a rollout group from discrete verifier rewards: the baseline is the
/// group mean and each advantage is the reward minus the baseline.
pub fn make_group(query_id: RecordId, rewards: Vec<i8>) -> Result<RolloutGroup, GroupError> {
    if rewards.len() < 2 {
        return Err(GroupError::TooFewRollouts(rewards.len()));
    }
    for &r in &rewards {
        if !(-1..=1).contains(&r) {
            return Err(GroupError::BadReward(r));
        }
    }
    let n = rewards.len() as f64;
    let baseline = rewards.iter().map(|&r| r as f64).sum::<f64>() / n;
    let advantages = rewards.iter().map(|&r| r as f64 - baseline).collect();
    Ok(RolloutGroup {
        query_id,
        rewards,
        baseline,
        advantages,
        group_mean: baseline,
    })
}

/// One clipped-surrogate summand: `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`.
pub fn clipped_term(
    p_new: f64,
    p_old: f64,
    advantage: f64,
    epsilon: f64,
) -> Result<ObjectiveTerm, GroupError> {
    if !p_old.is_finite() || !p_new.is_finite() || p_old <= 0.0 || p_new <= 0.0 {
        return Err(GroupError::DegenerateLikelihood { p_new, p_old });
    }
    debug_assert!(epsilon > 0.0);
    let ratio = p_new / p_old;
    let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    let term_value = (ratio * advantage).min(clipped_ratio * advantage);
    Ok(ObjectiveTerm {
        ratio,
        clipped_ratio,
        advantage,
        term_value,
        epsilon,
    })
}

/// Update a record's pool statistic from its latest group mean. With no
/// prior statistic or `ema_coeff == 1` the statistic is the plain group
/// mean; otherwise it is an exponential moving average.
pub fn pool_statistic_update(prev: Option<f64>, group_mean: f64, ema_coeff: f64) -> f64 {
    debug_assert!((-1.0..=1.0).contains(&group_mean));
    debug_assert!((0.0..=1.0).contains(&ema_coeff));
    match prev {
        None => group_mean,
        Some(_) if ema_coeff >= 1.0 => group_mean,
        Some(p) => ema_coeff * group_mean + (1.0 - ema_coeff) * p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qid() -> RecordId {
        RecordId(7)
    }

    #[test]
    fn saturated_group_has_zero_advantages() {
        let g = make_group(qid(), vec![1, 1, 1, 1]).unwrap();
        assert_eq!(g.baseline, 1.0);
        assert_eq!(g.advantages, vec![0.0; 4]);
    }

    #[test]
    fn mixed_group_advantages() {
        let g = make_group(qid(), vec![1, 0, 0, 1]).unwrap();
        assert_eq!(g.baseline, 0.5);
        assert_eq!(g.advantages, vec![0.5, -0.5, -0.5, 0.5]);

        let g = make_group(qid(), vec![-1, 1]).unwrap();
        assert_eq!(g.baseline, 0.0);
        assert_eq!(g.advantages, vec![-1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_rewards_and_tiny_groups() {
        assert_eq!(make_group(qid(), vec![1, 2]), Err(GroupError::BadReward(2)));
        assert_eq!(
            make_group(qid(), vec![1]),
            Err(GroupError::TooFewRollouts(1))
        );
    }

    #[test]
    fn clipped_term_examples() {
        // On-policy: ratio 1, term equals the advantage.
        let t = clipped_term(0.3, 0.3, -0.25, 0.2).unwrap();
        assert_eq!(t.ratio, 1.0);
        assert_eq!(t.term_value, -0.25);

        let t = clipped_term(1.5, 1.0, 1.0, 0.2).unwrap();
        assert!((t.term_value - 1.2).abs() < 1e-15);

        let t = clipped_term(0.5, 1.0, -1.0, 0.2).unwrap();
        assert!((t.term_value - (-0.8)).abs() < 1e-15);

        assert!(matches!(
            clipped_term(0.5, 0.0, 1.0, 0.2),
            Err(GroupError::DegenerateLikelihood { .. })
        ));
    }

    #[test]
    fn group_log_line_wire_shape() {
        let g = make_group(qid(), vec![1, 0]).unwrap();
        let line = GroupLogLine {
            step: 3,
            query_id: g.query_id,
            source: QuerySource::Augmented,
            rewards: g.rewards,
            baseline: g.baseline,
            advantages: g.advantages,
        };
        let json = serde_json::to_string(&line).unwrap();
        assert_eq!(
            json,
            "{\"step\":3,\"query_id\":7,\"source\":\"augmented\",\"rewards\":[1,0],\
             \"baseline\":0.5,\"advantages\":[0.5,-0.5]}"
        );
    }

    #[test]
    fn pool_statistic_update_examples() {
        assert_eq!(pool_statistic_update(None, 0.25, 0.5), 0.25);
        assert_eq!(pool_statistic_update(Some(0.0), 1.0, 0.5), 0.5);
        assert_eq!(pool_statistic_update(Some(-0.7), 0.25, 1.0), 0.25);
    }

    proptest! {
        #[test]
        fn advantages_sum_to_zero(rewards in proptest::collection::vec(-1i8..=1, 2..64)) {
            let g = make_group(qid(), rewards).unwrap();
            let total: f64 = g.advantages.iter().sum();
            prop_assert!(total.abs() < 1e-12);
            prop_assert_eq!(g.group_mean, g.baseline);
        }

        #[test]
        fn all_equal_rewards_degenerate(r in -1i8..=1, n in 2usize..32) {
            let g = make_group(qid(), vec![r; n]).unwrap();
            prop_assert!(g.advantages.iter().all(|&a| a == 0.0));
        }

        #[test]
        fn clip_inactive_inside_the_band(
            ratio in 0.8f64..1.2,
            adv in -1.0f64..1.0,
        ) {
            let t = clipped_term(ratio, 1.0, adv, 0.2).unwrap();
            prop_assert!((t.term_value - ratio * adv).abs() < 1e-12);
        }

        #[test]
        fn term_is_pessimistic(
            p_new in 0.01f64..2.0,
            p_old in 0.01f64..2.0,
            adv in -1.0f64..1.0,
            eps in 0.05f64..0.5,
        ) {
            let t = clipped_term(p_new, p_old, adv, eps).unwrap();
            if adv >= 0.0 {
                prop_assert!(t.term_value <= t.ratio * adv + 1e-12);
            } else {
                prop_assert!(t.term_value <= t.clipped_ratio * adv + 1e-12);
            }
        }

        #[test]
        fn statistic_stays_bounded(
            means in proptest::collection::vec(-1.0f64..=1.0, 1..50),
            ema in 0.0f64..=1.0,
        ) {
            let mut stat: Option<f64> = None;
            for m in means {
                let next = pool_statistic_update(stat, m, ema);
                prop_assert!((-1.0..=1.0).contains(&next));
                stat = Some(next);
            }
        }
    }
}
