//! Item-response surrogate for the trained policy.
//!
//! Solve probability is a logistic function of ability minus latent
//! difficulty; invalid rollouts occur at a flat rate. Ability improves in
//! proportion to the mean absolute advantage absorbed per step, so saturated
//! groups (all-correct or all-wrong) teach nothing. That makes the central
//! sampling claim testable: batches with mixed outcomes move the policy,
//! batches at the extremes do not.

use crate::grouprl::{make_group, GroupError, RolloutGroup};
use crate::record::RecordId;
use rand::{Rng, RngExt};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPolicy {
    pub ability: f64,
    /// Logistic slope `k`.
    pub slope: f64,
    /// Probability that a rollout is invalid (reward -1).
    pub invalid_rate: f64,
    /// Ability gained per unit of absorbed mean |advantage|.
    pub ability_gain: f64,
}

impl SyntheticPolicy {
    pub fn new(ability: f64, slope: f64, invalid_rate: f64, ability_gain: f64) -> Self {
        SyntheticPolicy {
            ability,
            slope,
            invalid_rate,
            ability_gain,
        }
    }

    /// P(correct | valid rollout) for an item of latent difficulty `b`.
    pub fn solve_prob(&self, latent_difficulty: f64) -> f64 {
        logistic(self.slope * (self.ability - latent_difficulty))
    }

    /// Expected verifier reward for an item:
    /// `(1 - invalid) * p - invalid` over the {-1, 0, 1} outcomes.
    pub fn expected_reward(&self, latent_difficulty: f64) -> f64 {
        let p = self.solve_prob(latent_difficulty);
        (1.0 - self.invalid_rate) * p - self.invalid_rate
    }

    /// Likelihood of one observed outcome under this policy state.
    pub fn outcome_likelihood(&self, latent_difficulty: f64, reward: i8) -> f64 {
        let p = self.solve_prob(latent_difficulty);
        match reward {
            -1 => self.invalid_rate,
            1 => (1.0 - self.invalid_rate) * p,
            _ => (1.0 - self.invalid_rate) * (1.0 - p),
        }
    }

    /// Sample one group of `n` rollouts for a query.
    pub fn simulate_group<R: Rng>(
        &self,
        query_id: RecordId,
        latent_difficulty: f64,
        n: usize,
        rng: &mut R,
    ) -> Result<RolloutGroup, GroupError> {
        let p = self.solve_prob(latent_difficulty);
        let correct_band = self.invalid_rate + (1.0 - self.invalid_rate) * p;
        let rewards = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if u < self.invalid_rate {
                    -1
                } else if u < correct_band {
                    1
                } else {
                    0
                }
            })
            .collect();
        make_group(query_id, rewards)
    }

    /// Absorb one step's advantage signal.
    pub fn absorb(&mut self, mean_abs_advantage: f64) {
        debug_assert!(mean_abs_advantage >= 0.0);
        self.ability += self.ability_gain * mean_abs_advantage;
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
