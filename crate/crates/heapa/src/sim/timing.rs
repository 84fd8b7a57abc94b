//! Per-stage wall-clock instrumentation for training steps.
//!
//! The rollout stage carries a modeled duration (a constant cost per rollout
//! standing in for generation time) on top of the measured simulation time;
//! all other stages are measured. Timings are the one non-deterministic
//! output stream and live outside the reproducibility contract.

use serde::Serialize;

/// Per-stage durations for one step, in microseconds.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StepTiming {
    pub step: u64,
    pub sampling_us: u64,
    /// Measured simulation time plus the modeled generation cost.
    pub rollout_us: u64,
    pub reward_us: u64,
    pub advantage_us: u64,
    pub update_us: u64,
    pub augment_gen_us: u64,
    pub pool_maintenance_us: u64,
    /// Measured wall time of the whole step plus the modeled rollout cost.
    pub step_total_us: u64,
}

impl StepTiming {
    pub fn stage_sum(&self) -> u64 {
        self.sampling_us
            + self.rollout_us
            + self.reward_us
            + self.advantage_us
            + self.update_us
            + self.augment_gen_us
            + self.pool_maintenance_us
    }

    /// Fraction of the step attributed to pool sampling.
    pub fn sampling_share(&self) -> f64 {
        self.sampling_us as f64 / self.step_total_us.max(1) as f64
    }

    /// Fraction of the step attributed to the query-lifecycle machinery:
    /// sampling, pool maintenance, and augmentation bookkeeping. The teacher
    /// is off the critical path and contributes nothing here.
    pub fn lifecycle_share(&self) -> f64 {
        (self.sampling_us + self.pool_maintenance_us + self.augment_gen_us) as f64
            / self.step_total_us.max(1) as f64
    }
}
