//! Run configuration: every knob of the pool, recycling, augmentation,
//! teacher, and policy layers, plus the rng seed.
//!
//! Configs round-trip through a flat `key = json-value` text format whose
//! keys mirror the CLI flags one-to-one, which keeps experiment diffs
//! readable. The effective config is dumped verbatim into each run
//! directory.

use crate::lineage::AggregationMode;
use crate::pool::{PartitionLayout, PartitionScheme, PoolConfig, SamplerKind};

/// Which aggregator refreshes pool statistics; the softmax variant reads
/// its temperature from `softmax_temperature`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationChoice {
    Child,
    Path,
    PathSoftmax,
}

impl AggregationChoice {
    pub fn wire_name(&self) -> &'static str {
        match self {
            AggregationChoice::Child => "child",
            AggregationChoice::Path => "path",
            AggregationChoice::PathSoftmax => "path_softmax",
        }
    }
}
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Training steps T.
    pub steps: u64,
    /// Batch size B.
    pub batch: usize,
    /// Group size n (rollouts per query).
    pub group: usize,
    pub sampler: SamplerKind,
    pub aggregation: AggregationChoice,
    /// Temperature for the softmax aggregation variant.
    pub softmax_temperature: f64,
    pub clip_epsilon: f64,
    /// EMA coefficient for the pool-statistic update; 1 = plain group mean.
    pub ema_coeff: f64,
    /// Moving-average window for the training-reward series.
    pub ma_window: usize,
    /// Targets evaluated by the steps/compute-to-target summaries.
    pub targets: Vec<f64>,
    /// Response-length model: tokens accounted per rollout.
    pub tokens_per_rollout: u64,
    /// Modeled generation cost per rollout, in milliseconds (0 = off).
    pub rollout_cost_ms: f64,

    pub pool_capacity: usize,
    pub pool_alpha: f64,
    pub pool_mix_easy_fraction: f64,
    /// Number of heaps H; 2 is the dual layout.
    pub pool_heaps: usize,
    /// Anchored bins at the hard end for H >= 3 (0 = default policy).
    pub pool_anchored_low: usize,
    /// Anchored bins at the easy end for H >= 3 (0 = default policy).
    pub pool_anchored_high: usize,

    pub seeds_count: usize,
    pub seeds_difficulty_min: f64,
    pub seeds_difficulty_max: f64,

    pub policy_ability: f64,
    pub policy_slope: f64,
    pub policy_invalid_rate: f64,
    pub policy_ability_gain: f64,

    pub augment_enabled: bool,
    /// Candidates proposed per sampled parent.
    pub augment_per_parent: usize,
    pub augment_every_steps: u64,
    pub augment_malformed_fraction: f64,
    pub augment_diff_min: f64,
    pub augment_diff_max: f64,

    pub teacher_latency_steps: u64,
    pub teacher_accept_rate: f64,
    pub teacher_answer_error_rate: f64,

    /// Archive size that triggers recycling (0 = 2 * batch).
    pub recycle_size_threshold: usize,
    /// Records reinserted per recycle event (0 = batch).
    pub recycle_reinsert_batch: usize,

    pub log_groups: bool,
    pub log_pipeline: bool,
    /// Run the full lifecycle audit every N steps (0 = off).
    pub audit_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            steps: 1000,
            batch: 512,
            group: 16,
            sampler: SamplerKind::Boundary,
            aggregation: AggregationChoice::Path,
            softmax_temperature: 1.0,
            clip_epsilon: 0.2,
            ema_coeff: 1.0,
            ma_window: 32,
            targets: vec![0.25, 0.5, 0.75, 0.9],
            tokens_per_rollout: 512,
            rollout_cost_ms: 0.0,
            pool_capacity: 100_000,
            pool_alpha: 0.5,
            pool_mix_easy_fraction: 0.0,
            pool_heaps: 2,
            pool_anchored_low: 0,
            pool_anchored_high: 0,
            seeds_count: 14_000,
            seeds_difficulty_min: 0.2,
            seeds_difficulty_max: 4.2,
            policy_ability: 1.0,
            policy_slope: 3.0,
            policy_invalid_rate: 0.05,
            policy_ability_gain: 0.006,
            augment_enabled: true,
            augment_per_parent: 2,
            augment_every_steps: 1,
            augment_malformed_fraction: 0.05,
            augment_diff_min: 0.75,
            augment_diff_max: 1.33,
            teacher_latency_steps: 4,
            teacher_accept_rate: 0.9,
            teacher_answer_error_rate: 0.0,
            recycle_size_threshold: 0,
            recycle_reinsert_batch: 0,
            log_groups: true,
            log_pipeline: true,
            audit_every: 0,
        }
    }
}

impl RunConfig {
    /// CI-scale reference scenario used by the paired comparisons: a
    /// 10k-capacity pool over a 2k seed corpus, batch 64, groups of 8, run
    /// to the policy's convergence horizon (about 2,000 steps).
    pub fn ci_reference(seed: u64) -> Self {
        RunConfig {
            seed,
            steps: 2000,
            batch: 64,
            group: 8,
            pool_capacity: 10_000,
            seeds_count: 2_000,
            log_groups: false,
            log_pipeline: false,
            ..RunConfig::default()
        }
    }

    /// The aggregation mode with its temperature resolved.
    pub fn aggregation_mode(&self) -> AggregationMode {
        match self.aggregation {
            AggregationChoice::Child => AggregationMode::Child,
            AggregationChoice::Path => AggregationMode::Path,
            AggregationChoice::PathSoftmax => AggregationMode::PathSoftmax {
                temperature: self.softmax_temperature,
            },
        }
    }

    pub fn effective_recycle_threshold(&self) -> usize {
        if self.recycle_size_threshold == 0 {
            2 * self.batch
        } else {
            self.recycle_size_threshold
        }
    }

    pub fn effective_reinsert_batch(&self) -> usize {
        if self.recycle_reinsert_batch == 0 {
            self.batch
        } else {
            self.recycle_reinsert_batch
        }
    }

    /// Resolve the partition layout for this config.
    pub fn layout(&self) -> Result<PartitionLayout, ConfigError> {
        if self.pool_heaps <= 2 {
            return Ok(PartitionLayout::dual());
        }
        if self.pool_anchored_low == 0 && self.pool_anchored_high == 0 {
            return PartitionLayout::anchored_default(self.pool_heaps)
                .map_err(|e| err("pool.heaps", e.to_string()));
        }
        PartitionLayout::from_scheme(&PartitionScheme::Anchored {
            bins: self.pool_heaps,
            anchored_low: self.pool_anchored_low.max(1),
            anchored_high: self.pool_anchored_high.max(1),
        })
        .map_err(|e| err("pool.anchored_low", e.to_string()))
    }

    pub fn pool_config(&self) -> Result<PoolConfig, ConfigError> {
        Ok(PoolConfig {
            capacity: self.pool_capacity,
            alpha: self.pool_alpha,
            mix_easy_fraction: self.pool_mix_easy_fraction,
            layout: self.layout()?,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps == 0 {
            return Err(err("steps", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(err("batch", "must be at least 1"));
        }
        if self.group < 2 {
            return Err(err("group", "group size must be at least 2"));
        }
        if self.pool_capacity == 0 {
            return Err(err("pool.capacity", "must be at least 1"));
        }
        if !(self.pool_alpha > 0.0 && self.pool_alpha < 1.0) {
            return Err(err(
                "pool.alpha",
                format!("must lie in (0, 1), got {}", self.pool_alpha),
            ));
        }
        if !(0.0..1.0).contains(&self.pool_mix_easy_fraction) {
            return Err(err(
                "pool.mix_easy_fraction",
                format!("must lie in [0, 1), got {}", self.pool_mix_easy_fraction),
            ));
        }
        if self.pool_heaps < 2 {
            return Err(err("pool.heaps", "need at least 2 heaps"));
        }
        if self.sampler == SamplerKind::Boundary && self.pool_heaps != 2 {
            return Err(err("sampler", "boundary sampling requires pool.heaps = 2"));
        }
        if self.seeds_count == 0 {
            return Err(err("seeds.count", "must be at least 1"));
        }
        if self.seeds_difficulty_min >= self.seeds_difficulty_max {
            return Err(err(
                "seeds.difficulty_min",
                "must be below seeds.difficulty_max",
            ));
        }
        if self.seeds_difficulty_min <= 0.0 {
            return Err(err(
                "seeds.difficulty_min",
                "latent difficulties must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.policy_invalid_rate) {
            return Err(err("policy.invalid_rate", "must lie in [0, 1]"));
        }
        if self.policy_ability_gain < 0.0 {
            return Err(err("policy.ability_gain", "must be non-negative"));
        }
        if self.policy_slope <= 0.0 {
            return Err(err("policy.slope", "must be positive"));
        }
        if self.clip_epsilon <= 0.0 {
            return Err(err("clip_epsilon", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ema_coeff) {
            return Err(err("ema_coeff", "must lie in [0, 1]"));
        }
        if self.softmax_temperature <= 0.0 {
            return Err(err("softmax_temperature", "must be positive"));
        }
        if self.ma_window == 0 {
            return Err(err("ma_window", "must be at least 1"));
        }
        if self.augment_per_parent == 0 && self.augment_enabled {
            return Err(err(
                "augment.per_parent",
                "must be at least 1 when augmentation is on",
            ));
        }
        if self.augment_every_steps == 0 && self.augment_enabled {
            return Err(err(
                "augment.every_steps",
                "must be at least 1 when augmentation is on",
            ));
        }
        if !(0.0..=1.0).contains(&self.augment_malformed_fraction) {
            return Err(err("augment.malformed_fraction", "must lie in [0, 1]"));
        }
        if self.augment_diff_min > self.augment_diff_max {
            return Err(err("augment.diff_min", "must not exceed augment.diff_max"));
        }
        if self.augment_diff_min < 0.75 || self.augment_diff_max > 1.33 {
            return Err(err(
                "augment.diff_min",
                "diff range must stay within [0.75, 1.33]",
            ));
        }
        if !(0.0..=1.0).contains(&self.teacher_accept_rate) {
            return Err(err("teacher.accept_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.teacher_answer_error_rate) {
            return Err(err("teacher.answer_error_rate", "must lie in [0, 1]"));
        }
        if self.rollout_cost_ms < 0.0 {
            return Err(err("rollout.cost_ms", "must be non-negative"));
        }
        self.layout()?;
        Ok(())
    }

    /// Set one dotted key from a JSON value.
    pub fn apply_key(&mut self, key: &str, value: &Value) -> Result<(), ConfigError> {
        fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
            v.as_u64()
                .ok_or_else(|| err(key, format!("expected unsigned integer, got {v}")))
        }
        fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
            Ok(as_u64(key, v)? as usize)
        }
        fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
            v.as_f64()
                .ok_or_else(|| err(key, format!("expected number, got {v}")))
        }
        fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
            v.as_bool()
                .ok_or_else(|| err(key, format!("expected boolean, got {v}")))
        }
        fn as_str<'v>(key: &str, v: &'v Value) -> Result<&'v str, ConfigError> {
            v.as_str()
                .ok_or_else(|| err(key, format!("expected string, got {v}")))
        }

        match key {
            "seed" => self.seed = as_u64(key, value)?,
            "steps" => self.steps = as_u64(key, value)?,
            "batch" => self.batch = as_usize(key, value)?,
            "group" => self.group = as_usize(key, value)?,
            "sampler" => {
                self.sampler = SamplerKind::from_wire(as_str(key, value)?).ok_or_else(|| {
                    err(
                        key,
                        "expected one of uniform|prioritized|boundary|multiheap",
                    )
                })?;
            }
            "aggregation" => {
                self.aggregation = match as_str(key, value)? {
                    "child" => AggregationChoice::Child,
                    "path" => AggregationChoice::Path,
                    "path_softmax" => AggregationChoice::PathSoftmax,
                    other => {
                        return Err(err(key, format!("unknown aggregation {other:?}")));
                    }
                };
            }
            "softmax_temperature" => self.softmax_temperature = as_f64(key, value)?,
            "clip_epsilon" => self.clip_epsilon = as_f64(key, value)?,
            "ema_coeff" => self.ema_coeff = as_f64(key, value)?,
            "ma_window" => self.ma_window = as_usize(key, value)?,
            "targets" => {
                let arr = value
                    .as_array()
                    .ok_or_else(|| err(key, "expected an array of numbers"))?;
                let mut targets = Vec::with_capacity(arr.len());
                for v in arr {
                    targets.push(as_f64(key, v)?);
                }
                self.targets = targets;
            }
            "tokens_per_rollout" => self.tokens_per_rollout = as_u64(key, value)?,
            "rollout.cost_ms" => self.rollout_cost_ms = as_f64(key, value)?,
            "pool.capacity" => self.pool_capacity = as_usize(key, value)?,
            "pool.alpha" => self.pool_alpha = as_f64(key, value)?,
            "pool.mix_easy_fraction" => self.pool_mix_easy_fraction = as_f64(key, value)?,
            "pool.heaps" => self.pool_heaps = as_usize(key, value)?,
            "pool.anchored_low" => self.pool_anchored_low = as_usize(key, value)?,
            "pool.anchored_high" => self.pool_anchored_high = as_usize(key, value)?,
            "seeds.count" => self.seeds_count = as_usize(key, value)?,
            "seeds.difficulty_min" => self.seeds_difficulty_min = as_f64(key, value)?,
            "seeds.difficulty_max" => self.seeds_difficulty_max = as_f64(key, value)?,
            "policy.ability" => self.policy_ability = as_f64(key, value)?,
            "policy.slope" => self.policy_slope = as_f64(key, value)?,
            "policy.invalid_rate" => self.policy_invalid_rate = as_f64(key, value)?,
            "policy.ability_gain" => self.policy_ability_gain = as_f64(key, value)?,
            "augment.enabled" => self.augment_enabled = as_bool(key, value)?,
            "augment.per_parent" => self.augment_per_parent = as_usize(key, value)?,
            "augment.every_steps" => self.augment_every_steps = as_u64(key, value)?,
            "augment.malformed_fraction" => self.augment_malformed_fraction = as_f64(key, value)?,
            "augment.diff_min" => self.augment_diff_min = as_f64(key, value)?,
            "augment.diff_max" => self.augment_diff_max = as_f64(key, value)?,
            "teacher.latency_steps" => self.teacher_latency_steps = as_u64(key, value)?,
            "teacher.accept_rate" => self.teacher_accept_rate = as_f64(key, value)?,
            "teacher.answer_error_rate" => self.teacher_answer_error_rate = as_f64(key, value)?,
            "recycle.size_threshold" => self.recycle_size_threshold = as_usize(key, value)?,
            "recycle.reinsert_batch" => self.recycle_reinsert_batch = as_usize(key, value)?,
            "log.groups" => self.log_groups = as_bool(key, value)?,
            "log.pipeline" => self.log_pipeline = as_bool(key, value)?,
            "audit_every" => self.audit_every = as_u64(key, value)?,
            other => return Err(err(other, "unknown config key")),
        }
        Ok(())
    }

    /// All keys with their JSON values, in canonical order.
    pub fn dump_pairs(&self) -> Vec<(String, String)> {
        let pairs: Vec<(&str, Value)> = vec![
            ("seed", self.seed.into()),
            ("steps", self.steps.into()),
            ("batch", self.batch.into()),
            ("group", self.group.into()),
            ("sampler", self.sampler.wire_name().into()),
            ("aggregation", self.aggregation.wire_name().into()),
            ("softmax_temperature", self.softmax_temperature.into()),
            ("clip_epsilon", self.clip_epsilon.into()),
            ("ema_coeff", self.ema_coeff.into()),
            ("ma_window", self.ma_window.into()),
            ("targets", self.targets.clone().into()),
            ("tokens_per_rollout", self.tokens_per_rollout.into()),
            ("rollout.cost_ms", self.rollout_cost_ms.into()),
            ("pool.capacity", self.pool_capacity.into()),
            ("pool.alpha", self.pool_alpha.into()),
            ("pool.mix_easy_fraction", self.pool_mix_easy_fraction.into()),
            ("pool.heaps", self.pool_heaps.into()),
            ("pool.anchored_low", self.pool_anchored_low.into()),
            ("pool.anchored_high", self.pool_anchored_high.into()),
            ("seeds.count", self.seeds_count.into()),
            ("seeds.difficulty_min", self.seeds_difficulty_min.into()),
            ("seeds.difficulty_max", self.seeds_difficulty_max.into()),
            ("policy.ability", self.policy_ability.into()),
            ("policy.slope", self.policy_slope.into()),
            ("policy.invalid_rate", self.policy_invalid_rate.into()),
            ("policy.ability_gain", self.policy_ability_gain.into()),
            ("augment.enabled", self.augment_enabled.into()),
            ("augment.per_parent", self.augment_per_parent.into()),
            ("augment.every_steps", self.augment_every_steps.into()),
            (
                "augment.malformed_fraction",
                self.augment_malformed_fraction.into(),
            ),
            ("augment.diff_min", self.augment_diff_min.into()),
            ("augment.diff_max", self.augment_diff_max.into()),
            ("teacher.latency_steps", self.teacher_latency_steps.into()),
            ("teacher.accept_rate", self.teacher_accept_rate.into()),
            (
                "teacher.answer_error_rate",
                self.teacher_answer_error_rate.into(),
            ),
            ("recycle.size_threshold", self.recycle_size_threshold.into()),
            ("recycle.reinsert_batch", self.recycle_reinsert_batch.into()),
            ("log.groups", self.log_groups.into()),
            ("log.pipeline", self.log_pipeline.into()),
            ("audit_every", self.audit_every.into()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    /// Canonical flat text form: `key = json-value` lines.
    pub fn dump_flat(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.dump_pairs() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Parse the flat text form on top of the defaults.
    pub fn parse_flat(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        config.merge_flat(text)?;
        Ok(config)
    }

    /// Apply `key = json-value` lines to this config.
    pub fn merge_flat(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value_text) = line.split_once('=').ok_or_else(|| {
                err(
                    &format!("line {}", idx + 1),
                    format!("expected `key = value`, got {line:?}"),
                )
            })?;
            let key = key.trim();
            let value: Value = serde_json::from_str(value_text.trim()).map_err(|e| {
                err(
                    key,
                    format!("value {:?} is not valid JSON: {e}", value_text.trim()),
                )
            })?;
            self.apply_key(key, &value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::ci_reference(0).validate().unwrap();
    }

    #[test]
    fn flat_round_trip_covers_every_key() {
        let mut config = RunConfig::ci_reference(7);
        config.pool_heaps = 5;
        config.sampler = SamplerKind::MultiHeap;
        config.targets = vec![0.1, 0.9];
        let text = config.dump_flat();
        let parsed = RunConfig::parse_flat(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn invalid_alpha_names_the_field() {
        let mut config = RunConfig::default();
        config
            .apply_key("pool.alpha", &serde_json::json!(1.5))
            .unwrap();
        let e = config.validate().unwrap_err();
        assert_eq!(e.field, "pool.alpha");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut config = RunConfig::default();
        let e = config
            .apply_key("pool.capacityy", &serde_json::json!(10))
            .unwrap_err();
        assert_eq!(e.field, "pool.capacityy");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# a comment\n\nsteps = 5\nbatch = 4\ngroup = 2\n";
        let c = RunConfig::parse_flat(text).unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.batch, 4);
        assert_eq!(c.group, 2);
    }
}
