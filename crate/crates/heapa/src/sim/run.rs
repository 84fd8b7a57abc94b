//! The full training loop over the synthetic environment, step for step:
//! drain verified candidates into the cold queue, recycle refreshed archive
//! batches, sample, roll out groups, update statistics and the policy,
//! archive trained records, and propose new augmentations for asynchronous
//! verification.
//!
//! Everything except wall-clock timings is deterministic given the config
//! seed: two runs with the same config produce byte-identical logs.

use crate::grouprl::{clipped_term, pool_statistic_update, GroupError, GroupLogLine, QuerySource};
use crate::lineage::LineageGraph;
use crate::pool::{PoolError, PromptPool, SamplerKind};
use crate::record::{QueryRecord, RecordId, RecordState};
use crate::recycle::{reinsert_batched, should_recycle, Archive};
use crate::sim::config::{ConfigError, RunConfig};
use crate::sim::item::{gen_seed_item, latent_difficulty_of_answer, synth_augment_texts};
use crate::sim::policy::SyntheticPolicy;
use crate::sim::teacher::{TeacherQueue, TicketStatus};
use crate::sim::timing::StepTiming;
use crate::textproto::{parse_augment_output, passes_dataset_filters};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pool error: {0}")]
    Pool(#[from] PoolError),
    #[error("group error: {0}")]
    Group(#[from] GroupError),
    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: u64, message: String },
    #[error("record {id} is malformed: {message}")]
    BadRecord { id: RecordId, message: String },
}

/// Deterministic per-step summary (one steps.jsonl line).
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub pool_size: usize,
    pub cold_size: usize,
    pub scored_size: usize,
    pub archive_size: usize,
    pub pending_tickets: usize,
    pub batch: usize,
    pub mean_reward: Option<f64>,
    pub ma_reward: f64,
    pub mean_abs_advantage: f64,
    pub clip_objective: f64,
    pub ability: f64,
    pub seed_groups: usize,
    pub augmented_groups: usize,
    pub mean_reward_seed: Option<f64>,
    pub mean_reward_augmented: Option<f64>,
    pub inserted_cold: usize,
    pub reinserted: usize,
    pub candidates_submitted: usize,
    pub candidates_rejected: usize,
    pub dropped: usize,
    pub cumulative_rollout_tokens: u64,
    pub rollout_modeled_us: u64,
}

/// Ticket transition log entry (one pipeline.jsonl line). Candidates that
/// fail the tag parse never receive an id, so `child` is optional.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineEvent {
    pub step: u64,
    pub event: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub child: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Aggregate over every refresh pass in a run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RefreshAggregate {
    pub passes: u64,
    pub updated: u64,
    pub cycle_detected: u64,
    pub dangling: u64,
    pub max_depth: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetSteps {
    pub target: f64,
    pub step: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetCompute {
    pub target: f64,
    pub rollout_tokens: Option<u64>,
}

/// Final run summary (summary.json).
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub format_version: String,
    pub seed: u64,
    pub steps: u64,
    pub final_mean_reward: f64,
    pub final_ability: f64,
    pub steps_to_targets: Vec<TargetSteps>,
    pub compute_to_targets: Vec<TargetCompute>,
    pub refresh_reports: RefreshAggregate,
    pub total_groups: u64,
    pub seed_groups: u64,
    pub augmented_groups: u64,
    pub inserted_cold: u64,
    pub total_rollout_tokens: u64,
}

/// Everything a run produced. Timings are measured and therefore outside
/// the determinism contract; all other streams are reproducible.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub groups: Vec<GroupLogLine>,
    pub pipeline: Vec<PipelineEvent>,
    pub timings: Vec<StepTiming>,
    pub summary: RunSummary,
}

pub const RUN_FORMAT_VERSION: &str = "heapa-run/1";

impl RunLog {
    /// First step index (0-based, counted from the first measurement) at
    /// which the moving-average training reward reaches `target`.
    pub fn steps_to_target(&self, target: f64) -> Option<u64> {
        self.steps
            .iter()
            .position(|s| s.ma_reward >= target)
            .map(|i| i as u64)
    }

    /// Simulated rollout tokens spent through the step that first reaches
    /// `target`.
    pub fn compute_to_target(&self, target: f64) -> Option<u64> {
        self.steps
            .iter()
            .find(|s| s.ma_reward >= target)
            .map(|s| s.cumulative_rollout_tokens)
    }

    pub fn final_ma_reward(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.ma_reward)
    }
}

/// Reward-band histogram from repeated sampling of a frozen pool.
#[derive(Debug, Clone, Serialize)]
pub struct BandHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl BandHistogram {
    pub fn mass(&self, band: usize) -> f64 {
        self.counts[band] as f64 / self.total.max(1) as f64
    }

    /// Index of the band containing `value` (last band is closed above).
    pub fn band_of(&self, value: f64) -> usize {
        let k = self.edges.partition_point(|e| *e <= value);
        k.saturating_sub(1).min(self.edges.len().saturating_sub(2))
    }
}

/// Repeatedly sample batches from copies of a frozen pool snapshot and
/// histogram the sampled queries' expected rewards under a frozen policy.
pub fn frozen_landscape_eval<R: Rng>(
    pool: &PromptPool,
    reference_policy: &SyntheticPolicy,
    sampler: SamplerKind,
    batch: usize,
    trials: usize,
    edges: &[f64],
    rng: &mut R,
) -> Result<BandHistogram, SimError> {
    assert!(edges.len() >= 2, "need at least one band");
    let mut hist = BandHistogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        total: 0,
    };
    for _ in 0..trials {
        let mut copy = pool.clone();
        for rec in copy.sample_batch(batch, sampler, rng)? {
            let b = latent_difficulty_of_answer(&rec.answer).ok_or(SimError::BadRecord {
                id: rec.id,
                message: "answer does not encode a latent difficulty".into(),
            })?;
            let reward = reference_policy.expected_reward(b);
            let band = hist.band_of(reward);
            hist.counts[band] += 1;
            hist.total += 1;
        }
    }
    Ok(hist)
}

/// Build a frozen, fully scored pool whose statistics equal the reference
/// policy's expected rewards; the substrate for sampling-mass comparisons.
pub fn build_frozen_pool(
    config: &RunConfig,
    reference_policy: &SyntheticPolicy,
) -> Result<PromptPool, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pool = PromptPool::new(config.pool_config()?)?;
    for id in 0..config.seeds_count as u64 {
        let item = gen_seed_item(
            config.seeds_difficulty_min,
            config.seeds_difficulty_max,
            &mut rng,
        );
        let mut record = QueryRecord::seed(RecordId(id), item.prompt, item.answer);
        record.pool_stat = Some(
            reference_policy
                .expected_reward(item.latent_difficulty)
                .clamp(-1.0, 1.0),
        );
        pool.insert_scored(record)?;
    }
    Ok(pool)
}

struct GroupOutcome {
    record: QueryRecord,
    latent: f64,
    rewards: Vec<i8>,
    advantages: Vec<f64>,
    group_mean: f64,
    source: QuerySource,
}

/// The Algorithm-1 state machine. Use [`run_training`] for the one-shot
/// path; drive `step()` manually for instrumented scenarios.
pub struct TrainingRun {
    pub cfg: RunConfig,
    rng: ChaCha8Rng,
    pool: PromptPool,
    archive: Archive,
    graph: LineageGraph,
    policy: SyntheticPolicy,
    teacher: TeacherQueue,
    /// Allocated candidates awaiting a verdict.
    pending: BTreeMap<RecordId, QueryRecord>,
    /// Most recent statistic per materialized record; refresh input.
    stats: BTreeMap<RecordId, f64>,
    /// Latent difficulty per materialized record.
    latents: BTreeMap<RecordId, f64>,
    next_id: u64,
    step: u64,
    ma: VecDeque<f64>,
    ma_value: f64,
    cumulative_tokens: u64,
    steps_log: Vec<StepRecord>,
    groups_log: Vec<GroupLogLine>,
    pipeline_log: Vec<PipelineEvent>,
    timings_log: Vec<StepTiming>,
    refresh_agg: RefreshAggregate,
    totals: Totals,
}

#[derive(Default)]
struct Totals {
    groups: u64,
    seed_groups: u64,
    augmented_groups: u64,
    inserted_cold: u64,
}

impl TrainingRun {
    /// Initialize with the whole seed corpus in the cold queue, subsampled
    /// uniformly (seeded) if it exceeds the pool capacity.
    pub fn new(config: RunConfig) -> Result<Self, SimError> {
        Self::build(config, false)
    }

    /// Initialize with seeds already scored at their frozen expected
    /// rewards, for profiling scenarios that need a warm pool.
    pub fn new_warmed(config: RunConfig) -> Result<Self, SimError> {
        Self::build(config, true)
    }

    fn build(config: RunConfig, warmed: bool) -> Result<Self, SimError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut pool = PromptPool::new(config.pool_config()?)?;
        let policy = SyntheticPolicy::new(
            config.policy_ability,
            config.policy_slope,
            config.policy_invalid_rate,
            config.policy_ability_gain,
        );
        let teacher = TeacherQueue::new(
            config.teacher_latency_steps,
            config.teacher_accept_rate,
            config.teacher_answer_error_rate,
        );
        let mut graph = LineageGraph::new();
        let mut stats = BTreeMap::new();
        let mut latents = BTreeMap::new();

        let mut items: Vec<_> = (0..config.seeds_count)
            .map(|_| {
                gen_seed_item(
                    config.seeds_difficulty_min,
                    config.seeds_difficulty_max,
                    &mut rng,
                )
            })
            .collect();
        if items.len() > config.pool_capacity {
            for i in 0..config.pool_capacity {
                let j = rng.random_range(i..items.len());
                items.swap(i, j);
            }
            items.truncate(config.pool_capacity);
        }
        let mut next_id = 0u64;
        for item in items {
            let id = RecordId(next_id);
            next_id += 1;
            latents.insert(id, item.latent_difficulty);
            graph.register_node(id);
            let mut record = QueryRecord::seed(id, item.prompt, item.answer);
            if warmed {
                let stat = policy
                    .expected_reward(item.latent_difficulty)
                    .clamp(-1.0, 1.0);
                record.pool_stat = Some(stat);
                stats.insert(id, stat);
                pool.insert_scored(record)?;
            } else {
                pool.insert_cold(record)?;
            }
        }

        let archive = Archive::new(
            config.effective_recycle_threshold(),
            config.effective_reinsert_batch(),
        );
        Ok(TrainingRun {
            cfg: config,
            rng,
            pool,
            archive,
            graph,
            policy,
            teacher,
            pending: BTreeMap::new(),
            stats,
            latents,
            next_id,
            step: 0,
            ma: VecDeque::new(),
            ma_value: 0.0,
            cumulative_tokens: 0,
            steps_log: Vec::new(),
            groups_log: Vec::new(),
            pipeline_log: Vec::new(),
            timings_log: Vec::new(),
            refresh_agg: RefreshAggregate::default(),
            totals: Totals::default(),
        })
    }

    pub fn pool(&self) -> &PromptPool {
        &self.pool
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn graph(&self) -> &LineageGraph {
        &self.graph
    }

    pub fn policy(&self) -> &SyntheticPolicy {
        &self.policy
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    fn invariant(&self, step: u64, message: impl Into<String>) -> SimError {
        SimError::Invariant {
            step,
            message: message.into(),
        }
    }

    /// Execute one training step.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.step += 1;
        let t = self.step;
        let wall_start = Instant::now();
        let mut timing = StepTiming {
            step: t,
            ..StepTiming::default()
        };

        // Drain teacher-annotated results and insert verified candidates
        // into the cold queue.
        let mut inserted_cold = 0usize;
        let mut dropped = 0usize;
        let mut rejected = 0usize;
        let clock = Instant::now();
        for drained in self.teacher.drain(t) {
            let child = drained.ticket.child_id;
            let mut record = self.pending.remove(&child).ok_or_else(|| {
                self.invariant(t, format!("ticket {child} has no pending record"))
            })?;
            match drained.ticket.status {
                TicketStatus::Verified(ref answer) => {
                    self.log_pipeline(t, "verified", Some(child), record.parent_id, None);
                    if !passes_dataset_filters(&record.prompt, answer) {
                        dropped += 1;
                        self.log_pipeline(
                            t,
                            "dropped",
                            Some(child),
                            record.parent_id,
                            Some("dataset_filters".into()),
                        );
                        continue;
                    }
                    if self.pool.is_full() {
                        dropped += 1;
                        self.log_pipeline(
                            t,
                            "dropped",
                            Some(child),
                            record.parent_id,
                            Some("capacity".into()),
                        );
                        continue;
                    }
                    record.answer = answer.clone();
                    let latent =
                        latent_difficulty_of_answer(answer).ok_or(SimError::BadRecord {
                            id: child,
                            message: "verified answer has no latent difficulty".into(),
                        })?;
                    self.latents.insert(child, latent);
                    self.graph.register_node(child);
                    self.pool.insert_cold(record)?;
                    inserted_cold += 1;
                    self.totals.inserted_cold += 1;
                    self.log_pipeline(t, "inserted", Some(child), None, None);
                }
                TicketStatus::Rejected(reason) => {
                    rejected += 1;
                    self.log_pipeline(
                        t,
                        "rejected",
                        Some(child),
                        record.parent_id,
                        Some(reason.into()),
                    );
                }
                TicketStatus::Pending => {
                    return Err(self.invariant(t, "drained ticket still pending"));
                }
            }
        }

        // Recycle: refresh archived statistics over the lineage graph and
        // reinsert a bounded batch.
        let mut reinserted = 0usize;
        if should_recycle(&self.pool, &self.archive, self.cfg.batch) && !self.archive.is_empty() {
            // Refresh the records eligible for this reinsertion batch: the
            // front of the archive FIFO. Refreshing the whole archive would
            // make per-step cost track the archive's size, which in turn
            // tracks pipeline depth.
            let targets: BTreeSet<RecordId> = self
                .archive
                .ids()
                .take(self.archive.reinsert_batch_size)
                .collect();
            let (closure_scores, report) =
                self.graph
                    .refresh_targets(&self.stats, self.cfg.aggregation_mode(), &targets);
            self.refresh_agg.passes += 1;
            self.refresh_agg.updated += report.updated as u64;
            self.refresh_agg.cycle_detected += report.cycle_detected as u64;
            self.refresh_agg.dangling += report.dangling as u64;
            self.refresh_agg.max_depth = self.refresh_agg.max_depth.max(report.max_depth);
            let refreshed: BTreeMap<RecordId, f64> = targets
                .iter()
                .filter_map(|id| closure_scores.get(id).map(|&s| (*id, s)))
                .collect();
            reinserted = reinsert_batched(&mut self.pool, &mut self.archive, &refreshed);
            // Only records that actually re-entered the pool take their
            // refreshed statistic; capacity-stopped leftovers are refreshed
            // again when their own batch pops.
            for (&id, &stat) in &refreshed {
                if self.pool.get(id).is_some() {
                    self.stats.insert(id, stat.clamp(-1.0, 1.0));
                }
            }
        }
        timing.pool_maintenance_us += clock.elapsed().as_micros() as u64;

        // The augmentation gate reads the pool size here, before sampling
        // removes the batch: gating on the post-archive dip would keep the
        // gate open forever once the pool saturates.
        let pool_at_gate = self.pool.len();

        // Sample the batch, cold-first under the frontier samplers.
        let b_eff = self.cfg.batch.min(self.pool.len());
        let cold_before: Vec<RecordId> = self.pool.cold_ids().take(b_eff).collect();
        let clock = Instant::now();
        let batch = if b_eff == 0 {
            Vec::new()
        } else {
            self.pool
                .sample_batch(b_eff, self.cfg.sampler, &mut self.rng)?
        };
        timing.sampling_us += clock.elapsed().as_micros() as u64;

        if matches!(
            self.cfg.sampler,
            SamplerKind::Boundary | SamplerKind::MultiHeap
        ) {
            let expect = cold_before.len();
            for (i, rec) in batch.iter().take(expect).enumerate() {
                if rec.id != cold_before[i] {
                    return Err(self.invariant(
                        t,
                        format!(
                            "cold-first violated at slot {i}: {} != {}",
                            rec.id, cold_before[i]
                        ),
                    ));
                }
            }
        }

        // Rollout groups.
        let clock = Instant::now();
        let mut outcomes: Vec<GroupOutcome> = Vec::with_capacity(batch.len());
        for record in batch {
            let latent = *self.latents.get(&record.id).ok_or(SimError::BadRecord {
                id: record.id,
                message: "no latent difficulty tracked".into(),
            })?;
            let group =
                self.policy
                    .simulate_group(record.id, latent, self.cfg.group, &mut self.rng)?;
            let source = if record.parent_id.is_none() {
                QuerySource::Seed
            } else {
                QuerySource::Augmented
            };
            outcomes.push(GroupOutcome {
                record,
                latent,
                rewards: group.rewards,
                advantages: group.advantages,
                group_mean: group.group_mean,
                source,
            });
        }
        timing.rollout_us += clock.elapsed().as_micros() as u64;
        let modeled_us =
            (self.cfg.rollout_cost_ms * 1000.0 * (outcomes.len() * self.cfg.group) as f64) as u64;
        timing.rollout_us += modeled_us;

        // Verify group arithmetic (reward stage covers bookkeeping).
        let clock = Instant::now();
        let mut reward_sum = 0.0;
        let mut source_sums = [(0.0, 0usize), (0.0, 0usize)]; // seed, augmented
        for outcome in &outcomes {
            let advantage_total: f64 = outcome.advantages.iter().sum();
            if advantage_total.abs() > 1e-12 {
                return Err(self.invariant(
                    t,
                    format!(
                        "advantages sum to {advantage_total} for {}",
                        outcome.record.id
                    ),
                ));
            }
            reward_sum += outcome.group_mean;
            let slot = if outcome.source == QuerySource::Seed {
                0
            } else {
                1
            };
            source_sums[slot].0 += outcome.group_mean;
            source_sums[slot].1 += 1;
        }
        timing.reward_us += clock.elapsed().as_micros() as u64;

        // Advantage statistics drive the policy update.
        let clock = Instant::now();
        let mut abs_sum = 0.0;
        let mut n_rollouts = 0usize;
        for outcome in &outcomes {
            for a in &outcome.advantages {
                abs_sum += a.abs();
                n_rollouts += 1;
            }
        }
        let mean_abs_advantage = if n_rollouts > 0 {
            abs_sum / n_rollouts as f64
        } else {
            0.0
        };
        timing.advantage_us += clock.elapsed().as_micros() as u64;

        // Update: pool statistics, policy ability, and the clipped
        // surrogate evaluated against the pre-update snapshot.
        let clock = Instant::now();
        let policy_old = self.policy.clone();
        self.policy.absorb(mean_abs_advantage);
        let mut clip_sum = 0.0;
        for outcome in &mut outcomes {
            let record = &mut outcome.record;
            let new_stat =
                pool_statistic_update(record.pool_stat, outcome.group_mean, self.cfg.ema_coeff);
            record.pool_stat = Some(new_stat);
            record.last_group_mean = Some(outcome.group_mean);
            record.times_trained += 1;
            self.stats.insert(record.id, new_stat);
            for (j, &reward) in outcome.rewards.iter().enumerate() {
                let p_new = self.policy.outcome_likelihood(outcome.latent, reward);
                let p_old = policy_old.outcome_likelihood(outcome.latent, reward);
                if p_new > 0.0 && p_old > 0.0 {
                    let term =
                        clipped_term(p_new, p_old, outcome.advantages[j], self.cfg.clip_epsilon)?;
                    clip_sum += term.term_value;
                }
            }
        }
        let clip_objective = if n_rollouts > 0 {
            clip_sum / n_rollouts as f64
        } else {
            0.0
        };
        timing.update_us += clock.elapsed().as_micros() as u64;

        // Group logs.
        if self.cfg.log_groups {
            for outcome in &outcomes {
                self.groups_log.push(GroupLogLine {
                    step: t,
                    query_id: outcome.record.id,
                    source: outcome.source,
                    rewards: outcome.rewards.clone(),
                    baseline: outcome.group_mean,
                    advantages: outcome.advantages.clone(),
                });
            }
        }
        self.totals.groups += outcomes.len() as u64;
        self.totals.seed_groups += source_sums[0].1 as u64;
        self.totals.augmented_groups += source_sums[1].1 as u64;

        // Augment before the trained records disappear into the archive:
        // parents are this step's batch.
        let clock = Instant::now();
        let mut submitted = 0usize;
        let augment_on = self.cfg.augment_enabled
            && t.is_multiple_of(self.cfg.augment_every_steps)
            && pool_at_gate < self.pool.capacity();
        if augment_on {
            for outcome in &outcomes {
                let texts = synth_augment_texts(
                    &outcome.record.prompt,
                    &outcome.record.answer,
                    self.cfg.augment_per_parent,
                    self.cfg.augment_diff_min,
                    self.cfg.augment_diff_max,
                    self.cfg.augment_malformed_fraction,
                    &mut self.rng,
                );
                for (text, _) in texts {
                    match parse_augment_output(&text) {
                        Err(reason) => {
                            rejected += 1;
                            self.log_pipeline(
                                t,
                                "rejected",
                                None,
                                Some(outcome.record.id),
                                Some(format!("parse:{}", serde_json::to_string(&reason).unwrap())),
                            );
                        }
                        Ok(parsed) => {
                            let child_id = RecordId(self.next_id);
                            self.next_id += 1;
                            self.graph
                                .add_edge(outcome.record.id, child_id, parsed.diff)
                                .map_err(|e| self.invariant(t, e.to_string()))?;
                            let mut record = QueryRecord::augmented(
                                child_id,
                                parsed.new_problem.clone(),
                                String::new(),
                                parsed.diff,
                                outcome.record.id,
                            );
                            record.state = RecordState::PendingVerification;
                            self.pending.insert(child_id, record);
                            self.teacher.submit(
                                child_id,
                                outcome.record.id,
                                parsed.new_problem,
                                parsed.diff,
                                t,
                                &mut self.rng,
                            );
                            submitted += 1;
                            self.log_pipeline(
                                t,
                                "submitted",
                                Some(child_id),
                                Some(outcome.record.id),
                                None,
                            );
                        }
                    }
                }
            }
        }
        timing.augment_gen_us += clock.elapsed().as_micros() as u64;

        // Move trained records to the archive.
        let clock = Instant::now();
        let n_groups = outcomes.len();
        for outcome in outcomes {
            self.archive
                .archive_record(outcome.record)
                .map_err(|e| self.invariant(t, e.to_string()))?;
        }
        timing.pool_maintenance_us += clock.elapsed().as_micros() as u64;

        // Step accounting.
        let mean_reward = if n_groups > 0 {
            Some(reward_sum / n_groups as f64)
        } else {
            None
        };
        if let Some(r) = mean_reward {
            self.ma.push_back(r);
            if self.ma.len() > self.cfg.ma_window {
                self.ma.pop_front();
            }
            self.ma_value = self.ma.iter().sum::<f64>() / self.ma.len() as f64;
        }
        self.cumulative_tokens += (n_groups * self.cfg.group) as u64 * self.cfg.tokens_per_rollout;

        if self.cfg.audit_every > 0 && t.is_multiple_of(self.cfg.audit_every) {
            self.audit().map_err(|m| self.invariant(t, m))?;
        }
        if self.pool.len() > self.pool.capacity() {
            return Err(self.invariant(t, "pool exceeded capacity"));
        }

        let wall_us = wall_start.elapsed().as_micros() as u64;
        timing.step_total_us = wall_us + modeled_us;
        let mean_of = |slot: usize| {
            let (sum, n): (f64, usize) = source_sums[slot];
            if n > 0 {
                Some(sum / n as f64)
            } else {
                None
            }
        };
        self.steps_log.push(StepRecord {
            step: t,
            pool_size: self.pool.len(),
            cold_size: self.pool.cold_len(),
            scored_size: self.pool.scored_len(),
            archive_size: self.archive.len(),
            pending_tickets: self.teacher.pending_len(),
            batch: b_eff,
            mean_reward,
            ma_reward: self.ma_value,
            mean_abs_advantage,
            clip_objective,
            ability: self.policy.ability,
            seed_groups: source_sums[0].1,
            augmented_groups: source_sums[1].1,
            mean_reward_seed: mean_of(0),
            mean_reward_augmented: mean_of(1),
            inserted_cold,
            reinserted,
            candidates_submitted: submitted,
            candidates_rejected: rejected,
            dropped,
            cumulative_rollout_tokens: self.cumulative_tokens,
            rollout_modeled_us: modeled_us,
        });
        self.timings_log.push(timing);
        Ok(())
    }

    fn log_pipeline(
        &mut self,
        step: u64,
        event: &'static str,
        child: Option<RecordId>,
        parent: Option<RecordId>,
        detail: Option<String>,
    ) {
        if !self.cfg.log_pipeline {
            return;
        }
        self.pipeline_log.push(PipelineEvent {
            step,
            event,
            child: child.map(|c| c.0),
            parent: parent.map(|p| p.0),
            detail,
        });
    }

    /// Full lifecycle audit: every record is in exactly one place and every
    /// container agrees with the record states.
    pub fn audit(&self) -> Result<(), String> {
        self.pool.check_consistency()?;
        let mut seen: BTreeSet<RecordId> = BTreeSet::new();
        for rec in self.pool.iter_records() {
            seen.insert(rec.id);
        }
        for rec in self.archive.iter() {
            if rec.state != RecordState::Archived {
                return Err(format!("archive holds non-archived record {}", rec.id));
            }
            if rec.pool_stat.is_none() {
                return Err(format!("archived record {} lacks a statistic", rec.id));
            }
            if !seen.insert(rec.id) {
                return Err(format!("record {} in pool and archive", rec.id));
            }
        }
        for (id, rec) in &self.pending {
            if rec.state != RecordState::PendingVerification {
                return Err(format!("pending record {id} has state {:?}", rec.state));
            }
            if !seen.insert(*id) {
                return Err(format!("record {id} pending and active"));
            }
        }
        for id in self.teacher.pending_ids() {
            if !self.pending.contains_key(&id) {
                return Err(format!("ticket {id} has no pending record"));
            }
        }
        Ok(())
    }

    /// Run the configured number of steps and consume the run into its log.
    pub fn run_to_end(mut self) -> Result<RunLog, SimError> {
        for _ in 0..self.cfg.steps {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Finish early with whatever has been recorded so far.
    pub fn finish(self) -> RunLog {
        let steps_to_targets = self
            .cfg
            .targets
            .iter()
            .map(|&target| TargetSteps {
                target,
                step: self
                    .steps_log
                    .iter()
                    .position(|s| s.ma_reward >= target)
                    .map(|i| i as u64),
            })
            .collect();
        let compute_to_targets = self
            .cfg
            .targets
            .iter()
            .map(|&target| TargetCompute {
                target,
                rollout_tokens: self
                    .steps_log
                    .iter()
                    .find(|s| s.ma_reward >= target)
                    .map(|s| s.cumulative_rollout_tokens),
            })
            .collect();
        let summary = RunSummary {
            format_version: RUN_FORMAT_VERSION.to_string(),
            seed: self.cfg.seed,
            steps: self.step,
            final_mean_reward: self.ma_value,
            final_ability: self.policy.ability,
            steps_to_targets,
            compute_to_targets,
            refresh_reports: self.refresh_agg,
            total_groups: self.totals.groups,
            seed_groups: self.totals.seed_groups,
            augmented_groups: self.totals.augmented_groups,
            inserted_cold: self.totals.inserted_cold,
            total_rollout_tokens: self.cumulative_tokens,
        };
        RunLog {
            steps: self.steps_log,
            groups: self.groups_log,
            pipeline: self.pipeline_log,
            timings: self.timings_log,
            summary,
        }
    }
}

/// Execute a full training run from a config.
pub fn run_training(config: &RunConfig) -> Result<RunLog, SimError> {
    TrainingRun::new(config.clone())?.run_to_end()
}
