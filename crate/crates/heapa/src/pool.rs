//! Bounded dual/multi-heap prompt pool with cold-queue priority and
//! frontier-focused boundary sampling.
//!
//! Unscored records wait in a FIFO cold queue and are always sampled first.
//! Scored records live in ordered partitions: with two heaps the split is
//! maintained so the low partition holds the ceil(alpha * S) hardest items
//! (ties to the smaller id), and batches are drawn from a candidate band
//! around the boundary. With more heaps the reward axis is cut by a static
//! [`PartitionLayout`] and candidates come from the gaps between adjacent
//! bins, visited round-robin.
//!
//! Capacity is enforced by rejecting inserts, never by eviction. All
//! mutations happen on one logical control thread; clone the pool to sample
//! from snapshots elsewhere.

use crate::record::{QueryRecord, RecordId, RecordState};
use rand::{Rng, RngExt};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Width of each anchored bin in the declarative multi-heap scheme.
pub const ANCHOR_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("pool is at capacity")]
    CapacityExceeded,
    #[error("record {0} already present")]
    DuplicateId(RecordId),
    #[error("record {0} has a defined pool statistic but must be unscored")]
    StatisticDefined(RecordId),
    #[error("record {0} has no pool statistic but must be scored")]
    MissingStatistic(RecordId),
    #[error("record {id} has pool statistic {stat} outside [-1, 1]")]
    StatOutOfRange { id: RecordId, stat: f64 },
    #[error("record {0} is not in the cold queue")]
    NotCold(RecordId),
    #[error("record {0} is not in the pool")]
    UnknownRecord(RecordId),
    #[error("need {need} samplable records, pool has {have}")]
    InsufficientItems { need: usize, have: usize },
    #[error("operation requires a dual-heap layout, pool has {heaps} heaps")]
    LayoutMismatch { heaps: usize },
    #[error("invalid pool configuration: {0}")]
    InvalidConfig(String),
}

/// Total order on statistics for heap keys. Statistics are validated finite
/// in [-1, 1] before they reach a bin; `+ 0.0` folds -0.0 into +0.0 so the
/// two compare equal.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StatKey(f64);

impl StatKey {
    fn new(stat: f64) -> Self {
        StatKey(stat + 0.0)
    }
}

impl Eq for StatKey {}

impl Ord for StatKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for StatKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Declarative description of how the [-1, 1] statistic axis is cut into
/// bins for a multi-heap pool.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionScheme {
    /// Explicit strictly increasing interior edges in (-1, 1); two or more
    /// edges (three or more bins).
    Explicit(Vec<f64>),
    /// `anchored_low` narrow bins at the -1 end and `anchored_high` at the
    /// +1 end (each [`ANCHOR_BIN_WIDTH`] wide), remaining bins equal-width
    /// in between.
    Anchored {
        bins: usize,
        anchored_low: usize,
        anchored_high: usize,
    },
}

/// Resolved partition layout. An empty edge list is the dual-heap layout,
/// where the low/high boundary is managed by the alpha split rather than a
/// static edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionLayout {
    edges: Vec<f64>,
}

impl PartitionLayout {
    /// The default two-heap layout with an alpha-managed boundary.
    pub fn dual() -> Self {
        PartitionLayout { edges: Vec::new() }
    }

    pub fn from_scheme(scheme: &PartitionScheme) -> Result<Self, PoolError> {
        let edges = match scheme {
            PartitionScheme::Explicit(edges) => {
                if edges.len() < 2 {
                    return Err(PoolError::InvalidConfig(
                        "explicit layouts need at least 2 edges; use the dual layout for 2 heaps"
                            .into(),
                    ));
                }
                edges.clone()
            }
            PartitionScheme::Anchored {
                bins,
                anchored_low,
                anchored_high,
            } => {
                if *bins < 3 {
                    return Ok(PartitionLayout::dual());
                }
                let interior = bins
                    .checked_sub(anchored_low + anchored_high)
                    .filter(|&m| m >= 1)
                    .ok_or_else(|| {
                        PoolError::InvalidConfig("anchored bins exceed the bin count".into())
                    })?;
                let lo_end = -1.0 + *anchored_low as f64 * ANCHOR_BIN_WIDTH;
                let hi_start = 1.0 - *anchored_high as f64 * ANCHOR_BIN_WIDTH;
                let mut edges = Vec::with_capacity(bins - 1);
                for k in 1..=*anchored_low {
                    edges.push(-1.0 + k as f64 * ANCHOR_BIN_WIDTH);
                }
                let width = (hi_start - lo_end) / interior as f64;
                for k in 1..interior {
                    edges.push(lo_end + k as f64 * width);
                }
                for k in (1..=*anchored_high).rev() {
                    edges.push(1.0 - k as f64 * ANCHOR_BIN_WIDTH);
                }
                edges
            }
        };
        for pair in edges.windows(2) {
            if pair[0] >= pair[1] {
                return Err(PoolError::InvalidConfig(format!(
                    "edges not strictly increasing: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if edges.iter().any(|e| !(-1.0 < *e && *e < 1.0)) {
            return Err(PoolError::InvalidConfig("edges must lie in (-1, 1)".into()));
        }
        Ok(PartitionLayout { edges })
    }

    /// A layout with the default anchoring policy for `heaps` bins:
    /// a third of the bins anchored at the hard end, a tenth (at least one)
    /// at the easy end. The anchor counts are deliberately configurable via
    /// [`PartitionScheme::Anchored`]; these are just defaults.
    pub fn anchored_default(heaps: usize) -> Result<Self, PoolError> {
        if heaps <= 2 {
            return Ok(PartitionLayout::dual());
        }
        let anchored_low = (heaps / 3).max(1);
        let anchored_high = (heaps / 10).max(1);
        PartitionLayout::from_scheme(&PartitionScheme::Anchored {
            bins: heaps,
            anchored_low,
            anchored_high,
        })
    }

    pub fn heaps(&self) -> usize {
        if self.edges.is_empty() {
            2
        } else {
            self.edges.len() + 1
        }
    }

    pub fn is_dual(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Static bin index for a statistic (multi-heap layouts only).
    fn bin_for(&self, stat: f64) -> usize {
        debug_assert!(!self.is_dual());
        self.edges.partition_point(|e| *e <= stat)
    }
}

/// Which sampling strategy draws the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// Uniform over all samplable records; the plain-RLVR reference.
    Uniform,
    /// Probability proportional to `1 - (stat + 1) / 2` over scored records,
    /// topped up from the cold queue. Reference baseline definition.
    Prioritized,
    /// Cold-first plus the boundary band of the dual heap.
    Boundary,
    /// Cold-first plus round-robin gap bands of a multi-heap layout.
    MultiHeap,
}

impl SamplerKind {
    pub fn wire_name(&self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Prioritized => "prioritized",
            SamplerKind::Boundary => "boundary",
            SamplerKind::MultiHeap => "multiheap",
        }
    }

    pub fn from_wire(name: &str) -> Option<Self> {
        match name {
            "uniform" => Some(SamplerKind::Uniform),
            "prioritized" => Some(SamplerKind::Prioritized),
            "boundary" => Some(SamplerKind::Boundary),
            "multiheap" => Some(SamplerKind::MultiHeap),
            _ => None,
        }
    }
}

/// One score-ordered bin of (statistic, id) pairs.
#[derive(Debug, Clone, Default)]
struct ScoredBin {
    items: BTreeSet<(StatKey, RecordId)>,
}

impl ScoredBin {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn insert(&mut self, stat: f64, id: RecordId) {
        let fresh = self.items.insert((StatKey::new(stat), id));
        debug_assert!(fresh, "bin already held {id}");
    }

    fn remove(&mut self, stat: f64, id: RecordId) -> bool {
        self.items.remove(&(StatKey::new(stat), id))
    }

    /// Smallest (stat, id); ties on the statistic pop the smaller id.
    fn pop_min(&mut self) -> Option<(f64, RecordId)> {
        self.items.pop_first().map(|(k, id)| (k.0, id))
    }

    /// Largest statistic; ties on the statistic pop the smaller id.
    fn pop_max_tiebreak(&mut self) -> Option<(f64, RecordId)> {
        let &(top, _) = self.items.last()?;
        let &(k, id) = self.items.range((top, RecordId(0))..).next()?;
        self.items.remove(&(k, id));
        Some((k.0, id))
    }

    /// Largest (stat, id) pair; used for canonical rebalancing moves.
    fn pop_last(&mut self) -> Option<(f64, RecordId)> {
        self.items.pop_last().map(|(k, id)| (k.0, id))
    }

    fn first(&self) -> Option<(f64, RecordId)> {
        self.items.first().map(|&(k, id)| (k.0, id))
    }

    fn last(&self) -> Option<(f64, RecordId)> {
        self.items.last().map(|&(k, id)| (k.0, id))
    }

    fn iter(&self) -> impl Iterator<Item = (f64, RecordId)> + '_ {
        self.items.iter().map(|&(k, id)| (k.0, id))
    }
}

/// Construction parameters for a [`PromptPool`].
#[derive(Debug, Clone, PartialEq)]
pub struct PoolConfig {
    pub capacity: usize,
    /// Target fraction of scored items kept in the low partition.
    pub alpha: f64,
    /// Fraction of each batch's boundary slots redirected to the easiest
    /// items, for stability. Off by default.
    pub mix_easy_fraction: f64,
    pub layout: PartitionLayout,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            capacity: 100_000,
            alpha: 0.5,
            mix_easy_fraction: 0.0,
            layout: PartitionLayout::dual(),
        }
    }
}

/// The bounded prompt pool: a cold FIFO plus score-ordered partitions.
#[derive(Debug, Clone)]
pub struct PromptPool {
    capacity: usize,
    alpha: f64,
    mix_easy_fraction: f64,
    layout: PartitionLayout,
    cold: VecDeque<RecordId>,
    bins: Vec<ScoredBin>,
    records: BTreeMap<RecordId, QueryRecord>,
}

impl PromptPool {
    pub fn new(config: PoolConfig) -> Result<Self, PoolError> {
        if config.capacity == 0 {
            return Err(PoolError::InvalidConfig(
                "capacity must be at least 1".into(),
            ));
        }
        if !(config.alpha > 0.0 && config.alpha < 1.0) {
            return Err(PoolError::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                config.alpha
            )));
        }
        if !(0.0..1.0).contains(&config.mix_easy_fraction) {
            return Err(PoolError::InvalidConfig(format!(
                "mix_easy_fraction must lie in [0, 1), got {}",
                config.mix_easy_fraction
            )));
        }
        let heaps = config.layout.heaps();
        Ok(PromptPool {
            capacity: config.capacity,
            alpha: config.alpha,
            mix_easy_fraction: config.mix_easy_fraction,
            layout: config.layout,
            cold: VecDeque::new(),
            bins: vec![ScoredBin::default(); heaps],
            records: BTreeMap::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn layout(&self) -> &PartitionLayout {
        &self.layout
    }

    pub fn heaps(&self) -> usize {
        self.layout.heaps()
    }

    /// Active pool size: cold queue plus all scored partitions.
    pub fn len(&self) -> usize {
        self.cold.len() + self.scored_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn cold_len(&self) -> usize {
        self.cold.len()
    }

    pub fn scored_len(&self) -> usize {
        self.bins.iter().map(ScoredBin::len).sum()
    }

    pub fn bin_len(&self, bin: usize) -> usize {
        self.bins.get(bin).map_or(0, ScoredBin::len)
    }

    pub fn get(&self, id: RecordId) -> Option<&QueryRecord> {
        self.records.get(&id)
    }

    /// Records currently in the pool, in id order.
    pub fn iter_records(&self) -> impl Iterator<Item = &QueryRecord> {
        self.records.values()
    }

    /// Cold ids in FIFO order.
    pub fn cold_ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.cold.iter().copied()
    }

    /// Append an unscored record to the cold queue.
    pub fn insert_cold(&mut self, mut record: QueryRecord) -> Result<RecordId, PoolError> {
        if self.is_full() {
            return Err(PoolError::CapacityExceeded);
        }
        if self.records.contains_key(&record.id) {
            return Err(PoolError::DuplicateId(record.id));
        }
        if record.pool_stat.is_some() {
            return Err(PoolError::StatisticDefined(record.id));
        }
        record.state = RecordState::Cold;
        let id = record.id;
        self.cold.push_back(id);
        self.records.insert(id, record);
        Ok(id)
    }

    /// Insert a record that already carries a statistic directly into the
    /// scored partitions (the reinsertion path).
    pub fn insert_scored(&mut self, mut record: QueryRecord) -> Result<RecordId, PoolError> {
        if self.is_full() {
            return Err(PoolError::CapacityExceeded);
        }
        if self.records.contains_key(&record.id) {
            return Err(PoolError::DuplicateId(record.id));
        }
        let stat = record
            .pool_stat
            .ok_or(PoolError::MissingStatistic(record.id))?;
        if !stat.is_finite() || !(-1.0..=1.0).contains(&stat) {
            return Err(PoolError::StatOutOfRange {
                id: record.id,
                stat,
            });
        }
        let id = record.id;
        let bin = if self.layout.is_dual() {
            0
        } else {
            self.layout.bin_for(stat)
        };
        record.state = RecordState::Scored { bin };
        self.bins[bin].insert(stat, id);
        self.records.insert(id, record);
        if self.layout.is_dual() {
            self.settle_dual();
        }
        Ok(id)
    }

    /// Move a cold record into the scored partitions after its first
    /// verified rollout group.
    pub fn promote(&mut self, id: RecordId, first_group_mean: f64) -> Result<(), PoolError> {
        let record = self.records.get(&id).ok_or(PoolError::UnknownRecord(id))?;
        if record.state != RecordState::Cold {
            return Err(PoolError::NotCold(id));
        }
        if !first_group_mean.is_finite() || !(-1.0..=1.0).contains(&first_group_mean) {
            return Err(PoolError::StatOutOfRange {
                id,
                stat: first_group_mean,
            });
        }
        let pos = self
            .cold
            .iter()
            .position(|&c| c == id)
            .ok_or(PoolError::NotCold(id))?;
        self.cold.remove(pos);
        let bin = if self.layout.is_dual() {
            0
        } else {
            self.layout.bin_for(first_group_mean)
        };
        let record = self.records.get_mut(&id).expect("checked above");
        record.pool_stat = Some(first_group_mean);
        record.state = RecordState::Scored { bin };
        self.bins[bin].insert(first_group_mean, id);
        if self.layout.is_dual() {
            self.settle_dual();
        }
        Ok(())
    }

    /// Restore the canonical dual-heap split: the ceil(alpha * S) smallest
    /// (stat, id) pairs in the low partition. Returns cross-partition moves.
    pub fn rebalance(&mut self) -> Result<usize, PoolError> {
        if !self.layout.is_dual() {
            return Err(PoolError::LayoutMismatch {
                heaps: self.layout.heaps(),
            });
        }
        Ok(self.settle_dual())
    }

    fn target_low(&self) -> usize {
        let scored = self.scored_len();
        (self.alpha * scored as f64).ceil() as usize
    }

    fn settle_dual(&mut self) -> usize {
        let target = self.target_low();
        let mut moves = 0;
        // Size first, then fix boundary inversions; both loops move the
        // canonical elements because bins order by (stat, id).
        while self.bins[0].len() > target {
            let (stat, id) = self.bins[0].pop_last().expect("low non-empty");
            self.bins[1].insert(stat, id);
            self.set_bin(id, 1);
            moves += 1;
        }
        while self.bins[0].len() < target {
            let Some((stat, id)) = self.bins[1].pop_min() else {
                break;
            };
            self.bins[0].insert(stat, id);
            self.set_bin(id, 0);
            moves += 1;
        }
        while let (Some(lo_max), Some(hi_min)) = (self.bins[0].last(), self.bins[1].first()) {
            if (StatKey::new(lo_max.0), lo_max.1) <= (StatKey::new(hi_min.0), hi_min.1) {
                break;
            }
            let (ls, lid) = self.bins[0].pop_last().expect("low non-empty");
            let (hs, hid) = self.bins[1].pop_min().expect("high non-empty");
            self.bins[1].insert(ls, lid);
            self.set_bin(lid, 1);
            self.bins[0].insert(hs, hid);
            self.set_bin(hid, 0);
            moves += 2;
        }
        moves
    }

    fn set_bin(&mut self, id: RecordId, bin: usize) {
        if let Some(rec) = self.records.get_mut(&id) {
            rec.state = RecordState::Scored { bin };
        }
    }

    fn take_record(&mut self, id: RecordId) -> QueryRecord {
        let mut rec = self.records.remove(&id).expect("record tracked");
        rec.state = RecordState::Sampled;
        rec
    }

    /// Dual-heap boundary sampling; see [`PromptPool::multiheap_sample`] for
    /// the generalization this specializes.
    pub fn boundary_sample<R: Rng>(
        &mut self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<QueryRecord>, PoolError> {
        if !self.layout.is_dual() {
            return Err(PoolError::LayoutMismatch {
                heaps: self.layout.heaps(),
            });
        }
        self.frontier_sample(batch, rng)
    }

    /// Cold-first batch, then a candidate band formed by visiting each gap
    /// between adjacent bins round-robin and popping the nearest item on
    /// each side (upper side first), capped at `2 * batch` candidates;
    /// the needed count is chosen uniformly and the rest are reinserted.
    pub fn multiheap_sample<R: Rng>(
        &mut self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<QueryRecord>, PoolError> {
        self.frontier_sample(batch, rng)
    }

    fn frontier_sample<R: Rng>(
        &mut self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<QueryRecord>, PoolError> {
        let have = self.len();
        if have < batch {
            return Err(PoolError::InsufficientItems { need: batch, have });
        }
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            let Some(id) = self.cold.pop_front() else {
                break;
            };
            out.push(self.take_record(id));
        }
        let mut remaining = batch - out.len();
        if remaining == 0 {
            return Ok(out);
        }

        if self.mix_easy_fraction > 0.0 {
            let quota = ((self.mix_easy_fraction * batch as f64).floor() as usize).min(remaining);
            for _ in 0..quota {
                let Some(top) = self.bins.iter_mut().rev().find(|b| !b.is_empty()) else {
                    break;
                };
                let (_, id) = top.pop_max_tiebreak().expect("bin non-empty");
                out.push(self.take_record(id));
            }
            remaining = batch - out.len();
            if remaining == 0 {
                return Ok(out);
            }
        }

        // Candidate band: round-robin over the gaps between adjacent bins,
        // popping the upper side's minimum then the lower side's maximum.
        let cap = 2 * batch;
        let mut candidates: Vec<(usize, f64, RecordId)> = Vec::new();
        loop {
            let before = candidates.len();
            for gap in 0..self.bins.len() - 1 {
                if candidates.len() < cap {
                    if let Some((stat, id)) = self.bins[gap + 1].pop_min() {
                        candidates.push((gap + 1, stat, id));
                    }
                }
                if candidates.len() < cap {
                    if let Some((stat, id)) = self.bins[gap].pop_max_tiebreak() {
                        candidates.push((gap, stat, id));
                    }
                }
            }
            if candidates.len() == before || candidates.len() >= cap {
                break;
            }
        }
        debug_assert!(candidates.len() >= remaining);

        // Uniform choice of the needed count; everything else goes back.
        for i in 0..remaining {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
        }
        for &(_, _, id) in candidates.iter().take(remaining) {
            out.push(self.take_record(id));
        }
        for &(bin, stat, id) in candidates.iter().skip(remaining) {
            self.bins[bin].insert(stat, id);
        }
        if self.layout.is_dual() {
            self.settle_dual();
        }
        Ok(out)
    }

    /// Uniform-without-replacement reference sampler over all samplable
    /// records.
    pub fn uniform_sample<R: Rng>(
        &mut self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<QueryRecord>, PoolError> {
        let have = self.len();
        if have < batch {
            return Err(PoolError::InsufficientItems { need: batch, have });
        }
        let mut ids: Vec<RecordId> = self.records.keys().copied().collect();
        for i in 0..batch {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
        }
        let chosen: BTreeSet<RecordId> = ids[..batch].iter().copied().collect();
        self.detach_many(&chosen);
        Ok(ids[..batch]
            .iter()
            .map(|&id| self.take_record(id))
            .collect())
    }

    /// Prioritized reference sampler: scored records drawn with probability
    /// proportional to `1 - (stat + 1) / 2`, remainder drawn uniformly from
    /// the cold queue. Pinned here as the comparison baseline; the weights
    /// use a tiny floor so an all-easy pool degrades to uniform.
    pub fn prioritized_sample<R: Rng>(
        &mut self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<QueryRecord>, PoolError> {
        let have = self.len();
        if have < batch {
            return Err(PoolError::InsufficientItems { need: batch, have });
        }
        let mut scored: Vec<(f64, RecordId)> = Vec::with_capacity(self.scored_len());
        for bin in &self.bins {
            for (stat, id) in bin.iter() {
                let weight = ((1.0 - stat) / 2.0).max(1e-12);
                let u: f64 = rng.random::<f64>();
                let key = -(u.max(1e-300)).ln() / weight;
                scored.push((key, id));
            }
        }
        let take_scored = batch.min(scored.len());
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen: BTreeSet<RecordId> =
            scored[..take_scored].iter().map(|&(_, id)| id).collect();
        let mut order: Vec<RecordId> = scored[..take_scored].iter().map(|&(_, id)| id).collect();

        let mut need_cold = batch - take_scored;
        if need_cold > 0 {
            let mut cold_ids: Vec<RecordId> = self.cold.iter().copied().collect();
            need_cold = need_cold.min(cold_ids.len());
            for i in 0..need_cold {
                let j = rng.random_range(i..cold_ids.len());
                cold_ids.swap(i, j);
            }
            for &id in &cold_ids[..need_cold] {
                chosen.insert(id);
                order.push(id);
            }
        }
        self.detach_many(&chosen);
        Ok(order.iter().map(|&id| self.take_record(id)).collect())
    }

    /// Remove the given ids from whatever containers hold them, leaving the
    /// records map untouched.
    fn detach_many(&mut self, ids: &BTreeSet<RecordId>) {
        self.cold.retain(|id| !ids.contains(id));
        for &id in ids {
            let rec = &self.records[&id];
            if let (RecordState::Scored { bin }, Some(stat)) = (rec.state, rec.pool_stat) {
                let removed = self.bins[bin].remove(stat, id);
                debug_assert!(removed);
            }
        }
        if self.layout.is_dual() {
            self.settle_dual();
        }
    }

    /// Dispatch on the sampler kind.
    pub fn sample_batch<R: Rng>(
        &mut self,
        batch: usize,
        kind: SamplerKind,
        rng: &mut R,
    ) -> Result<Vec<QueryRecord>, PoolError> {
        match kind {
            SamplerKind::Uniform => self.uniform_sample(batch, rng),
            SamplerKind::Prioritized => self.prioritized_sample(batch, rng),
            SamplerKind::Boundary => self.boundary_sample(batch, rng),
            SamplerKind::MultiHeap => self.multiheap_sample(batch, rng),
        }
    }

    /// Empirical sampling distribution: run the sampler on fresh deep copies
    /// of this pool and histogram the drawn ids. Sums to `trials * batch`.
    pub fn estimate_sampling_distribution<R: Rng>(
        &self,
        batch: usize,
        kind: SamplerKind,
        trials: usize,
        rng: &mut R,
    ) -> Result<BTreeMap<RecordId, u64>, PoolError> {
        let mut histogram: BTreeMap<RecordId, u64> = BTreeMap::new();
        for _ in 0..trials {
            let mut copy = self.clone();
            for rec in copy.sample_batch(batch, kind, rng)? {
                *histogram.entry(rec.id).or_insert(0) += 1;
            }
        }
        Ok(histogram)
    }

    /// Structural audit used by fuzz runs: container membership, state
    /// consistency, capacity, and the canonical dual split.
    pub fn check_consistency(&self) -> Result<(), String> {
        if self.len() > self.capacity {
            return Err(format!(
                "size {} exceeds capacity {}",
                self.len(),
                self.capacity
            ));
        }
        let mut seen = 0usize;
        for &id in &self.cold {
            let rec = self
                .records
                .get(&id)
                .ok_or(format!("cold id {id} untracked"))?;
            if rec.state != RecordState::Cold || rec.pool_stat.is_some() {
                return Err(format!("cold id {id} has state {:?}", rec.state));
            }
            seen += 1;
        }
        for (i, bin) in self.bins.iter().enumerate() {
            for (stat, id) in bin.iter() {
                let rec = self
                    .records
                    .get(&id)
                    .ok_or(format!("bin id {id} untracked"))?;
                if rec.state != (RecordState::Scored { bin: i }) || rec.pool_stat != Some(stat) {
                    return Err(format!("bin {i} id {id} inconsistent: {:?}", rec.state));
                }
                seen += 1;
            }
        }
        if seen != self.records.len() {
            return Err(format!(
                "{} records tracked, {} in containers",
                self.records.len(),
                seen
            ));
        }
        if self.layout.is_dual() {
            if self.bins[0].len() != self.target_low() {
                return Err(format!(
                    "low holds {} items, target {}",
                    self.bins[0].len(),
                    self.target_low()
                ));
            }
            if let (Some(lo), Some(hi)) = (self.bins[0].last(), self.bins[1].first()) {
                if (StatKey::new(lo.0), lo.1) > (StatKey::new(hi.0), hi.1) {
                    return Err(format!(
                        "boundary inversion: low max {lo:?} > high min {hi:?}"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn pool(capacity: usize) -> PromptPool {
        PromptPool::new(PoolConfig {
            capacity,
            ..PoolConfig::default()
        })
        .unwrap()
    }

    fn seed_rec(id: u64) -> QueryRecord {
        QueryRecord::seed(
            RecordId(id),
            format!("Compute {id} + 1."),
            format!("{}", id + 1),
        )
    }

    fn scored_rec(id: u64, stat: f64) -> QueryRecord {
        let mut r = seed_rec(id);
        r.pool_stat = Some(stat);
        r
    }

    #[test]
    fn cold_inserts_are_fifo_until_capacity() {
        let mut p = pool(3);
        p.insert_cold(seed_rec(1)).unwrap();
        p.insert_cold(seed_rec(2)).unwrap();
        p.insert_cold(seed_rec(3)).unwrap();
        assert_eq!(
            p.cold_ids().collect::<Vec<_>>(),
            vec![RecordId(1), RecordId(2), RecordId(3)]
        );
        assert_eq!(p.insert_cold(seed_rec(4)), Err(PoolError::CapacityExceeded));
    }

    #[test]
    fn capacity_matches_default_configuration() {
        let mut p = pool(100_000);
        for i in 0..100_000u64 {
            p.insert_cold(seed_rec(i)).unwrap();
        }
        assert_eq!(
            p.insert_cold(seed_rec(100_000)),
            Err(PoolError::CapacityExceeded)
        );
        assert_eq!(p.len(), 100_000);
    }

    #[test]
    fn promote_places_single_item_low() {
        let mut p = pool(10);
        p.insert_cold(seed_rec(1)).unwrap();
        p.promote(RecordId(1), -0.8).unwrap();
        assert_eq!(p.bin_len(0), 1);
        assert_eq!(p.bin_len(1), 0);
        assert_eq!(
            p.get(RecordId(1)).unwrap().state,
            RecordState::Scored { bin: 0 }
        );
        assert_eq!(
            p.promote(RecordId(1), 0.0),
            Err(PoolError::NotCold(RecordId(1)))
        );
    }

    #[test]
    fn promote_pair_rebalances_by_order_statistics() {
        let mut p = pool(10);
        p.insert_cold(seed_rec(1)).unwrap();
        p.insert_cold(seed_rec(2)).unwrap();
        p.promote(RecordId(1), 1.0).unwrap();
        p.promote(RecordId(2), -1.0).unwrap();
        assert_eq!(
            p.get(RecordId(2)).unwrap().state,
            RecordState::Scored { bin: 0 }
        );
        assert_eq!(
            p.get(RecordId(1)).unwrap().state,
            RecordState::Scored { bin: 1 }
        );
    }

    #[test]
    fn rebalance_splits_at_the_alpha_quantile() {
        let mut p = pool(10);
        // Deliberately insert in an order that leaves the split wrong, then
        // verify the canonical result against the sort oracle.
        for (id, stat) in [(1, 0.8), (2, 0.3), (3, -0.1), (4, -0.9)] {
            p.insert_scored(scored_rec(id, stat)).unwrap();
        }
        let low: Vec<f64> = p
            .iter_records()
            .filter(|r| r.state == RecordState::Scored { bin: 0 })
            .map(|r| r.pool_stat.unwrap())
            .collect();
        let mut low = low;
        low.sort_by(f64::total_cmp);
        assert_eq!(low, vec![-0.9, -0.1]);
        assert_eq!(p.rebalance().unwrap(), 0); // already balanced: fixed point
        p.check_consistency().unwrap();
    }

    #[test]
    fn equal_stats_send_smaller_ids_low() {
        let mut p = pool(10);
        for id in [4, 2, 3, 1] {
            p.insert_scored(scored_rec(id, 0.0)).unwrap();
        }
        for id in [1, 2] {
            assert_eq!(
                p.get(RecordId(id)).unwrap().state,
                RecordState::Scored { bin: 0 }
            );
        }
        for id in [3, 4] {
            assert_eq!(
                p.get(RecordId(id)).unwrap().state,
                RecordState::Scored { bin: 1 }
            );
        }
    }

    #[test]
    fn cold_records_sample_first_in_fifo_order() {
        let mut p = pool(20);
        for id in 1..=3 {
            p.insert_cold(seed_rec(id)).unwrap();
        }
        for id in 4..=8 {
            p.insert_scored(scored_rec(id, (id as f64 - 6.0) / 4.0))
                .unwrap();
        }
        let batch = p.boundary_sample(4, &mut rng(0)).unwrap();
        let ids: Vec<u64> = batch.iter().map(|r| r.id.0).collect();
        assert_eq!(&ids[..3], &[1, 2, 3]);
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|r| r.state == RecordState::Sampled));
        assert_eq!(p.len(), 4);
        p.check_consistency().unwrap();
    }

    #[test]
    fn falls_back_to_the_only_populated_partition() {
        let mut p = pool(10);
        p.insert_scored(scored_rec(1, -0.9)).unwrap();
        p.insert_scored(scored_rec(2, -0.7)).unwrap();
        // Both items sit in the dual split; empty the high side by alpha.
        // With two items and alpha 0.5 one lands high, so rebuild with an
        // alpha pushing both low.
        let mut p = PromptPool::new(PoolConfig {
            capacity: 10,
            alpha: 0.99,
            ..PoolConfig::default()
        })
        .unwrap();
        p.insert_scored(scored_rec(1, -0.9)).unwrap();
        p.insert_scored(scored_rec(2, -0.7)).unwrap();
        assert_eq!(p.bin_len(1), 0);
        let batch = p.boundary_sample(2, &mut rng(1)).unwrap();
        let mut ids: Vec<u64> = batch.iter().map(|r| r.id.0).collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn insufficient_items_is_reported() {
        let mut p = pool(10);
        p.insert_cold(seed_rec(1)).unwrap();
        p.insert_cold(seed_rec(2)).unwrap();
        assert_eq!(
            p.boundary_sample(5, &mut rng(0)),
            Err(PoolError::InsufficientItems { need: 5, have: 2 })
        );
    }

    #[test]
    fn sampling_is_deterministic_and_conservative() {
        let build = || {
            let mut p = pool(64);
            for id in 0..32u64 {
                p.insert_scored(scored_rec(id, (id as f64) / 16.0 - 1.0))
                    .unwrap();
            }
            p
        };
        let b1 = build().boundary_sample(6, &mut rng(42)).unwrap();
        let b2 = build().boundary_sample(6, &mut rng(42)).unwrap();
        assert_eq!(
            b1.iter().map(|r| r.id).collect::<Vec<_>>(),
            b2.iter().map(|r| r.id).collect::<Vec<_>>()
        );

        // Conservation: exactly B removed, non-chosen candidates restored
        // with unchanged statistics.
        let mut p = build();
        let before: BTreeMap<RecordId, f64> = p
            .iter_records()
            .map(|r| (r.id, r.pool_stat.unwrap()))
            .collect();
        let batch = p.boundary_sample(6, &mut rng(7)).unwrap();
        assert_eq!(p.len(), 26);
        for rec in p.iter_records() {
            assert_eq!(rec.pool_stat.unwrap(), before[&rec.id]);
        }
        for rec in &batch {
            assert!(p.get(rec.id).is_none());
        }
        p.check_consistency().unwrap();
    }

    #[test]
    fn multiheap_two_bins_matches_boundary_sample() {
        let build = || {
            let mut p = pool(64);
            for id in 0..20u64 {
                p.insert_scored(scored_rec(id, (id as f64) / 10.0 - 1.0))
                    .unwrap();
            }
            p
        };
        let a = build().boundary_sample(5, &mut rng(9)).unwrap();
        let b = build().multiheap_sample(5, &mut rng(9)).unwrap();
        assert_eq!(
            a.iter().map(|r| r.id).collect::<Vec<_>>(),
            b.iter().map(|r| r.id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn multiheap_with_one_populated_bin_draws_from_it() {
        let layout =
            PartitionLayout::from_scheme(&PartitionScheme::Explicit(vec![-0.5, 0.0, 0.5])).unwrap();
        let mut p = PromptPool::new(PoolConfig {
            capacity: 32,
            layout,
            ..PoolConfig::default()
        })
        .unwrap();
        for id in 0..8u64 {
            p.insert_scored(scored_rec(id, -0.9 + 0.01 * id as f64))
                .unwrap();
        }
        assert_eq!(p.bin_len(0), 8);
        let batch = p.multiheap_sample(3, &mut rng(3)).unwrap();
        assert_eq!(batch.len(), 3);
        // All candidates came from the lowest bin's gap side, i.e. its
        // maximum end: a 2B candidate band over ids with the largest stats.
        assert!(batch.iter().all(|r| r.id.0 >= 2));
    }

    #[test]
    fn anchored_low_edges_cluster_at_the_hard_end() {
        let layout = PartitionLayout::from_scheme(&PartitionScheme::Anchored {
            bins: 6,
            anchored_low: 3,
            anchored_high: 1,
        })
        .unwrap();
        let in_hard_region = layout
            .edges()
            .iter()
            .filter(|e| (-1.0..=-0.5).contains(*e))
            .count();
        assert!(in_hard_region >= 2, "edges: {:?}", layout.edges());
        assert_eq!(layout.heaps(), 6);
    }

    #[test]
    fn easy_mixing_takes_from_the_top() {
        let mut p = PromptPool::new(PoolConfig {
            capacity: 64,
            mix_easy_fraction: 0.5,
            ..PoolConfig::default()
        })
        .unwrap();
        for id in 0..16u64 {
            p.insert_scored(scored_rec(id, (id as f64) / 8.0 - 1.0))
                .unwrap();
        }
        let batch = p.boundary_sample(4, &mut rng(0)).unwrap();
        // floor(0.5 * 4) = 2 slots come from the easiest end.
        let easy: Vec<u64> = batch
            .iter()
            .filter(|r| r.id.0 >= 14)
            .map(|r| r.id.0)
            .collect();
        assert_eq!(easy.len(), 2);
    }

    #[test]
    fn singleton_distribution_concentrates() {
        let mut p = pool(4);
        p.insert_cold(seed_rec(1)).unwrap();
        let hist = p
            .estimate_sampling_distribution(1, SamplerKind::Boundary, 50, &mut rng(0))
            .unwrap();
        assert_eq!(hist[&RecordId(1)], 50);
    }

    #[test]
    fn symmetric_pool_splits_mass_across_innermost_pair() {
        let mut p = pool(8);
        for (id, stat) in [(1, -0.6), (2, -0.2), (3, 0.2), (4, 0.6)] {
            p.insert_scored(scored_rec(id, stat)).unwrap();
        }
        let trials = 40_000usize;
        let hist = p
            .estimate_sampling_distribution(1, SamplerKind::Boundary, trials, &mut rng(11))
            .unwrap();
        // Innermost pair only, each with p = 1/2 within binomial 3 sigma.
        assert_eq!(hist.get(&RecordId(1)), None);
        assert_eq!(hist.get(&RecordId(4)), None);
        let expected = trials as f64 / 2.0;
        let sigma = (trials as f64 * 0.25).sqrt();
        for id in [2, 3] {
            let got = hist[&RecordId(id)] as f64;
            assert!(
                (got - expected).abs() < 3.0 * sigma,
                "id {id}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn uniform_reference_histogram_is_flat() {
        let mut p = pool(16);
        for id in 0..8u64 {
            p.insert_scored(scored_rec(id, (id as f64) / 4.0 - 1.0))
                .unwrap();
        }
        let trials = 40_000usize;
        let hist = p
            .estimate_sampling_distribution(1, SamplerKind::Uniform, trials, &mut rng(5))
            .unwrap();
        let expected = trials as f64 / 8.0;
        let sigma = (trials as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for id in 0..8u64 {
            let got = *hist.get(&RecordId(id)).unwrap_or(&0) as f64;
            assert!(
                (got - expected).abs() < 3.0 * sigma,
                "id {id}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn pop_order_matches_sort_oracle() {
        // Heap pops must be monotone in (stat, id-tiebreak) against a
        // sort-based oracle on a large random pool.
        let mut r = rng(13);
        let mut p = pool(20_000);
        let mut expected: Vec<(i64, u64)> = Vec::new();
        for id in 0..10_000u64 {
            // Coarse stats force plenty of ties.
            let stat = (r.random_range(-5i64..=5)) as f64 / 5.0;
            p.insert_scored(scored_rec(id, stat)).unwrap();
            expected.push(((stat * 5.0) as i64, id));
        }
        // Oracle for the high partition's pop order: ascending stat, then id.
        let mut oracle = expected.clone();
        oracle.sort();
        let mut popped: Vec<(i64, u64)> = Vec::new();
        let target_low = p.bins[0].len();
        // Pop the whole high bin via the boundary-min rule.
        while let Some((stat, id)) = p.bins[1].pop_min() {
            popped.push(((stat * 5.0) as i64, id.0));
        }
        assert_eq!(popped.as_slice(), &oracle[target_low..]);

        // And the low partition's max-end pops: descending stat, smaller id
        // first among ties.
        let mut low_oracle: Vec<(i64, u64)> = oracle[..target_low].to_vec();
        low_oracle.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut low_popped = Vec::new();
        while let Some((stat, id)) = p.bins[0].pop_max_tiebreak() {
            low_popped.push(((stat * 5.0) as i64, id.0));
        }
        assert_eq!(low_popped, low_oracle);
    }

    #[test]
    fn prioritized_sampler_prefers_hard_items() {
        let mut p = pool(8);
        p.insert_scored(scored_rec(1, -0.9)).unwrap();
        p.insert_scored(scored_rec(2, 0.9)).unwrap();
        let trials = 20_000usize;
        let hist = p
            .estimate_sampling_distribution(1, SamplerKind::Prioritized, trials, &mut rng(2))
            .unwrap();
        let hard = *hist.get(&RecordId(1)).unwrap_or(&0) as f64;
        // Weights 0.95 vs 0.05: the hard item takes 95% of the mass.
        assert!(hard / trials as f64 > 0.9, "hard mass {hard}");
    }
}
