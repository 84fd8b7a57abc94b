//! Archive of trained records and controlled reinsertion.
//!
//! Records leave the active pool after training and wait in a FIFO archive.
//! Recycling triggers when the pool cannot supply a full batch or the
//! archive crosses a size threshold; archived records then return to the
//! scored partitions in bounded batches, carrying refreshed statistics.

use crate::pool::{PoolError, PromptPool};
use crate::record::{QueryRecord, RecordId, RecordState};
use std::collections::BTreeMap;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RecycleError {
    #[error("record {0} was never trained (no group mean)")]
    NeverTrained(RecordId),
    #[error("record {0} has no pool statistic")]
    MissingStatistic(RecordId),
}

/// FIFO of archived records plus the recycling knobs.
#[derive(Debug, Clone)]
pub struct Archive {
    entries: VecDeque<QueryRecord>,
    pub size_threshold: usize,
    pub reinsert_batch_size: usize,
}

impl Archive {
    /// Default sizing ties both knobs to the batch size, keeping curriculum
    /// shifts bounded per step: threshold `2 * batch`, reinsert batch
    /// `batch`.
    pub fn with_batch_size(batch: usize) -> Self {
        Archive {
            entries: VecDeque::new(),
            size_threshold: 2 * batch,
            reinsert_batch_size: batch,
        }
    }

    pub fn new(size_threshold: usize, reinsert_batch_size: usize) -> Self {
        Archive {
            entries: VecDeque::new(),
            size_threshold,
            reinsert_batch_size,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Archived records in FIFO order.
    pub fn iter(&self) -> impl Iterator<Item = &QueryRecord> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.entries.iter().map(|r| r.id)
    }

    /// Move a just-trained record into the archive. The caller has already
    /// folded the group mean into the pool statistic.
    pub fn archive_record(&mut self, mut record: QueryRecord) -> Result<(), RecycleError> {
        if record.last_group_mean.is_none() {
            return Err(RecycleError::NeverTrained(record.id));
        }
        if record.pool_stat.is_none() {
            return Err(RecycleError::MissingStatistic(record.id));
        }
        record.state = RecordState::Archived;
        self.entries.push_back(record);
        Ok(())
    }

    /// Used by snapshot loading; entries must already be archived-shaped.
    pub(crate) fn push_loaded(&mut self, record: QueryRecord) {
        debug_assert_eq!(record.state, RecordState::Archived);
        self.entries.push_back(record);
    }
}

/// Recycle when the pool cannot fill a batch or the archive is large enough.
pub fn should_recycle(pool: &PromptPool, archive: &Archive, batch_size: usize) -> bool {
    pool.len() < batch_size || archive.len() >= archive.size_threshold
}

/// Pop up to one reinsertion batch from the archive FIFO and insert each
/// record as a scored item, applying its refreshed statistic when one is
/// present. Stops early (without losing the record) when the pool fills.
pub fn reinsert_batched(
    pool: &mut PromptPool,
    archive: &mut Archive,
    refreshed: &BTreeMap<RecordId, f64>,
) -> usize {
    let mut reinserted = 0;
    while reinserted < archive.reinsert_batch_size {
        let Some(mut record) = archive.entries.pop_front() else {
            break;
        };
        if let Some(&stat) = refreshed.get(&record.id) {
            record.pool_stat = Some(stat.clamp(-1.0, 1.0));
        }
        match pool.insert_scored(record.clone()) {
            Ok(_) => reinserted += 1,
            Err(PoolError::CapacityExceeded) => {
                archive.entries.push_front(record);
                break;
            }
            Err(e) => unreachable!("archive reinsertion cannot fail structurally: {e}"),
        }
    }
    reinserted
}
