//! Query records and their lifecycle states.
//!
//! A [`QueryRecord`] is one prompt/answer pair together with the training-time
//! bookkeeping the sampler relies on: the pool statistic `r~` (undefined while
//! the record is cold), a relative difficulty factor, and a parent pointer for
//! augmented records.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Unique record identifier. Ids are allocated as a monotone insertion
/// sequence, so a child's id is always strictly larger than its parent's.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a record currently lives in its lifecycle.
///
/// A record is in exactly one of these states at any time:
/// cold queue, a scored partition, sampled out for the current step,
/// the archive, or the asynchronous verification pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordState {
    /// In the cold FIFO queue: pool statistic undefined, sampled with priority.
    Cold,
    /// In scored partition `bin` with a defined pool statistic.
    Scored { bin: usize },
    /// Removed from its container by a sampler; owned by the training loop
    /// until archived.
    Sampled,
    /// In the archive awaiting controlled reinsertion.
    Archived,
    /// Candidate awaiting an asynchronous teacher verdict.
    PendingVerification,
}

impl RecordState {
    /// Wire name used by the JSONL snapshot format.
    pub fn wire_name(&self) -> &'static str {
        match self {
            RecordState::Cold => "cold",
            RecordState::Scored { .. } => "scored",
            RecordState::Sampled => "sampled",
            RecordState::Archived => "archived",
            RecordState::PendingVerification => "pending_verification",
        }
    }
}

/// One prompt/answer pair plus its lifecycle state and sampler statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: RecordId,
    pub prompt: String,
    /// Canonical numeric-answer string (teacher-annotated for augmented records).
    pub answer: String,
    /// Pool statistic `r~` in [-1, 1]; `None` while the record is cold or
    /// pending verification.
    pub pool_stat: Option<f64>,
    /// Relative difficulty factor `d` in [D_MIN, D_MAX]; exactly 1.0 for seeds.
    pub difficulty: f64,
    /// Id of the record this one was augmented from, if any.
    pub parent_id: Option<RecordId>,
    pub state: RecordState,
    /// Number of rollout groups this record has been trained on.
    pub times_trained: u32,
    /// Group mean reward of the most recent training group.
    pub last_group_mean: Option<f64>,
}

impl QueryRecord {
    /// A fresh seed record: unscored, difficulty 1.0, no parent.
    pub fn seed(id: RecordId, prompt: impl Into<String>, answer: impl Into<String>) -> Self {
        QueryRecord {
            id,
            prompt: prompt.into(),
            answer: answer.into(),
            pool_stat: None,
            difficulty: 1.0,
            parent_id: None,
            state: RecordState::Cold,
            times_trained: 0,
            last_group_mean: None,
        }
    }

    /// A verified augmentation: unscored, clamped difficulty, parent pointer.
    pub fn augmented(
        id: RecordId,
        prompt: impl Into<String>,
        answer: impl Into<String>,
        difficulty: f64,
        parent_id: RecordId,
    ) -> Self {
        QueryRecord {
            id,
            prompt: prompt.into(),
            answer: answer.into(),
            pool_stat: None,
            difficulty,
            parent_id: Some(parent_id),
            state: RecordState::Cold,
            times_trained: 0,
            last_group_mean: None,
        }
    }
}
