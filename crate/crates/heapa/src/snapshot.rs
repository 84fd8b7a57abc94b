//! JSONL snapshots of pools and archives: one record per line with the
//! fields `{id, prompt, answer, pool_stat, difficulty, parent_id, state,
//! times_trained}`. Partition membership is not stored; it is reconstructed
//! from the statistic and the layout on load, and round-trips are bit-exact.

use crate::pool::{PoolConfig, PromptPool};
use crate::record::{QueryRecord, RecordId, RecordState};
use crate::recycle::Archive;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRecord {
    id: u64,
    prompt: String,
    answer: String,
    pool_stat: Option<f64>,
    difficulty: f64,
    parent_id: Option<u64>,
    state: String,
    times_trained: u32,
}

impl SnapshotRecord {
    fn from_record(record: &QueryRecord) -> Self {
        SnapshotRecord {
            id: record.id.0,
            prompt: record.prompt.clone(),
            answer: record.answer.clone(),
            pool_stat: record.pool_stat,
            difficulty: record.difficulty,
            parent_id: record.parent_id.map(|p| p.0),
            state: record.state.wire_name().to_string(),
            times_trained: record.times_trained,
        }
    }

    fn into_record(self, state: RecordState) -> QueryRecord {
        QueryRecord {
            id: RecordId(self.id),
            prompt: self.prompt,
            answer: self.answer,
            pool_stat: self.pool_stat,
            difficulty: self.difficulty,
            parent_id: self.parent_id.map(RecordId),
            state,
            times_trained: self.times_trained,
            last_group_mean: None,
        }
    }
}

/// Write the pool as JSONL: cold records in FIFO order, then scored records
/// in ascending id order.
pub fn write_pool_snapshot<W: Write>(pool: &PromptPool, mut out: W) -> std::io::Result<()> {
    for id in pool.cold_ids() {
        let record = pool.get(id).expect("cold id tracked");
        writeln!(
            out,
            "{}",
            serde_json::to_string(&SnapshotRecord::from_record(record))?
        )?;
    }
    for record in pool.iter_records() {
        if matches!(record.state, RecordState::Scored { .. }) {
            writeln!(
                out,
                "{}",
                serde_json::to_string(&SnapshotRecord::from_record(record))?
            )?;
        }
    }
    Ok(())
}

/// Load a pool snapshot, reconstructing partition membership from the
/// statistics and the configured layout.
pub fn read_pool_snapshot<R: BufRead>(
    reader: R,
    config: PoolConfig,
) -> Result<PromptPool, SnapshotError> {
    let mut pool = PromptPool::new(config).map_err(|e| SnapshotError::Line {
        line: 0,
        message: e.to_string(),
    })?;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SnapshotRecord =
            serde_json::from_str(&line).map_err(|e| SnapshotError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
        let result = match parsed.state.as_str() {
            "cold" => {
                if parsed.pool_stat.is_some() {
                    return Err(SnapshotError::Line {
                        line: line_no,
                        message: "cold record carries a pool statistic".into(),
                    });
                }
                pool.insert_cold(parsed.into_record(RecordState::Cold))
            }
            "scored" => pool.insert_scored(parsed.into_record(RecordState::Cold)),
            other => {
                return Err(SnapshotError::Line {
                    line: line_no,
                    message: format!("state {other:?} cannot be loaded into a pool"),
                });
            }
        };
        result.map_err(|e| SnapshotError::Line {
            line: line_no,
            message: e.to_string(),
        })?;
    }
    Ok(pool)
}

/// Write the archive in FIFO order using the shared record format.
pub fn write_archive_snapshot<W: Write>(archive: &Archive, mut out: W) -> std::io::Result<()> {
    for record in archive.iter() {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&SnapshotRecord::from_record(record))?
        )?;
    }
    Ok(())
}

/// Load an archive snapshot.
pub fn read_archive_snapshot<R: BufRead>(
    reader: R,
    size_threshold: usize,
    reinsert_batch_size: usize,
) -> Result<Archive, SnapshotError> {
    let mut archive = Archive::new(size_threshold, reinsert_batch_size);
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SnapshotRecord =
            serde_json::from_str(&line).map_err(|e| SnapshotError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
        if parsed.state != "archived" {
            return Err(SnapshotError::Line {
                line: line_no,
                message: format!("state {:?} cannot be loaded into an archive", parsed.state),
            });
        }
        if parsed.pool_stat.is_none() {
            return Err(SnapshotError::Line {
                line: line_no,
                message: "archived record lacks a pool statistic".into(),
            });
        }
        archive.push_loaded(parsed.into_record(RecordState::Archived));
    }
    Ok(archive)
}
