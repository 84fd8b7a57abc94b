//! Query-lifecycle machinery for RLVR training-data curation, plus a
//! desk-scale synthetic training loop that exercises it end to end.
//!
//! The pieces compose as a pipeline: a bounded [`pool`] with a cold queue
//! and frontier-focused boundary sampling feeds rollout groups whose
//! arithmetic lives in [`grouprl`]; trained records move through the
//! [`recycle`] archive and return with statistics refreshed over the
//! [`lineage`] graph; candidate augmentations and teacher verdicts cross
//! the strict text contracts in [`textproto`]; and [`sim`] drives the whole
//! loop with a synthetic item-response policy and a latency-bearing
//! asynchronous teacher.

pub mod grouprl;
pub mod lineage;
pub mod pool;
pub mod record;
pub mod recycle;
pub mod sim;
pub mod snapshot;
pub mod textproto;

pub use lineage::{AggregationMode, LineageGraph, RefreshReport};
pub use pool::{PartitionLayout, PartitionScheme, PoolConfig, PromptPool, SamplerKind};
pub use record::{QueryRecord, RecordId, RecordState};
pub use recycle::Archive;
