//! A batched, latch-free parallel index built on a two-layer skip list.
//!
//! Queries arrive in key-sorted batches. Workers traverse a read-only index
//! layer of packed, vector-compared entries to find each query's
//! *interception* in the storage layer, hand boundary queries to their right
//! neighbour so that every storage segment has exactly one owner, and then
//! execute against the linked storage layer without latches. Inserts and
//! deletes leave the index layer untouched until the update count crosses a
//! threshold, at which point the whole index layer is rebuilt.

pub mod error;
pub mod exec;
pub mod index;
pub mod io;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod search;
pub mod storage;
pub mod types;
pub mod workload;

pub use error::{PiError, Result};
pub use exec::Executor;
pub use index::IndexLayer;
pub use partition::{create_partitions, PartitionConfig, PartitionSet};
pub use pipeline::{BatchOptions, BatchReport, IndexConfig, PiIndex};
pub use storage::{StorageConfig, StorageLayer};
pub use workload::{OracleIndex, WorkloadGen, WorkloadSpec};
pub use types::{make_query_set, Key, Outcome, Query, QueryResult, QuerySet, QueryType, ValueHandle};
