//! Batch query processing.
//!
//! A batch runs in bulk-synchronous phases:
//!
//! 1. **partition** the sorted query set into contiguous per-worker slices;
//! 2. **traverse** the index layer in parallel to find every interception;
//! 3. **redistribute**: in worker-id order, each worker hands its trailing
//!    queries that share the next worker's first interception to that worker,
//!    so afterwards no interception (and no storage segment behind one) is
//!    served by two workers;
//! 4. **execute** in parallel against the storage layer with no latches;
//! 5. merge results by arrival order and rebuild the index layer if the
//!    update threshold was crossed.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use crate::error::{PiError, Result};
use crate::exec::Executor;
use crate::index::{IndexLayer, DEFAULT_KEYS_PER_ENTRY};
use crate::search::{self, SearchProbe, VisitCounts};
use crate::storage::{self, AccessTracker, DataNode, NoTracking, NodeRef, StorageConfig, StorageLayer, UpdateDelta};
use crate::types::{Key, Outcome, Query, QueryResult, QuerySet, QueryType, ValueHandle};

pub const DEFAULT_GROUP_SIZE: usize = 16;

/// The queries one worker owns for a batch, with their interceptions once
/// traversal has run.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerBatch {
    pub worker_id: usize,
    pub queries: Vec<Query>,
    pub interceptions: Vec<NodeRef>,
}

impl WorkerBatch {
    pub fn first_interception(&self) -> Option<NodeRef> {
        self.interceptions.first().copied()
    }
}

/// Contiguous slices: the first `len % n` workers get one extra query.
pub fn partition(qs: &QuerySet, n_workers: usize) -> Vec<WorkerBatch> {
    let n = n_workers.max(1);
    let (base, extra) = (qs.len() / n, qs.len() % n);
    let mut rest = qs.as_slice();
    (0..n)
        .map(|w| {
            let take = base + usize::from(w < extra);
            let (mine, tail) = rest.split_at(take);
            rest = tail;
            WorkerBatch { worker_id: w + 1, queries: mine.to_vec(), interceptions: Vec::new() }
        })
        .collect()
}

/// Fills in interceptions for every batch.
pub fn traverse(index: &IndexLayer, batches: &mut [WorkerBatch], group_size: usize, exec: &Executor) -> Result<()> {
    let outs = exec.map_mut(batches, |b| -> Result<()> {
        let keys: Vec<Key> = b.queries.iter().map(|q| q.key).collect();
        let mut ptrs = Vec::with_capacity(keys.len());
        search::traverse_group_into(index, &keys, group_size, &mut search::NoProbe, &mut ptrs)?;
        b.interceptions = ptrs.into_iter().map(|p| index.make_ref(p)).collect();
        Ok(())
    });
    outs.into_iter().collect()
}

/// First interception of the nearest non-empty worker right of `i`; empty
/// workers forward their neighbour's key.
fn next_first(batches: &[WorkerBatch], i: usize) -> Option<NodeRef> {
    batches[i + 1..].iter().find_map(|b| b.first_interception())
}

fn prepend(batch: &mut WorkerBatch, mut queries: Vec<Query>, mut icpts: Vec<NodeRef>) {
    queries.append(&mut batch.queries);
    icpts.append(&mut batch.interceptions);
    batch.queries = queries;
    batch.interceptions = icpts;
}

/// Interception adjustment for point queries, cascading in worker-id order.
/// Interceptions are compared by node identity.
pub fn redistribute(mut batches: Vec<WorkerBatch>) -> Vec<WorkerBatch> {
    for i in 0..batches.len().saturating_sub(1) {
        let Some(target) = next_first(&batches, i) else { break };
        let b = &batches[i];
        let keep = b.interceptions.len() - b.interceptions.iter().rev().take_while(|&&ic| ic == target).count();
        if keep == b.interceptions.len() {
            continue;
        }
        let b = &mut batches[i];
        let moved_q = b.queries.split_off(keep);
        let moved_i = b.interceptions.split_off(keep);
        prepend(&mut batches[i + 1], moved_q, moved_i);
    }
    batches
}

/// Interception adjustment for range queries: any range reaching the next
/// worker's first interception key `k` is split into `[lo, k)`, kept, and
/// `[k, hi]`, handed right. Runs in worker-id order so a range spanning
/// several workers is split once per boundary.
pub fn redistribute_ranges(mut batches: Vec<WorkerBatch>, storage: &StorageLayer) -> Result<Vec<WorkerBatch>> {
    for i in 0..batches.len().saturating_sub(1) {
        let Some(target) = next_first(&batches, i) else { break };
        let boundary = storage.node(target)?.key();
        let b = &mut batches[i];
        let mut kept_q = Vec::with_capacity(b.queries.len());
        let mut kept_i = Vec::with_capacity(b.queries.len());
        let mut moved_q = Vec::new();
        for (q, ic) in b.queries.drain(..).zip(b.interceptions.drain(..)) {
            let upper = q.upper.ok_or(PiError::InvalidQuery { seq: q.seq, reason: "range without upper bound" })?;
            if upper < boundary {
                kept_q.push(q);
                kept_i.push(ic);
                continue;
            }
            if q.key < boundary {
                kept_q.push(Query { upper: Some(Key(boundary.0 - 1)), ..q });
                kept_i.push(ic);
            }
            moved_q.push(Query { key: q.key.max(boundary), ..q });
        }
        b.queries = kept_q;
        b.interceptions = kept_i;
        let moved_i = vec![target; moved_q.len()];
        prepend(&mut batches[i + 1], moved_q, moved_i);
    }
    Ok(batches)
}

/// Node addresses whose mutable state a worker read or wrote.
#[derive(Clone, Debug, Default)]
pub struct AccessLog {
    reads: Vec<usize>,
    writes: Vec<usize>,
}

impl AccessTracker for AccessLog {
    fn read(&mut self, node: &DataNode) {
        self.reads.push(node.addr());
    }

    fn write(&mut self, node: &DataNode) {
        self.writes.push(node.addr());
    }
}

/// Cross-worker access conflicts observed during one execution phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OwnershipReport {
    pub nodes_written: usize,
    /// Nodes written by more than one worker.
    pub multi_writer_nodes: usize,
    /// Nodes read by one worker and written by another.
    pub read_write_overlaps: usize,
}

impl OwnershipReport {
    pub fn is_clean(&self) -> bool {
        self.multi_writer_nodes == 0 && self.read_write_overlaps == 0
    }

    pub fn merge(&mut self, o: OwnershipReport) {
        self.nodes_written += o.nodes_written;
        self.multi_writer_nodes += o.multi_writer_nodes;
        self.read_write_overlaps += o.read_write_overlaps;
    }
}

pub fn check_ownership(logs: &[AccessLog]) -> OwnershipReport {
    let mut writer: HashMap<usize, usize> = HashMap::new();
    let mut multi = std::collections::HashSet::new();
    for (w, log) in logs.iter().enumerate() {
        for &a in &log.writes {
            match writer.get(&a) {
                Some(&o) if o != w => {
                    multi.insert(a);
                }
                Some(_) => {}
                None => {
                    writer.insert(a, w);
                }
            }
        }
    }
    let mut overlaps = std::collections::HashSet::new();
    for (w, log) in logs.iter().enumerate() {
        for a in &log.reads {
            if writer.get(a).is_some_and(|&o| o != w) {
                overlaps.insert(*a);
            }
        }
    }
    OwnershipReport { nodes_written: writer.len(), multi_writer_nodes: multi.len(), read_write_overlaps: overlaps.len() }
}

fn execute_shared<T: AccessTracker>(
    batch: &WorkerBatch,
    storage: &StorageLayer,
    t: &mut T,
) -> Result<(Vec<QueryResult>, UpdateDelta)> {
    let mut results = Vec::with_capacity(batch.queries.len());
    let mut delta = UpdateDelta::default();
    let salt = storage.insert_salt();
    for (q, &ic) in batch.queries.iter().zip(&batch.interceptions) {
        let start = storage.node(ic)?;
        if start.key() > q.key {
            return Err(PiError::Corruption(format!("interception {:?} above query {:?}", start.key(), q.key)));
        }
        let (node, _) = storage::walk(start, q.key, t);
        let hit = node.key() == q.key && !q.key.is_sentinel();
        let outcome = match q.qtype {
            QueryType::Search if hit && !node.is_deleted() => Outcome::Found(node.value()),
            QueryType::Search => Outcome::NotFound,
            QueryType::Insert => {
                let value = q.value.ok_or(PiError::InvalidQuery { seq: q.seq, reason: "insert without value" })?;
                if hit {
                    t.write(node);
                    node.set_value(value);
                    if node.set_deleted(false) {
                        delta.revived += 1;
                    }
                    Outcome::Updated
                } else {
                    t.write(node);
                    let fresh = storage::link_after(node, q.key, value, storage.heights().draw(q.key, salt));
                    t.write(fresh);
                    delta.inserted += 1;
                    Outcome::Inserted
                }
            }
            QueryType::Delete if hit && !node.is_deleted() => {
                t.write(node);
                node.set_deleted(true);
                delta.tombstoned += 1;
                Outcome::Deleted
            }
            QueryType::Delete => Outcome::NotFound,
            QueryType::RangeSearch => {
                return Err(PiError::InvalidQuery { seq: q.seq, reason: "range query in point batch" });
            }
        };
        results.push(QueryResult { seq: q.seq, outcome });
    }
    Ok((results, delta))
}

/// Executes one worker's batch on its own (no concurrent workers).
pub fn execute(batch: &WorkerBatch, storage: &mut StorageLayer) -> Result<Vec<QueryResult>> {
    let (results, delta) = execute_shared(batch, storage, &mut NoTracking)?;
    storage.apply(delta);
    Ok(results)
}

/// Live pairs in `[q.key, q.upper]`, scanning from the interception.
fn scan_range<T: AccessTracker>(
    start: &DataNode,
    lo: Key,
    hi: Key,
    t: &mut T,
) -> Vec<(Key, ValueHandle)> {
    let (pred, _) = storage::walk(start, lo, t);
    let mut out = Vec::new();
    let mut cur = if pred.key() >= lo && !pred.key().is_sentinel() { Some(pred) } else { pred.next_node() };
    while let Some(n) = cur {
        if n.key() > hi {
            break;
        }
        t.read(n);
        if !n.is_deleted() {
            out.push((n.key(), n.value()));
        }
        cur = n.next_node();
    }
    out
}

fn execute_ranges_shared<T: AccessTracker>(
    batch: &WorkerBatch,
    storage: &StorageLayer,
    t: &mut T,
) -> Result<Vec<(u64, Vec<(Key, ValueHandle)>)>> {
    batch
        .queries
        .iter()
        .zip(&batch.interceptions)
        .map(|(q, &ic)| {
            let start = storage.node(ic)?;
            let hi = q.upper.ok_or(PiError::InvalidQuery { seq: q.seq, reason: "range without upper bound" })?;
            Ok((q.seq, scan_range(start, q.key, hi, t)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexConfig {
    pub storage: StorageConfig,
    pub keys_per_entry: usize,
    pub group_size: usize,
    /// Rebuild at the end of a batch once the update threshold is crossed.
    pub auto_rebuild: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            storage: StorageConfig::default(),
            keys_per_entry: DEFAULT_KEYS_PER_ENTRY,
            group_size: DEFAULT_GROUP_SIZE,
            auto_rebuild: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BatchOptions {
    /// Log every node access during execution and check worker ownership.
    pub track_ownership: bool,
}

#[derive(Clone, Debug, Default)]
pub struct BatchReport {
    /// One result per query, ordered by `seq`.
    pub results: Vec<QueryResult>,
    pub ownership: Option<OwnershipReport>,
    /// Duration of the rebuild triggered by this batch, if any.
    pub rebuild: Option<Duration>,
    /// Queries that changed worker during redistribution.
    pub handed_over: usize,
}

/// A storage layer together with the index layer built over it.
pub struct PiIndex {
    storage: StorageLayer,
    index: IndexLayer,
    cfg: IndexConfig,
    rebuilds: usize,
    rebuild_time: Duration,
}

impl std::fmt::Debug for PiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PiIndex")
            .field("live", &self.storage.live_count())
            .field("height", &self.index.height())
            .field("rebuilds", &self.rebuilds)
            .finish()
    }
}

impl PiIndex {
    pub fn load(pairs: &[(Key, ValueHandle)], cfg: IndexConfig, exec: &Executor, workers: usize) -> Result<PiIndex> {
        let storage = StorageLayer::bulk_load(pairs, &cfg.storage)?;
        let index = IndexLayer::build(&storage, cfg.keys_per_entry, exec, workers)?;
        Ok(PiIndex { storage, index, cfg, rebuilds: 0, rebuild_time: Duration::ZERO })
    }

    pub fn storage(&self) -> &StorageLayer {
        &self.storage
    }

    pub fn index(&self) -> &IndexLayer {
        &self.index
    }

    pub fn config(&self) -> &IndexConfig {
        &self.cfg
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn rebuild_time(&self) -> Duration {
        self.rebuild_time
    }

    pub fn live_pairs(&self) -> Vec<(Key, ValueHandle)> {
        self.storage.live_pairs()
    }

    /// Rebuilds the index layer now, compacting tombstones.
    pub fn rebuild(&mut self, exec: &Executor, workers: usize) -> Result<Duration> {
        let t0 = Instant::now();
        let fresh = IndexLayer::rebuild_with(&mut self.storage, Some(&self.index), self.cfg.keys_per_entry, exec, workers)?;
        self.index = fresh;
        let dt = t0.elapsed();
        self.rebuilds += 1;
        self.rebuild_time += dt;
        Ok(dt)
    }

    /// Single point lookup outside the batch machinery.
    pub fn search(&self, key: Key) -> Result<Option<ValueHandle>> {
        self.probe_search(key, &mut search::NoProbe)
    }

    /// Point lookup that reports entry visits and storage steps to `probe`.
    pub fn probe_search<P: SearchProbe>(&self, key: Key, probe: &mut P) -> Result<Option<ValueHandle>> {
        let ic = search::traverse_vector_probed(&self.index, key, probe)?;
        let (node, steps) = storage::walk(self.storage.node(ic)?, key, &mut NoTracking);
        for _ in 0..steps {
            probe.storage_step();
        }
        Ok((node.key() == key && !key.is_sentinel() && !node.is_deleted()).then(|| node.value()))
    }

    /// Mean per-search visit counts over `keys`.
    pub fn visit_counts(&self, keys: &[Key]) -> Result<VisitCounts> {
        let mut c = VisitCounts::default();
        for &k in keys {
            self.probe_search(k, &mut c)?;
            c.searches += 1;
        }
        Ok(c)
    }

    fn check_epochs(&self) -> Result<()> {
        if self.index.epoch() != self.storage.epoch() {
            return Err(PiError::Corruption("index layer built over a different storage epoch".into()));
        }
        Ok(())
    }

    pub fn process_batch(&mut self, qs: &QuerySet, n_workers: usize, exec: &Executor) -> Result<BatchReport> {
        self.process_batch_with(qs, n_workers, exec, BatchOptions::default())
    }

    pub fn process_batch_with(
        &mut self,
        qs: &QuerySet,
        n_workers: usize,
        exec: &Executor,
        opts: BatchOptions,
    ) -> Result<BatchReport> {
        if let Some(q) = qs.iter().find(|q| !q.qtype.is_point()) {
            return Err(PiError::InvalidQuery { seq: q.seq, reason: "range query in point batch" });
        }
        self.check_epochs()?;
        let mut batches = partition(qs, n_workers);
        traverse(&self.index, &mut batches, self.cfg.group_size, exec)?;
        let before: Vec<usize> = batches.iter().map(|b| b.queries.len()).collect();
        let batches = redistribute(batches);
        let handed_over = handed_over(&before, &batches);

        let storage = &self.storage;
        let outs = exec.map(&batches, |b| {
            if opts.track_ownership {
                let mut log = AccessLog::default();
                execute_shared(b, storage, &mut log).map(|(r, d)| (r, d, Some(log)))
            } else {
                execute_shared(b, storage, &mut NoTracking).map(|(r, d)| (r, d, None))
            }
        });

        let mut results = Vec::with_capacity(qs.len());
        let mut delta = UpdateDelta::default();
        let mut logs = Vec::new();
        let mut first_err = None;
        for out in outs {
            match out {
                Ok((r, d, log)) => {
                    results.extend(r);
                    delta.merge(d);
                    logs.extend(log);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        // Structural changes that did happen must be accounted for even if
        // another worker failed.
        self.storage.apply(delta);
        if let Some(e) = first_err {
            return Err(e);
        }
        results.sort_unstable_by_key(|r| r.seq);

        let rebuild = if self.cfg.auto_rebuild && self.storage.needs_rebuild() {
            Some(self.rebuild(exec, n_workers)?)
        } else {
            None
        };
        Ok(BatchReport {
            results,
            ownership: opts.track_ownership.then(|| check_ownership(&logs)),
            rebuild,
            handed_over,
        })
    }

    /// Range queries: split at worker boundaries, scanned per worker, and
    /// stitched back together per original query in key order.
    pub fn process_range_batch(&self, ranges: &QuerySet, n_workers: usize, exec: &Executor) -> Result<Vec<QueryResult>> {
        if let Some(q) = ranges.iter().find(|q| q.qtype != QueryType::RangeSearch) {
            return Err(PiError::InvalidQuery { seq: q.seq, reason: "point query in range batch" });
        }
        self.check_epochs()?;
        let mut batches = partition(ranges, n_workers);
        traverse(&self.index, &mut batches, self.cfg.group_size, exec)?;
        let batches = redistribute_ranges(batches, &self.storage)?;
        let storage = &self.storage;
        let outs = exec.map(&batches, |b| execute_ranges_shared(b, storage, &mut NoTracking));

        let mut merged: HashMap<u64, Vec<(Key, ValueHandle)>> = ranges.iter().map(|q| (q.seq, Vec::new())).collect();
        for out in outs {
            for (seq, mut part) in out? {
                merged.get_mut(&seq).expect("range part of an unknown query").append(&mut part);
            }
        }
        let mut results: Vec<QueryResult> =
            merged.into_iter().map(|(seq, v)| QueryResult { seq, outcome: Outcome::Range(v) }).collect();
        results.sort_unstable_by_key(|r| r.seq);
        Ok(results)
    }
}

fn handed_over(before: &[usize], after: &[WorkerBatch]) -> usize {
    // What crosses boundary i is everything left of it that is no longer there.
    let mut moved = 0;
    let mut carried = 0i64;
    for (b, a) in before.iter().zip(after) {
        carried += *b as i64 - a.queries.len() as i64;
        moved += carried.max(0) as usize;
    }
    moved
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::make_query_set;

    fn sizes(b: &[WorkerBatch]) -> Vec<usize> {
        b.iter().map(|b| b.queries.len()).collect()
    }

    fn qs(keys: &[u32]) -> QuerySet {
        make_query_set(keys.iter().enumerate().map(|(i, &k)| Query::search(k, i as u64)).collect()).unwrap()
    }

    fn index_over(keys: &[u32]) -> PiIndex {
        let pairs: Vec<_> = keys.iter().map(|&k| (Key(k), ValueHandle(k as u64))).collect();
        PiIndex::load(&pairs, IndexConfig::default(), &Executor::sequential(), 1).unwrap()
    }

    #[test]
    fn partition_sizes() {
        let q8 = qs(&(1..=8).collect::<Vec<_>>());
        assert_eq!(sizes(&partition(&q8, 4)), [2, 2, 2, 2]);
        let q7 = qs(&(1..=7).collect::<Vec<_>>());
        assert_eq!(sizes(&partition(&q7, 4)), [2, 2, 2, 1]);
        assert_eq!(sizes(&partition(&qs(&[1, 2]), 4)), [1, 1, 0, 0]);
        let all: Vec<Query> = partition(&q7, 3).into_iter().flat_map(|b| b.queries).collect();
        assert_eq!(all, q7.as_slice());
    }

    #[test]
    fn redistribute_moves_shared_tail() {
        let ix = index_over(&(1..200).collect::<Vec<_>>());
        let s = ix.storage();
        let node = |k: u32| s.make_ref(s.iter().find(|n| n.key().0 == k).unwrap());
        let (a, b, c) = (node(3), node(7), node(12));
        let mk = |id, ics: Vec<NodeRef>| WorkerBatch {
            worker_id: id,
            queries: ics.iter().enumerate().map(|(i, _)| Query::search(1, i as u64)).collect(),
            interceptions: ics,
        };
        // distinct across the boundary: unchanged
        let out = redistribute(vec![mk(1, vec![a, a]), mk(2, vec![b])]);
        assert_eq!(sizes(&out), [2, 1]);
        // worker 1 ends with the next worker's first interception twice
        let out = redistribute(vec![mk(1, vec![a, b, b]), mk(2, vec![b, c])]);
        assert_eq!(sizes(&out), [1, 4]);
        assert_eq!(out[1].interceptions, [b, b, b, c]);
        // one interception shared by everyone cascades to the last worker
        let out = redistribute(vec![mk(1, vec![a; 3]), mk(2, vec![a; 2]), mk(3, vec![a; 3]), mk(4, vec![a])]);
        assert_eq!(sizes(&out), [0, 0, 0, 9]);
        // empty workers forward their neighbour's key
        let out = redistribute(vec![mk(1, vec![a, c]), mk(2, vec![]), mk(3, vec![c])]);
        assert_eq!(sizes(&out), [1, 0, 2]);
    }

    #[test]
    fn execute_sequence_in_one_batch() {
        let mut ix = index_over(&[]);
        let set = make_query_set(vec![Query::insert(10, 5, 0), Query::delete(10, 1), Query::search(10, 2)]).unwrap();
        let r = ix.process_batch(&set, 1, &Executor::sequential()).unwrap();
        let outs: Vec<Outcome> = r.results.into_iter().map(|r| r.outcome).collect();
        assert_eq!(outs, [Outcome::Inserted, Outcome::Deleted, Outcome::NotFound]);
    }

    #[test]
    fn search_on_empty_index() {
        let mut ix = index_over(&[]);
        let r = ix.process_batch(&qs(&[5]), 2, &Executor::sequential()).unwrap();
        assert_eq!(r.results[0].outcome, Outcome::NotFound);
    }

    #[test]
    fn insert_existing_is_update() {
        let mut ix = index_over(&[5, 6, 7]);
        let set = make_query_set(vec![Query::insert(6, 99, 0)]).unwrap();
        let r = ix.process_batch(&set, 1, &Executor::sequential()).unwrap();
        assert_eq!(r.results[0].outcome, Outcome::Updated);
        assert_eq!(ix.storage().live_count(), 3);
        assert_eq!(ix.storage().update_count(), 0);
        assert_eq!(ix.search(Key(6)).unwrap(), Some(ValueHandle(99)));
    }

    #[test]
    fn single_worker_execute() {
        let mut ix = index_over(&[2, 4, 6]);
        let set = make_query_set(vec![Query::insert(5, 1, 0), Query::search(4, 1)]).unwrap();
        let mut b = partition(&set, 1);
        traverse(ix.index(), &mut b, 4, &Executor::sequential()).unwrap();
        let r = execute(&b[0], &mut ix.storage).unwrap();
        assert_eq!(r[0].outcome, Outcome::Found(ValueHandle(4)));
        assert_eq!(r[1].outcome, Outcome::Inserted);
        assert_eq!(ix.storage().update_count(), 1);
    }

    #[test]
    fn rejects_mixed_batches() {
        let mut ix = index_over(&[2, 4]);
        let set = make_query_set(vec![Query::range(1, 3, 0)]).unwrap();
        assert!(ix.process_batch(&set, 1, &Executor::sequential()).is_err());
        assert!(ix.process_range_batch(&qs(&[2]), 1, &Executor::sequential()).is_err());
    }

    #[test]
    fn range_edge_cases() {
        let ix = index_over(&(1..=100).map(|k| k * 10).collect::<Vec<_>>());
        let set = make_query_set(vec![Query::range(11, 19, 0), Query::range(50, 50, 1), Query::range(0, 25, 2)]).unwrap();
        let r = ix.process_range_batch(&set, 3, &Executor::sequential()).unwrap();
        assert_eq!(r[0].outcome, Outcome::Range(vec![]));
        assert_eq!(r[1].outcome, Outcome::Range(vec![(Key(50), ValueHandle(50))]));
        assert_eq!(r[2].outcome, Outcome::Range(vec![(Key(10), ValueHandle(10)), (Key(20), ValueHandle(20))]));
    }

    #[test]
    fn handed_over_counts_transfers() {
        let mk = |n| WorkerBatch { worker_id: 0, queries: vec![Query::search(1, 0); n], interceptions: vec![] };
        assert_eq!(handed_over(&[2, 2, 2], &[mk(1), mk(3), mk(2)]), 1);
        assert_eq!(handed_over(&[3, 2, 3, 1], &[mk(0), mk(0), mk(0), mk(9)]), 3 + 5 + 8);
    }
}
