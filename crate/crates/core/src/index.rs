//! The index layer: every level above the storage layer, packed into
//! fixed-width entries of `M` sorted keys with a routing table per entry.
//!
//! Level `l` (1-based) holds the keys of live nodes with height > `l`, head
//! sentinel first. Each level is two contiguous arrays: `entries * M` keys
//! (the tail of the last entry padded with `u32::MAX`) and
//! `entries * (M + 1)` routing slots. Comparing a query against an entry
//! yields `r`, the number of entry keys ≤ query, and slot `r` says where to
//! go next:
//!
//! * `slot[0]` descends under the key just before the entry,
//! * `slot[r]` for `1 ≤ r < M` descends under `keys[r - 1]`,
//! * `slot[M]` moves to the next entry of the level, or descends under the
//!   last key if this is the level's last entry.
//!
//! Descending under a key at level 1 lands on that key's data node (the
//! interception). At higher levels it lands on the entry of the level below
//! that holds the key's successor, so the first comparison there already
//! covers the keys that follow it; if the query is below that successor,
//! `slot[0]` routes back down under the key itself.

use std::fmt::Write as _;

use crate::error::{PiError, Result};
use crate::exec::Executor;
use crate::storage::{self, DataNode, NodePtr, NodeRef, StorageLayer};

pub const DEFAULT_KEYS_PER_ENTRY: usize = 4;
pub const MAX_KEYS_PER_ENTRY: usize = 32;

const TAG_MASK: u64 = 0b11;
const TAG_NODE: u64 = 0b00;
const TAG_DOWN: u64 = 0b01;
const TAG_NEXT: u64 = 0b10;

/// One routing slot: a data-node pointer (8-byte aligned, tag 00), or an
/// entry index at the level below (tag 01) or at the same level (tag 10).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) struct Slot(u64);

impl Slot {
    fn node(p: NodePtr) -> Slot {
        let raw = p.0.as_ptr() as u64;
        debug_assert_eq!(raw & TAG_MASK, 0);
        Slot(raw | TAG_NODE)
    }

    fn down(entry: usize) -> Slot {
        Slot(((entry as u64) << 2) | TAG_DOWN)
    }

    fn next(entry: usize) -> Slot {
        Slot(((entry as u64) << 2) | TAG_NEXT)
    }

    #[inline(always)]
    pub(crate) fn decode(self) -> Step {
        match self.0 & TAG_MASK {
            TAG_NODE => {
                // SAFETY: node slots are only ever created from valid pointers.
                Step::Node(NodePtr(unsafe { std::ptr::NonNull::new_unchecked(self.0 as *mut DataNode) }))
            }
            TAG_DOWN => Step::Down((self.0 >> 2) as usize),
            _ => Step::Next((self.0 >> 2) as usize),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum Step {
    Next(usize),
    Down(usize),
    Node(NodePtr),
}

/// Public view of a routing-slot target.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Target {
    /// Entry index at the same level.
    NextEntry(usize),
    /// Entry index at the level below.
    DownEntry(usize),
    /// Storage-layer node (only from level 1).
    DataNode(NodeRef),
}

#[derive(Clone, Debug, Default)]
pub struct Level {
    len: usize,
    keys: Vec<u32>,
    slots: Vec<Slot>,
    /// Level 1 only: the data node of every key, in key order.
    nodes: Vec<NodePtr>,
}

impl Level {
    /// Number of real keys (sentinel included, padding excluded).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn keys(&self) -> &[u32] {
        &self.keys[..self.len]
    }

    pub fn entries(&self, m: usize) -> usize {
        self.keys.len() / m
    }

    #[inline(always)]
    pub(crate) fn entry_keys(&self, entry: usize, m: usize) -> &[u32] {
        &self.keys[entry * m..entry * m + m]
    }

    #[inline(always)]
    pub(crate) fn slot(&self, entry: usize, r: usize, m: usize) -> Slot {
        self.slots[entry * (m + 1) + r]
    }

    pub(crate) fn nodes(&self) -> &[NodePtr] {
        &self.nodes
    }

    pub(crate) fn entry_ptr(&self, entry: usize, m: usize) -> *const u32 {
        self.keys[entry * m..].as_ptr()
    }
}

pub struct IndexLayer {
    levels: Vec<Level>,
    m: usize,
    epoch: u64,
    head: NodePtr,
}

impl std::fmt::Debug for IndexLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IndexLayer")
            .field("levels", &self.levels.len())
            .field("keys_per_entry", &self.m)
            .field("entry_counts", &self.entry_counts())
            .finish()
    }
}

impl IndexLayer {
    /// Number of index levels (height minus the storage layer).
    pub fn index_levels(&self) -> usize {
        self.levels.len()
    }

    /// Total height including the storage layer.
    pub fn height(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn keys_per_entry(&self) -> usize {
        self.m
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Level `l`, 1-based.
    pub fn level(&self, l: usize) -> Option<&Level> {
        l.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub(crate) fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub(crate) fn head_ptr(&self) -> NodePtr {
        self.head
    }

    pub(crate) fn make_ref(&self, p: NodePtr) -> NodeRef {
        NodeRef { ptr: p, epoch: self.epoch }
    }

    pub fn entry_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.entries(self.m)).collect()
    }

    /// Bytes held by key arrays, routing tables and the level-1 node list.
    pub fn size_bytes(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.keys.len() * 4 + l.slots.len() * 8 + l.nodes.len() * 8)
            .sum()
    }

    /// Follows slot `r` of `entry` at level `l` (1-based).
    pub fn route(&self, l: usize, entry: usize, r: usize) -> Result<Target> {
        let lvl = self.level(l).ok_or_else(|| PiError::Corruption(format!("no index level {l}")))?;
        if r > self.m || entry >= lvl.entries(self.m) {
            return Err(PiError::Corruption(format!("slot {r} of entry {entry} at level {l} out of range")));
        }
        Ok(match lvl.slot(entry, r, self.m).decode() {
            Step::Next(e) => Target::NextEntry(e),
            Step::Down(e) => Target::DownEntry(e),
            Step::Node(p) => Target::DataNode(self.make_ref(p)),
        })
    }

    /// Text dump, one line per entry: level, entry index, keys, slot targets.
    /// Data-node targets are printed by key so dumps are comparable across
    /// builds over the same storage layer.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (li, lvl) in self.levels.iter().enumerate() {
            for e in 0..lvl.entries(self.m) {
                let _ = write!(out, "{} {} |", li + 1, e);
                for k in lvl.entry_keys(e, self.m) {
                    let _ = write!(out, " {k}");
                }
                out.push_str(" |");
                for r in 0..=self.m {
                    let _ = match lvl.slot(e, r, self.m).decode() {
                        Step::Next(n) => write!(out, " e{n}"),
                        Step::Down(n) => write!(out, " d{n}"),
                        // SAFETY: the index never outlives its storage epoch in a dump.
                        Step::Node(p) => write!(out, " n{}", unsafe { p.get() }.key().0),
                    };
                }
                out.push('\n');
            }
        }
        out
    }

    /// Builds the index layer over `storage` using `workers` contiguous
    /// segments scanned independently and concatenated level by level.
    /// Tombstoned nodes stay linked and are left out of every level.
    pub fn build(storage: &StorageLayer, m: usize, exec: &Executor, workers: usize) -> Result<IndexLayer> {
        check_m(m)?;
        let starts = split_by_walking(storage, workers.max(1));
        // SAFETY: compaction is off, so no node is freed.
        let segments = unsafe { scan_segments(storage, &starts, false, exec) };
        Ok(assemble(storage, segments, m, exec, workers))
    }

    /// Rebuilds from scratch, physically unlinking tombstoned nodes while
    /// scanning. Resets the storage update window and invalidates every
    /// `NodeRef` taken before the call.
    pub fn rebuild(storage: &mut StorageLayer, old: Option<&IndexLayer>, exec: &Executor, workers: usize) -> Result<IndexLayer> {
        let m = old.map_or(DEFAULT_KEYS_PER_ENTRY, |o| o.m);
        Self::rebuild_with(storage, old, m, exec, workers)
    }

    pub fn rebuild_with(
        storage: &mut StorageLayer,
        old: Option<&IndexLayer>,
        m: usize,
        exec: &Executor,
        workers: usize,
    ) -> Result<IndexLayer> {
        check_m(m)?;
        let workers = workers.max(1);
        let starts = match old {
            Some(o) if o.epoch == storage.epoch() => split_by_old_index(storage, o, workers),
            _ => split_by_walking(storage, workers),
        };
        // SAFETY: we hold &mut storage; segments are disjoint and every start
        // is live, so each unlinked node is reachable only from its own segment.
        let segments = unsafe { scan_segments(storage, &starts, true, exec) };
        let removed = segments.iter().map(|s| s.removed).sum();
        storage.finish_compaction(removed);
        Ok(assemble(storage, segments, m, exec, workers))
    }
}

fn check_m(m: usize) -> Result<()> {
    if !(2..=MAX_KEYS_PER_ENTRY).contains(&m) {
        return Err(PiError::Config(format!("keys per entry {m} not in 2..={MAX_KEYS_PER_ENTRY}")));
    }
    Ok(())
}

/// Segment starts: the head, then roughly every `n / workers`-th live node.
fn split_by_walking(storage: &StorageLayer, workers: usize) -> Vec<NodePtr> {
    let head = storage.head_node();
    let mut starts = vec![NodePtr::from_ref(head)];
    if workers <= 1 || storage.live_count() < workers * 2 {
        return starts;
    }
    let stride = storage.node_count().div_ceil(workers);
    let mut since = 0;
    for n in storage.iter() {
        since += 1;
        if since >= stride && !n.is_deleted() && starts.len() < workers {
            starts.push(NodePtr::from_ref(n));
            since = 0;
        }
    }
    starts
}

/// Segment starts drawn from the live level-1 nodes of the previous index,
/// avoiding a sequential pass over the storage layer.
fn split_by_old_index(storage: &StorageLayer, old: &IndexLayer, workers: usize) -> Vec<NodePtr> {
    let mut starts = vec![NodePtr::from_ref(storage.head_node())];
    let Some(l1) = old.levels.first() else { return starts };
    let nodes = &l1.nodes()[1..]; // skip the head
    if workers <= 1 || nodes.len() < workers * 2 {
        return starts;
    }
    let stride = nodes.len() / workers;
    for w in 1..workers {
        // SAFETY: old index epoch matches the storage epoch.
        if let Some(p) = nodes[w * stride..].iter().find(|p| !unsafe { p.get() }.is_deleted()) {
            if starts.last() != Some(p) {
                starts.push(*p);
            }
        }
    }
    starts.dedup();
    starts
}

#[derive(Default)]
struct LevelPart {
    keys: Vec<u32>,
    /// Level ≥ 2: position of the same key in this segment's part of the
    /// level below.
    down: Vec<u32>,
    /// Level 1: data node of each key.
    nodes: Vec<NodePtr>,
}

struct SegmentOut {
    levels: Vec<LevelPart>,
    removed: usize,
    /// Tallest live non-sentinel node in the segment.
    max_height: usize,
}

/// # Safety
/// With `compact`, the caller must hold exclusive access to `storage`, every
/// start after the first must be a live node, and no `NodeRef` to a
/// tombstoned node may be used afterwards.
unsafe fn scan_segments(storage: &StorageLayer, starts: &[NodePtr], compact: bool, exec: &Executor) -> Vec<SegmentOut> {
    let cap = storage.heights().max_height() as usize - 1;
    let bounds: Vec<(NodePtr, Option<NodePtr>)> =
        (0..starts.len()).map(|i| (starts[i], starts.get(i + 1).copied())).collect();
    exec.map(&bounds, |&(start, end)| {
        let mut out = SegmentOut {
            levels: (0..cap).map(|_| LevelPart::default()).collect(),
            removed: 0,
            max_height: 1,
        };
        let stop = end.map(|e| e.0.as_ptr() as usize);
        let mut cur = start.get();
        let is_head = cur.key().is_sentinel();
        if !cur.is_deleted() {
            record(&mut out, cur, cap, is_head);
        }
        loop {
            let Some(nxt) = cur.next_node() else { break };
            if Some(nxt.addr()) == stop {
                break;
            }
            if nxt.is_deleted() {
                if compact {
                    storage::unlink_next(cur);
                    out.removed += 1;
                } else {
                    cur = nxt;
                }
                continue;
            }
            record(&mut out, nxt, cap, false);
            cur = nxt;
        }
        out
    })
}

fn record(out: &mut SegmentOut, node: &DataNode, cap: usize, is_head: bool) {
    let h = node.height();
    if !is_head {
        out.max_height = out.max_height.max(h);
    }
    let key = node.key().0;
    for l in 1..h.min(cap + 1) {
        if l == 1 {
            let part = &mut out.levels[0];
            part.keys.push(key);
            part.nodes.push(NodePtr::from_ref(node));
        } else {
            let below = out.levels[l - 2].keys.len() as u32 - 1;
            let part = &mut out.levels[l - 1];
            part.keys.push(key);
            part.down.push(below);
        }
    }
}

fn assemble(storage: &StorageLayer, segments: Vec<SegmentOut>, m: usize, exec: &Executor, workers: usize) -> IndexLayer {
    let top = segments.iter().map(|s| s.max_height).max().unwrap_or(1);
    let n_levels = top.saturating_sub(1);

    // Concatenate level by level, rebasing down positions by the length of
    // earlier segments' parts of the level below.
    let mut keys: Vec<Vec<u32>> = vec![Vec::new(); n_levels];
    let mut downs: Vec<Vec<u32>> = vec![Vec::new(); n_levels];
    let mut nodes: Vec<NodePtr> = Vec::new();
    for seg in &segments {
        for l in 0..n_levels {
            let part = &seg.levels[l];
            if l == 0 {
                nodes.extend_from_slice(&part.nodes);
            } else {
                let base = keys[l - 1].len() as u32 - seg.levels[l - 1].keys.len() as u32;
                downs[l].extend(part.down.iter().map(|d| d + base));
            }
            keys[l].extend_from_slice(&part.keys);
        }
    }

    let mut levels = Vec::with_capacity(n_levels);
    for l in 0..n_levels {
        let below_len = if l == 0 { 0 } else { keys[l - 1].len() };
        levels.push(pack_level(&keys[l], &downs[l], &nodes, l == 0, below_len, m, exec, workers));
    }
    IndexLayer { levels, m, epoch: storage.epoch(), head: NodePtr::from_ref(storage.head_node()) }
}

#[allow(clippy::too_many_arguments)]
fn pack_level(
    keys: &[u32],
    down: &[u32],
    nodes: &[NodePtr],
    bottom: bool,
    below_len: usize,
    m: usize,
    exec: &Executor,
    workers: usize,
) -> Level {
    let n = keys.len();
    let entries = n.div_ceil(m);
    let descend = |p: usize| -> Slot {
        if bottom {
            Slot::node(nodes[p])
        } else {
            let q = down[p] as usize;
            let start = if q + 1 < below_len { q + 1 } else { q };
            Slot::down(start / m)
        }
    };
    let fill = |range: &(usize, usize)| -> (Vec<u32>, Vec<Slot>) {
        let mut ks = Vec::with_capacity((range.1 - range.0) * m);
        let mut ss = Vec::with_capacity((range.1 - range.0) * (m + 1));
        for e in range.0..range.1 {
            let base = e * m;
            ks.extend((0..m).map(|i| keys.get(base + i).copied().unwrap_or(u32::MAX)));
            ss.push(if e == 0 { descend(0) } else { descend(base - 1) });
            ss.extend((1..m).map(|r| descend((base + r - 1).min(n - 1))));
            ss.push(if e + 1 < entries { Slot::next(e + 1) } else { descend(n - 1) });
        }
        (ks, ss)
    };
    let chunks = if entries >= 4096 { workers.max(1) } else { 1 };
    let per = entries.div_ceil(chunks).max(1);
    let ranges: Vec<(usize, usize)> =
        (0..chunks).map(|c| (c * per, ((c + 1) * per).min(entries))).filter(|r| r.0 < r.1).collect();
    let parts = exec.map(&ranges, fill);
    let mut level = Level {
        len: n,
        keys: Vec::with_capacity(entries * m),
        slots: Vec::with_capacity(entries * (m + 1)),
        nodes: if bottom { nodes.to_vec() } else { Vec::new() },
    };
    for (ks, ss) in parts {
        level.keys.extend(ks);
        level.slots.extend(ss);
    }
    level
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::StorageConfig;
    use crate::types::{Key, ValueHandle};

    fn storage(keys: &[u32], p: f64) -> StorageLayer {
        let pairs: Vec<_> = keys.iter().map(|&k| (Key(k), ValueHandle(k as u64))).collect();
        StorageLayer::bulk_load(&pairs, &StorageConfig { elevation_prob: p, ..Default::default() }).unwrap()
    }

    #[test]
    fn flat_storage_has_no_index_levels() {
        let s = storage(&(1..100).collect::<Vec<_>>(), 0.0);
        let ix = IndexLayer::build(&s, 4, &Executor::sequential(), 1).unwrap();
        assert_eq!(ix.height(), 1);
        assert_eq!(ix.size_bytes(), 0);
    }

    #[test]
    fn levels_are_nested_subsequences() {
        let keys: Vec<u32> = (1..20_000).map(|k| k * 7).collect();
        let s = storage(&keys, 0.25);
        let ix = IndexLayer::build(&s, 4, &Executor::sequential(), 1).unwrap();
        let live: Vec<u32> = std::iter::once(0).chain(keys.iter().copied()).collect();
        let mut below: &[u32] = &live;
        for l in 1..=ix.index_levels() {
            let lvl = ix.level(l).unwrap();
            assert_eq!(lvl.keys()[0], 0);
            assert!(lvl.keys().windows(2).all(|w| w[0] < w[1]));
            let mut it = below.iter();
            assert!(lvl.keys().iter().all(|k| it.any(|b| b == k)), "level {l} not a subsequence");
            below = lvl.keys();
        }
        // the height > l rule, checked directly against the storage layer
        let l1: Vec<u32> = s.iter().filter(|n| n.height() > 1).map(|n| n.key().0).collect();
        assert_eq!(&ix.level(1).unwrap().keys()[1..], &l1[..]);
    }

    #[test]
    fn routing_slots_follow_layout() {
        let keys: Vec<u32> = (1..5000).collect();
        let s = storage(&keys, 0.25);
        let ix = IndexLayer::build(&s, 4, &Executor::sequential(), 1).unwrap();
        let l1 = ix.level(1).unwrap();
        let entries = l1.entries(4);
        for e in 0..entries {
            match ix.route(1, e, 4).unwrap() {
                Target::NextEntry(n) => assert_eq!(n, e + 1),
                Target::DataNode(_) => assert_eq!(e, entries - 1),
                Target::DownEntry(_) => panic!("level 1 never descends to an entry"),
            }
            for r in 1..4 {
                let Target::DataNode(nr) = ix.route(1, e, r).unwrap() else { panic!() };
                let pos = (e * 4 + r - 1).min(l1.len() - 1);
                assert_eq!(s.node(nr).unwrap().key().0, l1.keys()[pos]);
            }
        }
        assert!(ix.route(1, 0, 5).is_err());
        assert!(ix.route(99, 0, 0).is_err());
    }

    #[test]
    fn parallel_build_matches_sequential() {
        let keys: Vec<u32> = (1..50_000).map(|k| k * 3 + 1).collect();
        let s = storage(&keys, 0.25);
        let seq = IndexLayer::build(&s, 4, &Executor::sequential(), 1).unwrap().dump();
        let pool = Executor::with_threads(4).unwrap();
        for w in [2, 3, 8] {
            assert_eq!(IndexLayer::build(&s, 4, &pool, w).unwrap().dump(), seq, "workers={w}");
        }
    }

    #[test]
    fn rebuild_compacts_tombstones() {
        let keys: Vec<u32> = (1..3000).collect();
        let mut s = storage(&keys, 0.25);
        let ix = IndexLayer::build(&s, 4, &Executor::sequential(), 1).unwrap();
        let victims: Vec<NodeRef> = s.iter().filter(|n| n.key().0 % 3 == 0).map(|n| s.make_ref(n)).collect();
        for v in &victims {
            s.tombstone(*v).unwrap();
        }
        let old_epoch = s.epoch();
        let ix2 = IndexLayer::rebuild(&mut s, Some(&ix), &Executor::with_threads(2).unwrap(), 4).unwrap();
        assert_ne!(s.epoch(), old_epoch);
        assert_eq!(ix2.epoch(), s.epoch());
        assert!(s.iter().all(|n| !n.is_deleted()));
        assert_eq!(s.node_count(), keys.len() - victims.len());
        assert_eq!(s.update_count(), 0);
        assert_eq!(s.base_size(), s.live_count());
        assert!(matches!(s.node(victims[0]), Err(PiError::StaleNode)));
        s.validate().unwrap();
    }
}
