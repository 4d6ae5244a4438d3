//! The storage layer: a key-sorted singly linked list of data nodes behind a
//! permanent head sentinel.
//!
//! Mutable node state (value, tombstone flag, successor link) lives in atomics
//! so that batch workers can mutate disjoint stretches of the list through a
//! shared reference without latches. Nodes are only ever freed through
//! `&mut StorageLayer` (compaction during rebuild, or drop), so a shared borrow
//! of the layer keeps every node reachable from it alive.

use std::ptr::{self, NonNull};
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU64, Ordering};

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::error::{PiError, Result};
use crate::types::{Key, ValueHandle};

pub const DEFAULT_ELEVATION_PROB: f64 = 0.25;
pub const DEFAULT_REBUILD_RATIO: f64 = 0.15;
/// Hard ceiling on tower height regardless of capacity.
pub const HEIGHT_LIMIT: u8 = 32;

pub struct DataNode {
    key: Key,
    height: u8,
    deleted: AtomicBool,
    value: AtomicU64,
    next: AtomicPtr<DataNode>,
}

impl DataNode {
    fn boxed(key: Key, value: ValueHandle, height: u8) -> Box<DataNode> {
        Box::new(DataNode {
            key,
            height,
            deleted: AtomicBool::new(false),
            value: AtomicU64::new(value.0),
            next: AtomicPtr::new(ptr::null_mut()),
        })
    }

    #[inline]
    pub fn key(&self) -> Key {
        self.key
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height as usize
    }

    #[inline]
    pub fn value(&self) -> ValueHandle {
        ValueHandle(self.value.load(Ordering::Relaxed))
    }

    #[inline]
    pub fn is_deleted(&self) -> bool {
        self.deleted.load(Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn next_node(&self) -> Option<&DataNode> {
        // SAFETY: successors are live for as long as the layer is borrowed.
        unsafe { self.next.load(Ordering::Acquire).as_ref() }
    }

    #[inline]
    pub(crate) fn set_value(&self, v: ValueHandle) {
        self.value.store(v.0, Ordering::Relaxed);
    }

    /// Returns the previous flag.
    #[inline]
    pub(crate) fn set_deleted(&self, deleted: bool) -> bool {
        self.deleted.swap(deleted, Ordering::Relaxed)
    }

    #[inline]
    pub(crate) fn addr(&self) -> usize {
        self as *const DataNode as usize
    }
}

/// Raw node pointer shared between the index layer and batch workers.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub(crate) struct NodePtr(pub(crate) NonNull<DataNode>);

// SAFETY: the pointee's mutable state is atomic; lifetime is governed by the
// owning StorageLayer (see module docs).
unsafe impl Send for NodePtr {}
unsafe impl Sync for NodePtr {}

impl NodePtr {
    pub(crate) fn from_ref(n: &DataNode) -> NodePtr {
        NodePtr(NonNull::from(n))
    }

    /// # Safety
    /// The owning layer must be borrowed for `'a` and must not have been
    /// compacted since this pointer was taken.
    #[inline]
    pub(crate) unsafe fn get<'a>(self) -> &'a DataNode {
        &*self.0.as_ptr()
    }
}

/// A handle to a data node, valid until the owning layer is compacted or
/// dropped. Every dereference goes through the layer and checks the epoch.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeRef {
    pub(crate) ptr: NodePtr,
    pub(crate) epoch: u64,
}

impl NodeRef {
    /// Identity of the node, stable for the handle's lifetime.
    pub fn addr(&self) -> usize {
        self.ptr.0.as_ptr() as usize
    }
}

/// Geometric tower heights: `Pr[h] = P^(h-1) (1-P)`, capped.
///
/// Heights are a pure function of `(seed, key, salt)` so the same
/// configuration always produces the same structure no matter how the
/// insertions were spread over workers.
#[derive(Clone, Debug)]
pub struct HeightSampler {
    p: f64,
    max_height: u8,
    seed: u64,
}

impl HeightSampler {
    pub fn new(p: f64, max_height: u8, seed: u64) -> Result<HeightSampler> {
        if !(0.0..1.0).contains(&p) {
            return Err(PiError::Config(format!("elevation probability {p} not in [0, 1)")));
        }
        if max_height == 0 || max_height > HEIGHT_LIMIT {
            return Err(PiError::Config(format!("max height {max_height} out of range")));
        }
        Ok(HeightSampler { p, max_height, seed })
    }

    pub fn elevation_prob(&self) -> f64 {
        self.p
    }

    pub fn max_height(&self) -> u8 {
        self.max_height
    }

    pub fn draw(&self, key: Key, salt: u64) -> u8 {
        let mixed = self.seed ^ (key.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut rng = SmallRng::seed_from_u64(mixed);
        let mut h = 1;
        while h < self.max_height && rng.gen::<f64>() < self.p {
            h += 1;
        }
        h
    }
}

/// `⌈log_{1/P} capacity⌉ + 2`, clamped to `[1, HEIGHT_LIMIT]`.
pub fn max_height_for(capacity: usize, p: f64) -> u8 {
    if p <= 0.0 {
        return 1;
    }
    let levels = (capacity.max(2) as f64).ln() / (1.0 / p).ln();
    ((levels - 1e-9).ceil() as i64 + 2).clamp(1, HEIGHT_LIMIT as i64) as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageConfig {
    pub elevation_prob: f64,
    pub rebuild_ratio: f64,
    pub seed: u64,
    /// Expected maximum number of nodes; bounds tower height. Defaults to
    /// twice the bulk-loaded size.
    pub capacity: Option<usize>,
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig {
            elevation_prob: DEFAULT_ELEVATION_PROB,
            rebuild_ratio: DEFAULT_REBUILD_RATIO,
            seed: 0x5EED,
            capacity: None,
        }
    }
}

/// Structural changes made by one worker during a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct UpdateDelta {
    pub inserted: usize,
    pub tombstoned: usize,
    pub revived: usize,
}

impl UpdateDelta {
    pub(crate) fn merge(&mut self, other: UpdateDelta) {
        self.inserted += other.inserted;
        self.tombstoned += other.tombstoned;
        self.revived += other.revived;
    }
}

/// Records which nodes' mutable state a worker touched.
pub(crate) trait AccessTracker {
    fn read(&mut self, node: &DataNode);
    fn write(&mut self, node: &DataNode);
}

pub(crate) struct NoTracking;

impl AccessTracker for NoTracking {
    #[inline(always)]
    fn read(&mut self, _: &DataNode) {}
    #[inline(always)]
    fn write(&mut self, _: &DataNode) {}
}

/// Predecessor walk: the last node with key ≤ `key`, tombstones included.
///
/// Only `start` and the nodes advanced over have their link read; the first
/// node past `key` has just its immutable key inspected.
#[inline]
pub(crate) fn walk<'a, T: AccessTracker>(start: &'a DataNode, key: Key, t: &mut T) -> (&'a DataNode, usize) {
    let mut cur = start;
    let mut steps = 0;
    loop {
        t.read(cur);
        match cur.next_node() {
            Some(n) if n.key <= key => {
                cur = n;
                steps += 1;
            }
            _ => return (cur, steps),
        }
    }
}

/// Links a fresh node directly after `pred`. The caller owns `pred` and its
/// current successor gap for the duration of the call.
pub(crate) fn link_after(pred: &DataNode, key: Key, value: ValueHandle, height: u8) -> &DataNode {
    let node = DataNode::boxed(key, value, height);
    node.next.store(pred.next.load(Ordering::Acquire), Ordering::Relaxed);
    let raw = Box::into_raw(node);
    pred.next.store(raw, Ordering::Release);
    // SAFETY: just allocated; freed only through &mut StorageLayer.
    unsafe { &*raw }
}

/// Detaches the successor of `pred` and frees it.
///
/// # Safety
/// No reference to the successor may exist or be created afterwards, and no
/// other thread may touch `pred` or its successor concurrently.
pub(crate) unsafe fn unlink_next(pred: &DataNode) {
    let victim = pred.next.load(Ordering::Acquire);
    debug_assert!(!victim.is_null());
    let after = (*victim).next.load(Ordering::Acquire);
    pred.next.store(after, Ordering::Release);
    drop(Box::from_raw(victim));
}

static NEXT_EPOCH: AtomicU64 = AtomicU64::new(1);

fn fresh_epoch() -> u64 {
    NEXT_EPOCH.fetch_add(1, Ordering::Relaxed)
}

pub struct StorageLayer {
    head: NonNull<DataNode>,
    /// Linked nodes excluding the head, tombstones included.
    node_count: usize,
    live_count: usize,
    update_count: usize,
    base_size: usize,
    rebuild_ratio: f64,
    heights: HeightSampler,
    epoch: u64,
    /// Number of compactions so far; salts heights drawn for new nodes.
    generation: u64,
}

// SAFETY: all shared mutation goes through atomics; freeing requires &mut.
unsafe impl Send for StorageLayer {}
unsafe impl Sync for StorageLayer {}

impl StorageLayer {
    pub fn empty(cfg: &StorageConfig) -> Result<StorageLayer> {
        Self::bulk_load(&[], cfg)
    }

    /// Builds the list from strictly sorted pairs; heights are drawn per key.
    pub fn bulk_load(pairs: &[(Key, ValueHandle)], cfg: &StorageConfig) -> Result<StorageLayer> {
        if !(0.0..=1.0).contains(&cfg.rebuild_ratio) || cfg.rebuild_ratio == 0.0 {
            return Err(PiError::Config(format!("rebuild ratio {} not in (0, 1]", cfg.rebuild_ratio)));
        }
        for (i, w) in pairs.windows(2).enumerate() {
            if w[0].0 >= w[1].0 {
                return Err(PiError::Unsorted { position: i + 1, key: w[1].0 .0 });
            }
        }
        if let Some(&(k, _)) = pairs.first() {
            if k.is_sentinel() {
                return Err(PiError::ReservedKey(k.0));
            }
        }
        let capacity = cfg.capacity.unwrap_or(pairs.len().saturating_mul(2)).max(1024);
        let max_height = max_height_for(capacity, cfg.elevation_prob);
        let heights = HeightSampler::new(cfg.elevation_prob, max_height, cfg.seed)?;

        let head = Box::into_raw(DataNode::boxed(Key::SENTINEL, ValueHandle(0), max_height));
        let mut tail = head;
        for &(key, value) in pairs {
            let node = Box::into_raw(DataNode::boxed(key, value, heights.draw(key, 0)));
            // SAFETY: tail is the node allocated on the previous iteration.
            unsafe { (*tail).next.store(node, Ordering::Relaxed) };
            tail = node;
        }
        Ok(StorageLayer {
            // SAFETY: Box::into_raw never returns null.
            head: unsafe { NonNull::new_unchecked(head) },
            node_count: pairs.len(),
            live_count: pairs.len(),
            update_count: 0,
            base_size: pairs.len(),
            rebuild_ratio: cfg.rebuild_ratio,
            heights,
            epoch: fresh_epoch(),
            generation: 0,
        })
    }

    #[inline]
    pub(crate) fn head_node(&self) -> &DataNode {
        // SAFETY: the head lives as long as the layer.
        unsafe { self.head.as_ref() }
    }

    pub fn head(&self) -> NodeRef {
        self.make_ref(self.head_node())
    }

    pub(crate) fn make_ref(&self, n: &DataNode) -> NodeRef {
        NodeRef { ptr: NodePtr::from_ref(n), epoch: self.epoch }
    }

    pub fn node(&self, r: NodeRef) -> Result<&DataNode> {
        if r.epoch != self.epoch {
            return Err(PiError::StaleNode);
        }
        // SAFETY: epoch matches, so the node has not been freed.
        Ok(unsafe { r.ptr.get() })
    }

    pub fn next(&self, r: NodeRef) -> Result<Option<NodeRef>> {
        Ok(self.node(r)?.next_node().map(|n| self.make_ref(n)))
    }

    /// The node with the largest key ≤ `key`, starting from `start`.
    pub fn walk_from(&self, start: NodeRef, key: Key) -> Result<NodeRef> {
        let s = self.node(start)?;
        if s.key > key {
            return Err(PiError::Corruption(format!("walk from {:?} past target {:?}", s.key, key)));
        }
        Ok(self.make_ref(walk(s, key, &mut NoTracking).0))
    }

    pub fn insert_after(&mut self, pred: NodeRef, key: Key, value: ValueHandle, height: u8) -> Result<NodeRef> {
        let p = self.node(pred)?;
        let fits_after = p.key < key;
        let fits_before = p.next_node().is_none_or(|n| key < n.key);
        if !fits_after || !fits_before || key.is_sentinel() {
            return Err(PiError::Corruption(format!("insert of {key:?} after {:?} breaks ordering", p.key)));
        }
        if height == 0 || height > self.heights.max_height() {
            return Err(PiError::Config(format!("height {height} out of range")));
        }
        let n = link_after(p, key, value, height);
        let r = self.make_ref(n);
        self.apply(UpdateDelta { inserted: 1, ..Default::default() });
        Ok(r)
    }

    /// Sets the tombstone flag. Returns whether the flag changed; only a
    /// change counts as an update.
    pub fn tombstone(&mut self, node: NodeRef) -> Result<bool> {
        let n = self.node(node)?;
        if n.key.is_sentinel() {
            return Err(PiError::Corruption("attempt to delete the head sentinel".into()));
        }
        let changed = !n.set_deleted(true);
        if changed {
            self.apply(UpdateDelta { tombstoned: 1, ..Default::default() });
        }
        Ok(changed)
    }

    pub(crate) fn apply(&mut self, d: UpdateDelta) {
        self.node_count += d.inserted;
        self.live_count = self.live_count + d.inserted + d.revived - d.tombstoned;
        self.update_count += d.inserted + d.tombstoned;
    }

    pub fn rebuild_threshold(&self) -> f64 {
        self.rebuild_ratio * self.base_size as f64
    }

    pub fn needs_rebuild(&self) -> bool {
        self.update_count as f64 >= self.rebuild_threshold() && self.update_count > 0
    }

    pub fn live_count(&self) -> usize {
        self.live_count
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn heights(&self) -> &HeightSampler {
        &self.heights
    }

    pub(crate) fn insert_salt(&self) -> u64 {
        self.generation + 1
    }

    /// Finalizes a compaction performed by the rebuild: invalidates old
    /// handles and restarts the update window.
    pub(crate) fn finish_compaction(&mut self, removed: usize) {
        self.node_count -= removed;
        debug_assert_eq!(self.node_count, self.live_count);
        self.update_count = 0;
        self.base_size = self.live_count;
        self.generation += 1;
        self.epoch = fresh_epoch();
    }

    /// All nodes after the head in key order, tombstones included.
    pub fn iter(&self) -> Iter<'_> {
        Iter { cur: self.head_node().next_node() }
    }

    pub fn live_pairs(&self) -> Vec<(Key, ValueHandle)> {
        self.iter().filter(|n| !n.is_deleted()).map(|n| (n.key, n.value())).collect()
    }

    /// Order-sensitive digest of live (key, value, height) triples.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for n in self.iter().filter(|n| !n.is_deleted()) {
            for word in [n.key.0 as u64, n.value().0, n.height as u64] {
                h ^= word;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }

    /// Checks strict ordering along the links and the cached counters.
    pub fn validate(&self) -> Result<()> {
        let mut prev = Key::SENTINEL;
        let (mut nodes, mut live) = (0, 0);
        for n in self.iter() {
            if n.key <= prev {
                return Err(PiError::Corruption(format!("{:?} follows {:?}", n.key, prev)));
            }
            prev = n.key;
            nodes += 1;
            live += usize::from(!n.is_deleted());
        }
        if nodes != self.node_count || live != self.live_count {
            return Err(PiError::Corruption(format!(
                "counters off: nodes {nodes}/{}, live {live}/{}",
                self.node_count, self.live_count
            )));
        }
        Ok(())
    }
}

impl Drop for StorageLayer {
    fn drop(&mut self) {
        let mut cur = self.head.as_ptr();
        while !cur.is_null() {
            // SAFETY: exclusive access; every node was created by Box::into_raw.
            let b = unsafe { Box::from_raw(cur) };
            cur = b.next.load(Ordering::Relaxed);
        }
    }
}

pub struct Iter<'a> {
    cur: Option<&'a DataNode>,
}

impl<'a> Iterator for Iter<'a> {
    type Item = &'a DataNode;

    fn next(&mut self) -> Option<&'a DataNode> {
        let n = self.cur?;
        self.cur = n.next_node();
        Some(n)
    }
}
