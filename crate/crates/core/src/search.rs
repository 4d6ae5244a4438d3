//! Index-layer traversal from the top level down to an interception: the
//! storage node with the largest key ≤ the query among nodes of height > 1
//! (the head sentinel when there is none).

use crate::error::{PiError, Result};
use crate::index::{IndexLayer, Level, Step};
use crate::storage::{NodePtr, NodeRef};
use crate::types::Key;

/// Observes a traversal. Implementations that do nothing compile away.
pub trait SearchProbe {
    /// An entry at index level `level` (1-based) was compared.
    fn entry(&mut self, _level: usize) {}
    /// The storage walk moved past one more node.
    fn storage_step(&mut self) {}
}

pub struct NoProbe;

impl SearchProbe for NoProbe {}

/// Per-level entry-visit and storage-step counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisitCounts {
    /// `entries[l - 1]` counts comparisons at index level `l`.
    pub entries: Vec<u64>,
    pub storage_steps: u64,
    pub searches: u64,
}

impl VisitCounts {
    pub fn total_entries(&self) -> u64 {
        self.entries.iter().sum()
    }

    pub fn mean_entries(&self) -> f64 {
        self.total_entries() as f64 / self.searches.max(1) as f64
    }

    pub fn mean_entries_per_level(&self) -> Vec<f64> {
        self.entries.iter().map(|&e| e as f64 / self.searches.max(1) as f64).collect()
    }

    pub fn mean_storage_steps(&self) -> f64 {
        self.storage_steps as f64 / self.searches.max(1) as f64
    }
}

impl SearchProbe for VisitCounts {
    fn entry(&mut self, level: usize) {
        if self.entries.len() < level {
            self.entries.resize(level, 0);
        }
        self.entries[level - 1] += 1;
    }

    fn storage_step(&mut self) {
        self.storage_steps += 1;
    }
}

/// Bit `i` set iff `keys[i] <= query`.
#[inline(always)]
pub fn compare_mask(keys: &[u32], query: u32) -> u32 {
    #[cfg(target_arch = "x86_64")]
    if keys.len().is_multiple_of(4) {
        return sse::le_mask(keys, query);
    }
    portable_le_mask(keys, query)
}

#[inline(always)]
pub fn portable_le_mask(keys: &[u32], query: u32) -> u32 {
    keys.iter().enumerate().fold(0, |m, (i, &k)| m | (((k <= query) as u32) << i))
}

#[cfg(target_arch = "x86_64")]
mod sse {
    use std::arch::x86_64::*;

    /// Unsigned ≤ via the sign-flip trick: SSE2 only has signed compares.
    #[inline(always)]
    pub(super) fn le_mask(keys: &[u32], query: u32) -> u32 {
        debug_assert!(keys.len().is_multiple_of(4) && keys.len() <= 32);
        // SAFETY: SSE2 is part of the x86_64 baseline; every load reads four
        // in-bounds u32s (unaligned load).
        unsafe {
            let flip = _mm_set1_epi32(i32::MIN);
            let q = _mm_xor_si128(_mm_set1_epi32(query as i32), flip);
            let mut mask = 0u32;
            for (c, chunk) in keys.chunks_exact(4).enumerate() {
                let k = _mm_xor_si128(_mm_loadu_si128(chunk.as_ptr() as *const __m128i), flip);
                let gt = _mm_cmpgt_epi32(k, q);
                let gt_bits = _mm_movemask_ps(_mm_castsi128_ps(gt)) as u32;
                mask |= (!gt_bits & 0xF) << (c * 4);
            }
            mask
        }
    }

    #[inline(always)]
    pub(super) fn prefetch(p: *const u8) {
        // SAFETY: prefetch never faults.
        unsafe { _mm_prefetch::<_MM_HINT_T0>(p as *const i8) }
    }
}

#[inline(always)]
fn prefetch(_p: *const u8) {
    #[cfg(target_arch = "x86_64")]
    sse::prefetch(_p);
}

/// Number of keys ≤ the query encoded in `mask`. Over sorted keys the mask
/// is always `0..01..1`; anything else means the entry is corrupt.
#[inline(always)]
pub fn decode_mask(mask: u32, m: usize) -> Result<usize> {
    let r = mask.count_ones() as usize;
    if mask & mask.wrapping_add(1) != 0 || r > m {
        return Err(PiError::Corruption(format!("non-unary comparison mask {mask:#b}")));
    }
    Ok(r)
}

/// One routing step from `entry` at level index `li` (0-based).
#[inline(always)]
fn step(lvl: &Level, entry: usize, key: u32, m: usize) -> Result<Step> {
    let r = decode_mask(compare_mask(lvl.entry_keys(entry, m), key), m)?;
    Ok(lvl.slot(entry, r, m).decode())
}

/// Reference traversal by plain comparisons over the level key arrays; does
/// not consult routing tables.
pub fn traverse_scalar(index: &IndexLayer, key: Key) -> NodeRef {
    let levels = index.levels();
    let Some(top) = levels.len().checked_sub(1) else {
        return index.make_ref(index.head_ptr());
    };
    let mut pos = 0;
    for li in (0..=top).rev() {
        let keys = levels[li].keys();
        while pos + 1 < keys.len() && keys[pos + 1] <= key.0 {
            pos += 1;
        }
        if li == 0 {
            return index.make_ref(levels[0].nodes()[pos]);
        }
        let k = keys[pos];
        pos = levels[li - 1].keys().partition_point(|&x| x < k);
    }
    unreachable!()
}

pub fn traverse_vector(index: &IndexLayer, key: Key) -> Result<NodeRef> {
    traverse_vector_probed(index, key, &mut NoProbe)
}

pub fn traverse_vector_probed<P: SearchProbe>(index: &IndexLayer, key: Key, probe: &mut P) -> Result<NodeRef> {
    let levels = index.levels();
    let m = index.keys_per_entry();
    let Some(mut li) = levels.len().checked_sub(1) else {
        return Ok(index.make_ref(index.head_ptr()));
    };
    let mut entry = 0;
    loop {
        probe.entry(li + 1);
        match step(&levels[li], entry, key.0, m)? {
            Step::Next(e) => entry = e,
            Step::Down(e) => {
                li -= 1;
                entry = e;
            }
            Step::Node(p) => return Ok(index.make_ref(p)),
        }
    }
}

/// Traverses sorted `keys` in groups of `group_size`, one level at a time:
/// each query in the group is resolved to its entry on the next level, a
/// prefetch is issued for that entry, and only then does the next query of
/// the group take its turn.
pub fn traverse_group(index: &IndexLayer, keys: &[Key], group_size: usize) -> Result<Vec<NodeRef>> {
    let mut out = Vec::with_capacity(keys.len());
    traverse_group_into(index, keys, group_size, &mut NoProbe, &mut out)?;
    Ok(out.into_iter().map(|p| index.make_ref(p)).collect())
}

pub(crate) fn traverse_group_into<P: SearchProbe>(
    index: &IndexLayer,
    keys: &[Key],
    group_size: usize,
    probe: &mut P,
    out: &mut Vec<NodePtr>,
) -> Result<()> {
    let levels = index.levels();
    let m = index.keys_per_entry();
    let Some(top) = levels.len().checked_sub(1) else {
        out.extend(std::iter::repeat_n(index.head_ptr(), keys.len()));
        return Ok(());
    };
    let group_size = group_size.max(1);
    let mut cursor = vec![0usize; group_size];
    for group in keys.chunks(group_size) {
        cursor[..group.len()].fill(0);
        for li in (1..=top).rev() {
            let lvl = &levels[li];
            let below = &levels[li - 1];
            for (q, c) in group.iter().zip(cursor.iter_mut()) {
                let mut e = *c;
                loop {
                    probe.entry(li + 1);
                    match step(lvl, e, q.0, m)? {
                        Step::Next(n) => e = n,
                        Step::Down(n) => {
                            prefetch(below.entry_ptr(n, m) as *const u8);
                            *c = n;
                            break;
                        }
                        Step::Node(_) => return Err(PiError::Corruption("data node above level 1".into())),
                    }
                }
            }
        }
        let bottom = &levels[0];
        for (q, c) in group.iter().zip(cursor.iter()) {
            let mut e = *c;
            loop {
                probe.entry(1);
                match step(bottom, e, q.0, m)? {
                    Step::Next(n) => e = n,
                    Step::Node(p) => {
                        prefetch(p.0.as_ptr() as *const u8);
                        out.push(p);
                        break;
                    }
                    Step::Down(_) => return Err(PiError::Corruption("entry below level 1".into())),
                }
            }
        }
    }
    Ok(())
}
