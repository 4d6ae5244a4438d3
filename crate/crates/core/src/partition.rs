//! Key-range partitions, each with its own storage and index layer.
//!
//! A partition stands in for a NUMA node: its data is only ever touched by
//! the workers assigned to it for a batch round. Every round a coordinator
//! routes the batch, sizes each partition's worker count to its share of the
//! queries, and runs all partitions concurrently.

use std::time::Duration;

use crate::error::{PiError, Result};
use crate::exec::Executor;
use crate::pipeline::{BatchOptions, IndexConfig, OwnershipReport, PiIndex};
use crate::types::{Key, Outcome, Query, QueryResult, QuerySet, QueryType, ValueHandle};

#[derive(Clone, Debug)]
pub struct PartitionConfig {
    pub partitions: usize,
    /// Worker budget shared by all partitions each round.
    pub threads: usize,
    /// Most workers one partition may host; `None` means no limit.
    pub capacity: Option<usize>,
    /// Size worker counts by load; otherwise split the budget evenly.
    pub self_adjusting: bool,
    /// Record a preferred host node per partition.
    pub affinity: bool,
    pub index: IndexConfig,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            partitions: 1,
            threads: 1,
            capacity: None,
            self_adjusting: true,
            affinity: false,
            index: IndexConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct Partition {
    pub id: usize,
    /// Inclusive lower key bound.
    pub lo: u32,
    /// Exclusive upper key bound (`2^32` for the last partition).
    pub hi: u64,
    pub affinity_hint: Option<usize>,
    pub index: PiIndex,
}

impl Partition {
    pub fn contains(&self, k: Key) -> bool {
        (k.0 as u64) >= self.lo as u64 && (k.0 as u64) < self.hi
    }
}

/// How one round's worker budget was spent.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Allocation {
    /// Workers hosted by each partition; sums to the budget.
    pub hosted: Vec<usize>,
    /// Workers operating on each partition's data, local or remote.
    pub workers: Vec<usize>,
    /// Queries of each partition served by workers hosted elsewhere.
    pub offloaded: Vec<usize>,
}

impl Allocation {
    pub fn total_offloaded(&self) -> usize {
        self.offloaded.iter().sum()
    }
}

/// Largest-remainder proportional split of `budget` over `loads`.
///
/// Every non-empty partition gets at least one thread; empty ones get none.
/// Ties go to the lower id. Only load ratios matter, so scaling every load
/// by the same factor gives the same split.
pub fn proportional_split(loads: &[usize], budget: usize) -> Result<Vec<usize>> {
    let nonempty = loads.iter().filter(|&&l| l > 0).count();
    if budget < nonempty {
        return Err(PiError::Config(format!("{budget} threads for {nonempty} busy partitions")));
    }
    let total: u128 = loads.iter().map(|&l| l as u128).sum();
    if total == 0 {
        return Ok(vec![0; loads.len()]);
    }
    let b = budget as u128;
    // share_i = floor + rem_i / total, kept exact in integers.
    let mut alloc: Vec<usize> = loads.iter().map(|&l| ((l as u128 * b) / total) as usize).collect();
    let rem: Vec<u128> = loads.iter().map(|&l| (l as u128 * b) % total).collect();
    for (a, &l) in alloc.iter_mut().zip(loads) {
        if l > 0 && *a == 0 {
            *a = 1;
        }
    }
    let assigned: usize = alloc.iter().sum();
    if assigned < budget {
        let mut order: Vec<usize> = (0..loads.len()).filter(|&i| loads[i] > 0).collect();
        order.sort_by(|&i, &j| rem[j].cmp(&rem[i]).then(i.cmp(&j)));
        for &i in order.iter().cycle().take(budget - assigned) {
            alloc[i] += 1;
        }
    } else {
        // Minimum-one bumps overshot: take back from whoever is furthest above
        // its exact share, never dropping a busy partition to zero.
        for _ in budget..assigned {
            let over = |i: usize| (alloc[i] as u128 * total) as i128 - (loads[i] as u128 * b) as i128;
            let i = (0..loads.len())
                .filter(|&i| alloc[i] > 1)
                .max_by(|&i, &j| over(i).cmp(&over(j)).then(j.cmp(&i)))
                .expect("budget covers busy partitions");
            alloc[i] -= 1;
        }
    }
    Ok(alloc)
}

/// Proportional thread allocation with a per-partition hosting limit.
///
/// A partition whose share exceeds `capacity` hosts only `capacity` workers;
/// the rest are hosted by the least-loaded partition and work remotely on
/// the overloaded partition's data.
pub fn allocate_threads(loads: &[usize], budget: usize, capacity: Option<usize>) -> Result<Allocation> {
    let workers = proportional_split(loads, budget)?;
    let mut hosted = workers.clone();
    let mut offloaded = vec![0; loads.len()];
    let Some(cap) = capacity else {
        return Ok(Allocation { hosted, workers, offloaded });
    };
    let cap = cap.max(1);
    let least = (0..loads.len()).min_by_key(|&i| (loads[i], i));
    for i in 0..loads.len() {
        let Some(host) = least else { break };
        if workers[i] > cap && host != i {
            let excess = workers[i] - cap;
            hosted[i] = cap;
            hosted[host] += excess;
            offloaded[i] = loads[i] * excess / workers[i];
        }
    }
    Ok(Allocation { hosted, workers, offloaded })
}

/// Even split used when self-adjusting threading is off.
pub fn fixed_split(n: usize, budget: usize) -> Vec<usize> {
    (0..n).map(|i| budget / n + usize::from(i < budget % n)).collect()
}

#[derive(Clone, Debug, Default)]
pub struct RoundReport {
    /// One result per query, ordered by `seq`.
    pub results: Vec<QueryResult>,
    pub loads: Vec<usize>,
    pub allocation: Allocation,
    pub ownership: Option<OwnershipReport>,
    pub rebuilds: usize,
    pub rebuild_time: Duration,
}

#[derive(Debug)]
pub struct PartitionSet {
    parts: Vec<Partition>,
    cfg: PartitionConfig,
}

/// Splits `pairs` into `cfg.partitions` contiguous runs of equal cardinality
/// and builds each independently.
pub fn create_partitions(pairs: &[(Key, ValueHandle)], cfg: PartitionConfig, exec: &Executor) -> Result<PartitionSet> {
    let n = cfg.partitions;
    if n == 0 {
        return Err(PiError::Config("at least one partition".into()));
    }
    if cfg.threads == 0 {
        return Err(PiError::Config("at least one thread".into()));
    }
    let starts: Vec<usize> = (0..=n).map(|i| i * pairs.len() / n).collect();
    let lo_of = |i: usize| -> u32 {
        if i == 0 {
            0
        } else {
            pairs.get(starts[i]).map_or(u32::MAX, |p| p.0 .0)
        }
    };
    let per_part = fixed_split(n, cfg.threads);
    let chunks: Vec<usize> = (0..n).collect();
    let built = exec.map(&chunks, |&i| {
        PiIndex::load(&pairs[starts[i]..starts[i + 1]], cfg.index.clone(), exec, per_part[i].max(1))
    });
    let mut parts = Vec::with_capacity(n);
    for (i, index) in built.into_iter().enumerate() {
        parts.push(Partition {
            id: i,
            lo: lo_of(i),
            hi: if i + 1 == n { 1u64 << 32 } else { lo_of(i + 1) as u64 },
            affinity_hint: cfg.affinity.then_some(i),
            index: index?,
        });
    }
    Ok(PartitionSet { parts, cfg })
}

impl PartitionSet {
    pub fn partitions(&self) -> &[Partition] {
        &self.parts
    }

    pub fn config(&self) -> &PartitionConfig {
        &self.cfg
    }

    pub fn set_self_adjusting(&mut self, on: bool) {
        self.cfg.self_adjusting = on;
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Partition owning key `k`.
    pub fn route_key(&self, k: Key) -> usize {
        self.parts.partition_point(|p| p.lo <= k.0).saturating_sub(1)
    }

    /// Splits a sorted query set at partition boundaries. Ranges crossing a
    /// boundary become one sub-range per partition, all with the original seq.
    pub fn route(&self, qs: &QuerySet) -> Vec<QuerySet> {
        let mut out: Vec<Vec<Query>> = vec![Vec::new(); self.parts.len()];
        for q in qs {
            let first = self.route_key(q.key);
            match (q.qtype, q.upper) {
                (QueryType::RangeSearch, Some(hi)) => {
                    for p in &self.parts[first..] {
                        if (p.lo as u64) > hi.0 as u64 {
                            break;
                        }
                        let lo = q.key.max(Key(p.lo));
                        let top = if (hi.0 as u64) < p.hi { hi } else { Key((p.hi - 1) as u32) };
                        out[p.id].push(Query { key: lo, upper: Some(top), ..*q });
                    }
                }
                _ => out[first].push(*q),
            }
        }
        // Sub-ranges of later partitions start at that partition's lower bound,
        // so each list is still key-sorted apart from ties, which keep seq order.
        out.into_iter()
            .map(|mut v| {
                v.sort_by_key(|q| (q.key, q.seq));
                QuerySet::from_sorted(v)
            })
            .collect()
    }

    fn allocation(&self, loads: &[usize]) -> Result<Allocation> {
        if self.cfg.self_adjusting {
            allocate_threads(loads, self.cfg.threads.max(loads.iter().filter(|&&l| l > 0).count()), self.cfg.capacity)
        } else {
            let fixed = fixed_split(self.parts.len(), self.cfg.threads);
            Ok(Allocation { hosted: fixed.clone(), workers: fixed, offloaded: vec![0; loads.len()] })
        }
    }

    /// One batch round of point queries across all partitions.
    pub fn process(&mut self, qs: &QuerySet, exec: &Executor, opts: BatchOptions) -> Result<RoundReport> {
        let routed = self.route(qs);
        let loads: Vec<usize> = routed.iter().map(QuerySet::len).collect();
        let allocation = self.allocation(&loads)?;
        let mut jobs: Vec<(&mut Partition, QuerySet, usize)> = self
            .parts
            .iter_mut()
            .zip(routed)
            .zip(&allocation.workers)
            .map(|((p, q), &w)| (p, q, w.max(1)))
            .collect();
        let outs = exec.map_mut(&mut jobs, |(p, q, w)| {
            if q.is_empty() {
                return Ok(None);
            }
            p.index.process_batch_with(q, *w, exec, opts).map(Some)
        });
        let mut report = RoundReport { loads, allocation, ..RoundReport::default() };
        let mut ownership = opts.track_ownership.then(OwnershipReport::default);
        for out in outs {
            let Some(r) = out? else { continue };
            report.results.extend(r.results);
            if let (Some(total), Some(o)) = (ownership.as_mut(), r.ownership) {
                total.merge(o);
            }
            if let Some(d) = r.rebuild {
                report.rebuilds += 1;
                report.rebuild_time += d;
            }
        }
        report.ownership = ownership;
        report.results.sort_unstable_by_key(|r| r.seq);
        Ok(report)
    }

    /// One batch round of range queries; sub-range results are joined per
    /// query in partition order.
    pub fn process_ranges(&self, ranges: &QuerySet, exec: &Executor) -> Result<RoundReport> {
        let routed = self.route(ranges);
        let loads: Vec<usize> = routed.iter().map(QuerySet::len).collect();
        let allocation = self.allocation(&loads)?;
        let jobs: Vec<(&Partition, QuerySet, usize)> = self
            .parts
            .iter()
            .zip(routed)
            .zip(&allocation.workers)
            .map(|((p, q), &w)| (p, q, w.max(1)))
            .collect();
        let outs = exec.map(&jobs, |(p, q, w)| {
            if q.is_empty() {
                return Ok(Vec::new());
            }
            p.index.process_range_batch(q, *w, exec)
        });
        let mut merged: std::collections::BTreeMap<u64, Vec<(Key, ValueHandle)>> =
            ranges.iter().map(|q| (q.seq, Vec::new())).collect();
        for out in outs {
            for r in out? {
                if let Outcome::Range(mut v) = r.outcome {
                    merged.get_mut(&r.seq).expect("sub-range of an unknown query").append(&mut v);
                }
            }
        }
        let results = merged.into_iter().map(|(seq, v)| QueryResult { seq, outcome: Outcome::Range(v) }).collect();
        Ok(RoundReport { results, loads, allocation, ..RoundReport::default() })
    }

    pub fn live_pairs(&self) -> Vec<(Key, ValueHandle)> {
        self.parts.iter().flat_map(|p| p.index.live_pairs()).collect()
    }

    pub fn live_count(&self) -> usize {
        self.parts.iter().map(|p| p.index.storage().live_count()).sum()
    }

    /// Order-sensitive checksum over every partition's storage.
    pub fn checksum(&self) -> u64 {
        self.parts.iter().fold(0xcbf2_9ce4_8422_2325, |h, p| {
            (h ^ p.index.storage().checksum()).wrapping_mul(0x0100_0000_01b3)
        })
    }

    pub fn rebuilds(&self) -> usize {
        self.parts.iter().map(|p| p.index.rebuilds()).sum()
    }

    pub fn rebuild_time(&self) -> Duration {
        self.parts.iter().map(|p| p.index.rebuild_time()).sum()
    }

    pub fn index_bytes(&self) -> usize {
        self.parts.iter().map(|p| p.index.index().size_bytes()).sum()
    }
}
