//! Deterministic YCSB-style workloads and the ordered-map reference.

use std::collections::BTreeMap;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};

use crate::error::{PiError, Result};
use crate::types::{make_query_set, Key, Outcome, Query, QueryResult, QuerySet, QueryType, ValueHandle};

/// How zipf ranks map onto loaded keys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KeyOrder {
    /// Ranks are permuted by a fixed bit mixer, so hot keys are spread over
    /// the key space.
    #[default]
    Scrambled,
    /// Rank `r` is the `r`-th smallest key, so hot keys cluster at the low end.
    Ranked,
}

impl std::str::FromStr for KeyOrder {
    type Err = PiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scrambled" => Ok(KeyOrder::Scrambled),
            "ranked" => Ok(KeyOrder::Ranked),
            _ => Err(PiError::Config(format!("unknown key order {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub dataset_size: usize,
    pub batch_size: usize,
    /// Fraction of inserts.
    pub write_ratio: f64,
    /// Fraction of deletes.
    pub delete_ratio: f64,
    /// Zipf exponent; 0 is uniform.
    pub theta: f64,
    pub seed: u64,
    pub n_batches: usize,
    pub key_order: KeyOrder,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            dataset_size: 1 << 20,
            batch_size: 8192,
            write_ratio: 0.0,
            delete_ratio: 0.0,
            theta: 0.0,
            seed: 42,
            n_batches: 16,
            key_order: KeyOrder::Scrambled,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let ratio = |r: f64| (0.0..=1.0).contains(&r);
        if !ratio(self.write_ratio) || !ratio(self.delete_ratio) || self.write_ratio + self.delete_ratio > 1.0 {
            return Err(PiError::Config("write and delete ratios must lie in [0,1] and sum to at most 1".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(PiError::Config(format!("theta {} outside [0,1)", self.theta)));
        }
        if self.dataset_size == 0 || self.dataset_size > u32::MAX as usize / 2 {
            return Err(PiError::Config(format!("dataset size {} out of range", self.dataset_size)));
        }
        if self.batch_size == 0 {
            return Err(PiError::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Bijection on `0..n`: a xor-shift/multiply mixer on the smallest
/// power-of-two domain covering `n`, re-applied until the value lands in
/// range (cycle walking).
pub fn scramble(rank: u64, n: u64) -> u64 {
    debug_assert!(rank < n);
    let bits = (64 - n.saturating_sub(1).leading_zeros()).max(1);
    let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let shift = bits.div_ceil(2);
    let mut x = rank;
    loop {
        x = (x ^ (x >> shift)).wrapping_mul(0xbf58_476d_1ce4_e5b9) & mask;
        x = (x ^ (x >> shift)).wrapping_mul(0x94d0_49bb_1331_11eb) & mask;
        x ^= x >> shift;
        if x < n {
            return x;
        }
    }
}

/// Gap between consecutive synthetic keys; leaves room for inserts.
pub fn key_stride(n: usize) -> u32 {
    ((u32::MAX as u64 - 1) / (n as u64 + 1)).clamp(1, 16) as u32
}

/// Sorted synthetic dataset `1, 1+s, 1+2s, ...` with value handle = position.
pub fn synthetic_dataset(n: usize) -> Vec<(Key, ValueHandle)> {
    let s = key_stride(n);
    (0..n).map(|i| (Key(1 + i as u32 * s), ValueHandle(i as u64))).collect()
}

/// Zipf ranks over `n` items, 0-based.
#[derive(Clone, Debug)]
pub struct RankSampler {
    zipf: Zipf<f64>,
}

impl RankSampler {
    pub fn new(n: usize, theta: f64) -> Result<RankSampler> {
        let zipf = Zipf::new(n as u64, theta).map_err(|e| PiError::Config(e.to_string()))?;
        Ok(RankSampler { zipf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.zipf.sample(rng) as usize - 1
    }
}

/// Query stream over a dataset laid out by [`synthetic_dataset`] or any
/// sorted key list.
#[derive(Clone, Debug)]
pub struct WorkloadGen {
    spec: WorkloadSpec,
    keys: Vec<u32>,
    stride: u32,
    ranks: RankSampler,
    rng: SmallRng,
    seq: u64,
    emitted: usize,
}

impl WorkloadGen {
    /// Generator over the synthetic dataset of `spec.dataset_size` keys.
    pub fn new(spec: WorkloadSpec) -> Result<WorkloadGen> {
        spec.validate()?;
        let keys = synthetic_dataset(spec.dataset_size).into_iter().map(|(k, _)| k.0).collect();
        Self::over_keys(spec, keys)
    }

    /// Generator over an explicit sorted key list.
    pub fn over_keys(spec: WorkloadSpec, keys: Vec<u32>) -> Result<WorkloadGen> {
        spec.validate()?;
        if keys.is_empty() {
            return Err(PiError::Config("empty key list".into()));
        }
        let stride = keys.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(2);
        let ranks = RankSampler::new(keys.len(), spec.theta)?;
        let rng = SmallRng::seed_from_u64(spec.seed);
        Ok(WorkloadGen { spec, keys, stride, ranks, rng, seq: 0, emitted: 0 })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    /// Position in the loaded key list chosen for the next query.
    fn pick(&mut self) -> usize {
        let r = self.ranks.sample(&mut self.rng);
        match self.spec.key_order {
            KeyOrder::Ranked => r,
            KeyOrder::Scrambled => scramble(r as u64, self.keys.len() as u64) as usize,
        }
    }

    /// The key a query will address, drawn from the configured skew.
    pub fn next_key(&mut self) -> Key {
        let i = self.pick();
        Key(self.keys[i])
    }

    fn next_query(&mut self) -> Query {
        let base = self.next_key().0;
        let seq = self.seq;
        self.seq += 1;
        let u: f64 = self.rng.gen();
        if u < self.spec.write_ratio {
            // New keys fall in the gap after a loaded key.
            let key = if self.stride > 1 { base + self.rng.gen_range(1..self.stride) } else { base };
            Query::insert(key, self.rng.gen::<u32>() as u64, seq)
        } else if u < self.spec.write_ratio + self.spec.delete_ratio {
            Query::delete(base, seq)
        } else {
            Query::search(base, seq)
        }
    }

    pub fn next_batch(&mut self) -> QuerySet {
        let qs = (0..self.spec.batch_size).map(|_| self.next_query()).collect();
        self.emitted += 1;
        make_query_set(qs).expect("generated queries are well formed")
    }

    /// Range batch whose ranges each cover about `granularity` loaded keys.
    pub fn next_range_batch(&mut self, granularity: usize) -> QuerySet {
        let span = granularity.max(1) as u64 * self.stride as u64;
        let qs = (0..self.spec.batch_size)
            .map(|_| {
                let lo = self.next_key().0;
                let hi = (lo as u64 + span - 1).min(u32::MAX as u64) as u32;
                let seq = self.seq;
                self.seq += 1;
                Query::range(lo, hi, seq)
            })
            .collect();
        self.emitted += 1;
        make_query_set(qs).expect("generated ranges are well formed")
    }
}

impl Iterator for WorkloadGen {
    type Item = QuerySet;

    fn next(&mut self) -> Option<QuerySet> {
        (self.emitted < self.spec.n_batches).then(|| self.next_batch())
    }
}

/// Sequential reference index with the same tombstone semantics.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleIndex {
    map: BTreeMap<Key, (ValueHandle, bool)>,
}

impl OracleIndex {
    pub fn from_pairs(pairs: &[(Key, ValueHandle)]) -> OracleIndex {
        OracleIndex { map: pairs.iter().map(|&(k, v)| (k, (v, false))).collect() }
    }

    pub fn apply(&mut self, q: &Query) -> QueryResult {
        let outcome = match q.qtype {
            QueryType::Search => match self.map.get(&q.key) {
                Some(&(v, false)) => Outcome::Found(v),
                _ => Outcome::NotFound,
            },
            QueryType::Insert => {
                let v = q.value.expect("insert carries a value");
                match self.map.insert(q.key, (v, false)) {
                    Some(_) => Outcome::Updated,
                    None => Outcome::Inserted,
                }
            }
            QueryType::Delete => match self.map.get_mut(&q.key) {
                Some(e) if !e.1 => {
                    e.1 = true;
                    Outcome::Deleted
                }
                _ => Outcome::NotFound,
            },
            QueryType::RangeSearch => Outcome::Range(self.range(q.key, q.upper.unwrap_or(q.key))),
        };
        QueryResult { seq: q.seq, outcome }
    }

    /// Applies a batch; queries on one key take effect in arrival order.
    pub fn apply_set(&mut self, qs: &QuerySet) -> Vec<QueryResult> {
        let mut out: Vec<QueryResult> = qs.iter().map(|q| self.apply(q)).collect();
        out.sort_unstable_by_key(|r| r.seq);
        out
    }

    pub fn range(&self, lo: Key, hi: Key) -> Vec<(Key, ValueHandle)> {
        if hi < lo {
            return Vec::new();
        }
        self.map.range(lo..=hi).filter(|(_, e)| !e.1).map(|(&k, e)| (k, e.0)).collect()
    }

    pub fn live_pairs(&self) -> Vec<(Key, ValueHandle)> {
        self.map.iter().filter(|(_, e)| !e.1).map(|(&k, e)| (k, e.0)).collect()
    }

    pub fn live_count(&self) -> usize {
        self.map.values().filter(|e| !e.1).count()
    }
}
