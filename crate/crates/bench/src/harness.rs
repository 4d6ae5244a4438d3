use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use pi_index::io::{self, Snapshot};
use pi_index::model::{self, CostModelParams};
use pi_index::partition::{create_partitions, PartitionSet};
use pi_index::pipeline::{BatchOptions, OwnershipReport};
use pi_index::workload::{synthetic_dataset, OracleIndex, WorkloadGen};
use pi_index::{Executor, Key, Outcome, QueryResult, QuerySet, QueryType, ValueHandle};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub fn dataset(cfg: &RunConfig) -> Result<Vec<(Key, ValueHandle)>> {
    match &cfg.data {
        Some(path) => io::read_pairs_csv(path).with_context(|| format!("loading {}", path.display())),
        None => Ok(synthetic_dataset(cfg.n)),
    }
}

pub fn executor(cfg: &RunConfig) -> Result<Executor> {
    Ok(Executor::with_threads(cfg.threads)?)
}

pub fn build(cfg: &RunConfig, pairs: &[(Key, ValueHandle)], exec: &Executor) -> Result<PartitionSet> {
    Ok(create_partitions(pairs, cfg.partition_config(), exec)?)
}

fn generator(cfg: &RunConfig, pairs: &[(Key, ValueHandle)]) -> Result<WorkloadGen> {
    let keys = pairs.iter().map(|p| p.0 .0).collect();
    Ok(WorkloadGen::over_keys(cfg.workload(pairs.len().max(1)), keys)?)
}

/// Pre-generates every batch so generation stays out of the timed region.
pub fn batches(cfg: &RunConfig, pairs: &[(Key, ValueHandle)]) -> Result<Vec<QuerySet>> {
    let mut gen = generator(cfg, pairs)?;
    Ok((0..cfg.batches)
        .map(|_| match cfg.granularity {
            Some(g) => gen.next_range_batch(g),
            None => gen.next_batch(),
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub keys: usize,
    pub partitions: usize,
    pub build_s: f64,
    pub height: usize,
    /// Index-layer entries per level (level 2 first), summed over partitions.
    pub entries_per_level: Vec<usize>,
    pub index_bytes: usize,
    pub model_layout_bytes: f64,
    pub model_estimate_bytes: f64,
}

pub fn load(cfg: &RunConfig, out: Option<&Path>) -> Result<LoadReport> {
    let pairs = dataset(cfg)?;
    let exec = executor(cfg)?;
    let t0 = Instant::now();
    let ps = build(cfg, &pairs, &exec)?;
    let build_s = t0.elapsed().as_secs_f64();
    let mut entries_per_level: Vec<usize> = Vec::new();
    let mut height = 1;
    for p in ps.partitions() {
        height = height.max(p.index.index().height());
        for (i, c) in p.index.index().entry_counts().into_iter().enumerate() {
            if entries_per_level.len() <= i {
                entries_per_level.push(0);
            }
            entries_per_level[i] += c;
        }
    }
    let params = CostModelParams {
        n: pairs.len().max(1) as f64,
        p: cfg.elevation_prob,
        m: cfg.keys_per_entry,
        ..CostModelParams::default()
    };
    if let Some(path) = out {
        let snap = Snapshot { config: cfg.index_config(), partitions: cfg.partitions, pairs };
        io::write_snapshot(path, &snap).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(LoadReport {
        keys: ps.live_count(),
        partitions: ps.len(),
        build_s,
        height,
        entries_per_level,
        index_bytes: ps.index_bytes(),
        model_layout_bytes: model::index_bytes_layout(&params),
        model_estimate_bytes: model::index_bytes_estimate(&params),
    })
}

/// One CSV row. Config columns first, then measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n: usize,
    pub partitions: usize,
    pub threads: usize,
    pub batch_size: usize,
    pub batches: usize,
    pub write_ratio: f64,
    pub delete_ratio: f64,
    pub theta: f64,
    pub seed: u64,
    pub rebuild_ratio: f64,
    pub granularity: usize,
    pub self_adjusting: bool,
    pub key_order: String,
    pub queries: u64,
    /// Live keys after the last batch.
    pub final_keys: usize,
    pub elapsed_s: f64,
    pub qps: f64,
    pub search_qps: f64,
    pub insert_qps: f64,
    pub delete_qps: f64,
    pub range_qps: f64,
    pub rebuilds: usize,
    pub rebuild_s: f64,
    pub offloaded: usize,
    /// Workers per partition in the last round, `/`-separated.
    pub workers_last_round: String,
    pub batch_ms_mean: f64,
    pub batch_ms_p50: f64,
    pub batch_ms_p99: f64,
    pub result_checksum: String,
    pub state_checksum: String,
}

fn fnv(h: &mut u64, word: u64) {
    *h ^= word;
    *h = h.wrapping_mul(0x0000_0100_0000_01B3);
}

pub fn results_checksum(h: &mut u64, results: &[QueryResult]) {
    for r in results {
        fnv(h, r.seq);
        match &r.outcome {
            Outcome::Found(v) => fnv(h, v.0),
            Outcome::NotFound => fnv(h, 1 << 40),
            Outcome::Inserted => fnv(h, 2 << 40),
            Outcome::Updated => fnv(h, 3 << 40),
            Outcome::Deleted => fnv(h, 4 << 40),
            Outcome::Range(v) => {
                fnv(h, 5 << 40 | v.len() as u64);
                for (k, val) in v {
                    fnv(h, k.0 as u64);
                    fnv(h, val.0);
                }
            }
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Times `cfg.batches` rounds; rebuilds count toward elapsed time.
pub fn run(cfg: &RunConfig) -> Result<RunMetrics> {
    let pairs = dataset(cfg)?;
    let exec = executor(cfg)?;
    let mut ps = build(cfg, &pairs, &exec)?;
    let work = batches(cfg, &pairs)?;
    run_on(cfg, &mut ps, &work, &exec)
}

/// Times `work` against an already built index.
pub fn run_on(cfg: &RunConfig, ps: &mut PartitionSet, work: &[QuerySet], exec: &Executor) -> Result<RunMetrics> {
    let loaded = ps.live_count();
    let mut lat = Vec::with_capacity(work.len());
    let mut counts = [0u64; 4];
    let (mut rebuilds, mut rebuild_s, mut offloaded) = (0, 0.0, 0);
    let mut workers_last_round = String::new();
    let mut rh = 0xcbf2_9ce4_8422_2325u64;
    let mut elapsed = 0.0;
    for qs in work {
        let t0 = Instant::now();
        let round = if cfg.granularity.is_some() {
            ps.process_ranges(qs, exec)?
        } else {
            ps.process(qs, exec, BatchOptions::default())?
        };
        let dt = t0.elapsed().as_secs_f64();
        elapsed += dt;
        lat.push(dt * 1e3);
        rebuilds += round.rebuilds;
        rebuild_s += round.rebuild_time.as_secs_f64();
        offloaded += round.allocation.total_offloaded();
        workers_last_round =
            round.allocation.workers.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("/");
        for q in qs {
            counts[match q.qtype {
                QueryType::Search => 0,
                QueryType::Insert => 1,
                QueryType::Delete => 2,
                QueryType::RangeSearch => 3,
            }] += 1;
        }
        results_checksum(&mut rh, &round.results);
    }
    let queries: u64 = counts.iter().sum();
    let rate = |c: u64| if elapsed > 0.0 { c as f64 / elapsed } else { 0.0 };
    let mut sorted = lat.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(RunMetrics {
        n: loaded,
        partitions: cfg.partitions,
        threads: cfg.threads,
        batch_size: cfg.batch_size,
        batches: work.len(),
        write_ratio: cfg.write_ratio,
        delete_ratio: cfg.delete_ratio,
        theta: cfg.theta,
        seed: cfg.seed,
        rebuild_ratio: cfg.rebuild_ratio,
        granularity: cfg.granularity.unwrap_or(0),
        self_adjusting: cfg.self_adjusting,
        key_order: format!("{:?}", cfg.key_order).to_lowercase(),
        queries,
        final_keys: ps.live_count(),
        elapsed_s: elapsed,
        qps: rate(queries),
        search_qps: rate(counts[0]),
        insert_qps: rate(counts[1]),
        delete_qps: rate(counts[2]),
        range_qps: rate(counts[3]),
        rebuilds,
        rebuild_s,
        offloaded,
        workers_last_round,
        batch_ms_mean: if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 },
        batch_ms_p50: percentile(&sorted, 0.5),
        batch_ms_p99: percentile(&sorted, 0.99),
        result_checksum: format!("{rh:016x}"),
        state_checksum: format!("{:016x}", ps.checksum()),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub batches: usize,
    pub queries: u64,
    /// First mismatch against the reference map, if any.
    pub divergence: Option<String>,
    pub nodes_written: usize,
    pub multi_writer_nodes: usize,
    pub read_write_overlaps: usize,
    pub rebuilds: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none() && self.multi_writer_nodes == 0 && self.read_write_overlaps == 0
    }
}

fn first_mismatch(got: &[QueryResult], want: &[QueryResult]) -> Option<String> {
    if got.len() != want.len() {
        return Some(format!("{} results, expected {}", got.len(), want.len()));
    }
    got.iter()
        .zip(want)
        .find(|(g, w)| g != w)
        .map(|(g, w)| format!("seq {}: got {:?}, expected {:?}", w.seq, g.outcome, w.outcome))
}

/// Runs point batches (with access tracking) and a range batch per round
/// against the reference map.
pub fn verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let pairs = dataset(cfg)?;
    let exec = executor(cfg)?;
    let mut ps = build(cfg, &pairs, &exec)?;
    let mut oracle = OracleIndex::from_pairs(&pairs);
    let mut gen = generator(cfg, &pairs)?;
    let mut report = VerifyReport::default();
    let mut own = OwnershipReport::default();
    for b in 0..cfg.batches {
        let qs = gen.next_batch();
        let round = ps.process(&qs, &exec, BatchOptions { track_ownership: true })?;
        if let Some(o) = round.ownership {
            own.merge(o);
        }
        report.rebuilds += round.rebuilds;
        report.batches += 1;
        report.queries += qs.len() as u64;
        if let Some(m) = first_mismatch(&round.results, &oracle.apply_set(&qs)) {
            report.divergence = Some(format!("batch {b}: {m}"));
            break;
        }
        let ranges = gen.next_range_batch(cfg.granularity.unwrap_or(16));
        let got = ps.process_ranges(&ranges, &exec)?;
        report.queries += ranges.len() as u64;
        if let Some(m) = first_mismatch(&got.results, &oracle.apply_set(&ranges)) {
            report.divergence = Some(format!("range batch {b}: {m}"));
            break;
        }
    }
    if report.divergence.is_none() && ps.live_pairs() != oracle.live_pairs() {
        report.divergence = Some("final live key sets differ".into());
    }
    report.nodes_written = own.nodes_written;
    report.multi_writer_nodes = own.multi_writer_nodes;
    report.read_write_overlaps = own.read_write_overlaps;
    Ok(report)
}

/// Appends rows to a CSV file, writing the header only for a new file.
pub fn append_csv(path: &Path, rows: &[RunMetrics]) -> Result<()> {
    let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<RunMetrics>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
