use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pi_index::partition::PartitionConfig;
use pi_index::pipeline::IndexConfig;
use pi_index::storage::StorageConfig;
use pi_index::workload::{KeyOrder, WorkloadSpec};

/// Everything one run needs. Field names double as config-file keys, with
/// `-` and `_` interchangeable.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
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
    /// Target keys per range query; `None` runs point queries.
    pub granularity: Option<usize>,
    pub elevation_prob: f64,
    pub keys_per_entry: usize,
    pub group_size: usize,
    pub self_adjusting: bool,
    pub capacity: Option<usize>,
    pub key_order: KeyOrder,
    pub affinity: bool,
    /// `key,value` CSV to load instead of the synthetic dataset.
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 1 << 20,
            partitions: 1,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            batch_size: 8192,
            batches: 32,
            write_ratio: 0.0,
            delete_ratio: 0.0,
            theta: 0.0,
            seed: 42,
            rebuild_ratio: 0.15,
            granularity: None,
            elevation_prob: 0.25,
            keys_per_entry: 4,
            group_size: pi_index::pipeline::DEFAULT_GROUP_SIZE,
            self_adjusting: true,
            capacity: None,
            key_order: KeyOrder::Scrambled,
            affinity: false,
            data: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {v:?}"),
    }
}

fn parse_opt(key: &str, v: &str) -> Result<Option<usize>> {
    if matches!(v, "" | "none" | "0") {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key.trim().replace('_', "-").as_str() {
            "n" => self.n = parse(key, v)?,
            "partitions" => self.partitions = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "batch-size" => self.batch_size = parse(key, v)?,
            "batches" => self.batches = parse(key, v)?,
            "write-ratio" => self.write_ratio = parse(key, v)?,
            "delete-ratio" => self.delete_ratio = parse(key, v)?,
            "theta" => self.theta = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "rebuild-ratio" => self.rebuild_ratio = parse(key, v)?,
            "granularity" => self.granularity = parse_opt(key, v)?,
            "p" | "elevation-prob" => self.elevation_prob = parse(key, v)?,
            "m" | "keys-per-entry" => self.keys_per_entry = parse(key, v)?,
            "group-size" => self.group_size = parse(key, v)?,
            "self-adjusting" => self.self_adjusting = parse_bool(key, v)?,
            "capacity" => self.capacity = parse_opt(key, v)?,
            "key-order" => self.key_order = parse(key, v)?,
            "affinity" => self.affinity = parse_bool(key, v)?,
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => bail!("unknown setting {other:?}"),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            self.set(k, v).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            storage: StorageConfig {
                elevation_prob: self.elevation_prob,
                rebuild_ratio: self.rebuild_ratio,
                seed: self.seed,
                capacity: None,
            },
            keys_per_entry: self.keys_per_entry,
            group_size: self.group_size,
            auto_rebuild: true,
        }
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            partitions: self.partitions,
            threads: self.threads,
            capacity: self.capacity,
            self_adjusting: self.self_adjusting,
            affinity: self.affinity,
            index: self.index_config(),
        }
    }

    pub fn workload(&self, dataset_size: usize) -> WorkloadSpec {
        WorkloadSpec {
            dataset_size,
            batch_size: self.batch_size,
            write_ratio: self.write_ratio,
            delete_ratio: self.delete_ratio,
            theta: self.theta,
            seed: self.seed,
            n_batches: self.batches,
            key_order: self.key_order,
        }
    }
}
