use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pi_bench::harness::{self, append_csv};
use pi_bench::{plot, RunConfig};
use pi_index::model::{self, CostModelParams};

#[derive(Parser)]
#[command(name = "pi-bench", version, about = "Load, run, verify and model the batched skip-list index")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the partitioned index and report its shape
    Load {
        #[command(flatten)]
        common: Common,
        /// Write a snapshot that `run --snapshot` can reload
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time a workload and report throughput
    Run {
        #[command(flatten)]
        common: Common,
        /// Repeat the run for each value, e.g. `batch-size=2048,8192,32768`
        #[arg(long)]
        sweep: Option<String>,
        /// Load dataset and build settings from a snapshot
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Check every result against a sequential reference map
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Print the analytic cost model
    Model(ModelArgs),
    /// Turn run CSVs into gnuplot data and scripts
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "threads")]
        x: String,
        #[arg(long, default_value = "qps")]
        y: String,
        /// Column whose values become separate lines
        #[arg(long)]
        series: Option<String>,
        /// Output path prefix; `.dat`, `.gp` are appended
        #[arg(long, default_value = "plot")]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct Common {
    /// Synthetic dataset size
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    /// Worker budget
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    write_ratio: Option<f64>,
    #[arg(long)]
    delete_ratio: Option<f64>,
    /// Zipf skew; 0 is uniform
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rebuild_ratio: Option<f64>,
    /// Run range queries of about this many keys instead of point queries
    #[arg(long)]
    granularity: Option<usize>,
    /// `scrambled` or `ranked`
    #[arg(long)]
    key_order: Option<String>,
    /// Split the budget evenly instead of by load
    #[arg(long)]
    no_self_adjusting: bool,
    /// Most workers one partition may host
    #[arg(long)]
    capacity: Option<usize>,
    /// `key,value` CSV to load instead of synthetic keys
    #[arg(long)]
    data: Option<PathBuf>,
    /// key = value settings applied after the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Append result rows here
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write results here as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        let flags: [(&str, Option<String>); 13] = [
            ("n", self.n.map(|v| v.to_string())),
            ("partitions", self.partitions.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("batch-size", self.batch_size.map(|v| v.to_string())),
            ("batches", self.batches.map(|v| v.to_string())),
            ("write-ratio", self.write_ratio.map(|v| v.to_string())),
            ("delete-ratio", self.delete_ratio.map(|v| v.to_string())),
            ("theta", self.theta.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("rebuild-ratio", self.rebuild_ratio.map(|v| v.to_string())),
            ("granularity", self.granularity.map(|v| v.to_string())),
            ("key-order", self.key_order.clone()),
            ("capacity", self.capacity.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.set(k, &v)?;
            }
        }
        if self.no_self_adjusting {
            c.self_adjusting = false;
        }
        if let Some(d) = &self.data {
            c.data = Some(d.clone());
        }
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        Ok(c)
    }

    fn write_json<T: serde::Serialize>(&self, value: &T) -> Result<()> {
        if let Some(path) = &self.json {
            let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            serde_json::to_writer_pretty(f, value)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 524_288.0)]
    n: f64,
    #[arg(long, default_value_t = 0.25)]
    p: f64,
    #[arg(long, default_value_t = 4)]
    m: usize,
    /// Memory latency, ns
    #[arg(long, default_value_t = 100.0)]
    latency_ns: f64,
    /// Cached line read time, ns
    #[arg(long, default_value_t = 10.0)]
    line_read_ns: f64,
    #[arg(long, default_value_t = 0.0)]
    insert_ratio: f64,
    #[arg(long, default_value_t = 48)]
    entry_bytes: usize,
    #[arg(long, default_value_t = 20)]
    node_bytes: usize,
    #[arg(long, default_value_t = 64)]
    line_bytes: usize,
    #[arg(long, default_value_t = 32 << 20)]
    cache_bytes: usize,
    /// Write `name,value,unit` rows here
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn print_run(m: &harness::RunMetrics) {
    println!(
        "n={} partitions={} threads={} batch={} theta={} writes={} deletes={} granularity={}",
        m.n, m.partitions, m.threads, m.batch_size, m.theta, m.write_ratio, m.delete_ratio, m.granularity
    );
    println!(
        "  {:.0} q/s over {} queries in {:.3}s (search {:.0}, insert {:.0}, delete {:.0}, range {:.0})",
        m.qps, m.queries, m.elapsed_s, m.search_qps, m.insert_qps, m.delete_qps, m.range_qps
    );
    println!(
        "  batch ms mean {:.3} p50 {:.3} p99 {:.3}; rebuilds {} ({:.3}s); workers {} offloaded {}; state {}",
        m.batch_ms_mean,
        m.batch_ms_p50,
        m.batch_ms_p99,
        m.rebuilds,
        m.rebuild_s,
        m.workers_last_round,
        m.offloaded,
        m.state_checksum
    );
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Load { common, out } => {
            let cfg = common.resolve()?;
            let r = harness::load(&cfg, out.as_deref())?;
            println!("loaded {} keys into {} partition(s) in {:.3}s", r.keys, r.partitions, r.build_s);
            println!("height {}; entries per level (bottom up) {:?}", r.height, r.entries_per_level);
            println!(
                "index layer {} bytes measured, {:.0} predicted for this layout; size estimate {:.0} bytes",
                r.index_bytes, r.model_layout_bytes, r.model_estimate_bytes
            );
            common.write_json(&r)?;
        }
        Cmd::Run { common, sweep, snapshot } => {
            let mut base = common.resolve()?;
            let mut snap_pairs = None;
            if let Some(path) = &snapshot {
                let s = pi_index::io::read_snapshot(path).with_context(|| format!("reading {}", path.display()))?;
                base.elevation_prob = s.config.storage.elevation_prob;
                base.rebuild_ratio = s.config.storage.rebuild_ratio;
                base.seed = s.config.storage.seed;
                base.keys_per_entry = s.config.keys_per_entry;
                base.group_size = s.config.group_size;
                base.partitions = s.partitions;
                snap_pairs = Some(s.pairs);
            }
            let mut configs = vec![base.clone()];
            if let Some(spec) = &sweep {
                let Some((key, values)) = spec.split_once('=') else { bail!("--sweep expects key=v1,v2,...") };
                configs = values
                    .split(',')
                    .map(|v| {
                        let mut c = base.clone();
                        c.set(key, v).map(|_| c)
                    })
                    .collect::<Result<_>>()?;
            }
            let mut rows = Vec::new();
            for cfg in &configs {
                let m = match &snap_pairs {
                    Some(pairs) => {
                        let exec = harness::executor(cfg)?;
                        let mut ps = harness::build(cfg, pairs, &exec)?;
                        let work = harness::batches(cfg, pairs)?;
                        harness::run_on(cfg, &mut ps, &work, &exec)?
                    }
                    None => harness::run(cfg)?,
                };
                print_run(&m);
                rows.push(m);
            }
            if let Some(path) = &common.csv {
                append_csv(path, &rows)?;
            }
            common.write_json(&rows)?;
        }
        Cmd::Verify { common } => {
            let cfg = common.resolve()?;
            let r = harness::verify(&cfg)?;
            println!(
                "{} batches, {} queries, {} rebuilds; {} nodes written, {} written by several workers, {} read-write overlaps",
                r.batches, r.queries, r.rebuilds, r.nodes_written, r.multi_writer_nodes, r.read_write_overlaps
            );
            match &r.divergence {
                Some(d) => println!("DIVERGED: {d}"),
                None => println!("all results match the reference"),
            }
            common.write_json(&r)?;
            if !r.passed() {
                std::process::exit(1);
            }
        }
        Cmd::Model(a) => {
            let p = CostModelParams {
                n: a.n,
                p: a.p,
                m: a.m,
                latency_ns: a.latency_ns,
                insert_ratio: a.insert_ratio,
                entry_bytes: a.entry_bytes,
                node_bytes: a.node_bytes,
                line_bytes: a.line_bytes,
                cache_bytes: a.cache_bytes,
                line_read_ns: a.line_read_ns,
            };
            p.validate()?;
            let rows = model::table(&p);
            for r in &rows {
                println!("{:<32} {:>16.3} {}", r.name, r.value, r.unit);
            }
            if let Some(path) = &a.csv {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["name", "value", "unit"])?;
                for r in &rows {
                    w.write_record([r.name, &r.value.to_string(), r.unit])?;
                }
                w.flush()?;
            }
        }
        Cmd::Plot { input, x, y, series, out } => {
            let data = plot::extract(&input, &x, &y, series.as_deref())?;
            let (dat, gp) = plot::write_gnuplot(&data, &x, &y, series.as_deref(), &out)?;
            println!("wrote {} and {}", dat.display(), gp.display());
        }
    }
    Ok(())
}
