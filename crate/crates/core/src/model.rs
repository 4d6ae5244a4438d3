//! Analytic cost model for search and rebuild.
//!
//! Symbols: `H` index height, `P` elevation probability, `M` keys per entry,
//! `L` memory latency, `N` initial data nodes, `R` insert ratio, `S_e`/`S_n`/
//! `S_l`/`S_c` entry, node, cache-line and last-level-cache bytes, `T_c` time
//! to read one cache line.

use crate::error::{PiError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModelParams {
    pub n: f64,
    pub p: f64,
    pub m: usize,
    /// Memory access latency, ns.
    pub latency_ns: f64,
    pub insert_ratio: f64,
    pub entry_bytes: usize,
    pub node_bytes: usize,
    pub line_bytes: usize,
    pub cache_bytes: usize,
    /// Time to read one cached line, ns.
    pub line_read_ns: f64,
}

impl Default for CostModelParams {
    fn default() -> Self {
        CostModelParams {
            n: 512.0 * 1024.0,
            p: 0.25,
            m: 4,
            latency_ns: 100.0,
            insert_ratio: 0.0,
            entry_bytes: 48,
            node_bytes: 20,
            line_bytes: 64,
            cache_bytes: 32 << 20,
            line_read_ns: 10.0,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.n, self.latency_ns, self.line_read_ns].iter().all(|&v| v > 0.0)
            && [self.m, self.entry_bytes, self.node_bytes, self.line_bytes, self.cache_bytes].iter().all(|&v| v > 0);
        if !positive || !(self.p > 0.0 && self.p < 1.0) || self.insert_ratio < 0.0 {
            return Err(PiError::Config("model parameters must be positive with P in (0,1)".into()));
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        height(self.n, self.p)
    }
}

/// Expected skip-list height, `⌈-log_P N⌉`.
pub fn height(n: f64, p: f64) -> usize {
    if n <= 1.0 {
        return 1;
    }
    let h = -(n.ln() / p.ln());
    // Exact powers of 1/P must not round up through float noise.
    (h - 1e-9).ceil().max(1.0) as usize
}

fn ceil_div(a: usize, b: usize) -> f64 {
    a.div_ceil(b) as f64
}

/// Entries visited per index level, `⌈(1+P)/(2PM)⌉`.
pub fn entries_per_level(p: f64, m: usize) -> f64 {
    ((1.0 + p) / (2.0 * p * m as f64)).ceil()
}

/// Storage nodes compared per search, `(1+P)/(2P)`.
pub fn storage_scan_length(p: f64) -> f64 {
    (1.0 + p) / (2.0 * p)
}

/// Index-layer cache lines per search.
pub fn index_cache_lines(c: &CostModelParams) -> f64 {
    (c.height() as f64 - 1.0) * ceil_div(c.entry_bytes, c.line_bytes) * entries_per_level(c.p, c.m)
}

/// Storage-layer cache lines per search, charging one node per compared key.
pub fn storage_cache_lines(c: &CostModelParams) -> f64 {
    ceil_div(c.node_bytes, c.line_bytes) * storage_scan_length(c.p).ceil()
}

/// Cache lines fetched per search: index levels plus the storage walk.
pub fn search_cache_lines(c: &CostModelParams) -> f64 {
    index_cache_lines(c) + storage_cache_lines(c)
}

/// The storage term as printed, which divides the walk by `M` as if the
/// storage layer were packed into entries.
pub fn search_cache_lines_as_printed(c: &CostModelParams) -> f64 {
    index_cache_lines(c) + ceil_div(c.node_bytes, c.line_bytes) * entries_per_level(c.p, c.m)
}

/// Search time when the index is cache resident.
pub fn search_time_ns(c: &CostModelParams) -> f64 {
    search_cache_lines(c) * c.line_read_ns
}

/// Storage walk after `i` queries with insert ratio `R`.
pub fn scan_length_with_inserts(i: f64, r: f64, n: f64, p: f64) -> f64 {
    (1.0 + i * r / n) * storage_scan_length(p)
}

/// Single-threaded rebuild time in ns: a storage scan plus writing the
/// geometric tower of index nodes, `(1+P)NL/(1-P)`.
pub fn rebuild_time_ns(n: f64, p: f64, latency_ns: f64) -> f64 {
    (1.0 + p) * n * latency_ns / (1.0 - p)
}

/// Whole-index size as usually quoted: `S_n` per data node plus one full
/// entry per index key, `S_n N + S_e N P/(1-P)` (18 MiB at 512K keys).
pub fn index_bytes_estimate(c: &CostModelParams) -> f64 {
    let index_keys = c.n * c.p / (1.0 - c.p);
    c.node_bytes as f64 * c.n + index_keys * c.entry_bytes as f64
}

/// Index-layer bytes for the packed layout actually built: `M` keys and
/// `M + 1` routing slots per entry.
pub fn index_bytes_layout(c: &CostModelParams) -> f64 {
    let index_keys = c.n * c.p / (1.0 - c.p);
    let entry = 4 * c.m + 8 * (c.m + 1);
    index_keys / c.m as f64 * entry as f64
}

/// Whether the index layer fits in the last-level cache.
pub fn fits_in_cache(c: &CostModelParams) -> bool {
    index_bytes_layout(c) <= c.cache_bytes as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelRow {
    pub name: &'static str,
    pub value: f64,
    pub unit: &'static str,
}

/// Everything the model predicts for `c`, for printing.
pub fn table(c: &CostModelParams) -> Vec<ModelRow> {
    let row = |name, value, unit| ModelRow { name, value, unit };
    vec![
        row("height", c.height() as f64, "levels"),
        row("entries_per_level", entries_per_level(c.p, c.m), "entries"),
        row("index_entries_per_search", (c.height() as f64 - 1.0) * entries_per_level(c.p, c.m), "entries"),
        row("storage_nodes_per_search", storage_scan_length(c.p), "nodes"),
        row("index_cache_lines", index_cache_lines(c), "lines"),
        row("storage_cache_lines", storage_cache_lines(c), "lines"),
        row("search_cache_lines", search_cache_lines(c), "lines"),
        row("search_cache_lines_as_printed", search_cache_lines_as_printed(c), "lines"),
        row("search_time", search_time_ns(c), "ns"),
        row("rebuild_time", rebuild_time_ns(c.n, c.p, c.latency_ns) / 1e9, "s"),
        row("size_estimate", index_bytes_estimate(c), "bytes"),
        row("index_layer_layout", index_bytes_layout(c), "bytes"),
        row("fits_in_cache", f64::from(u8::from(fits_in_cache(c))), "bool"),
    ]
}
