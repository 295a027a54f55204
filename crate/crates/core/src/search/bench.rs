use rayon::prelude::*;

use super::{MemoryReport, SearchOutput, SearchParams, SkipDiskIndex};
use crate::dataio::{recall, GroundTruth, VectorDataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMode {
    /// The active variant's filter rule.
    Filtered,
    /// Same engine with every candidate read.
    Unfiltered,
    /// Synchronous read-per-hop traversal.
    Baseline,
}

impl BenchMode {
    pub fn label(self, index: &SkipDiskIndex) -> String {
        match self {
            BenchMode::Filtered => index.variant().name().to_string(),
            BenchMode::Unfiltered => "unfiltered".to_string(),
            BenchMode::Baseline => "baseline".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatencySummary {
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let pct = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        LatencySummary {
            mean_ns: s.iter().map(|&x| x as f64).sum::<f64>() / s.len() as f64,
            p50_ns: pct(0.50),
            p99_ns: pct(0.99),
            p999_ns: pct(0.999),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub label: String,
    pub k: usize,
    pub l: usize,
    pub b: usize,
    pub queries: usize,
    pub recall: f64,
    pub latency: LatencySummary,
    pub mean_reads: f64,
    pub mean_candidates: f64,
    pub mean_filtered: f64,
    /// Skipped over generated candidates, in [0, 1].
    pub filtered_fraction: f64,
    pub mean_exact_distances: f64,
    pub memory: MemoryReport,
    /// `"sim"`, `"direct"` or `"buffered"`.
    pub io_mode: String,
    /// Queries ran concurrently; latency then includes contention.
    pub throughput_mode: bool,
    pub per_query_recall: Vec<f64>,
    pub per_query_reads: Vec<u64>,
    pub per_query_latency_ns: Vec<u64>,
}

fn run_one(index: &SkipDiskIndex, q: &[f32], params: &SearchParams, mode: BenchMode) -> Result<SearchOutput> {
    match mode {
        BenchMode::Filtered => index.search(q, params),
        BenchMode::Unfiltered => index.search(q, &params.unfiltered()),
        BenchMode::Baseline => index.search_baseline(q, params),
    }
}

/// Runs every query and aggregates latency, recall, I/O counts and memory.
/// With `threads > 1` queries run concurrently on the shared index.
pub fn batch_bench(
    index: &SkipDiskIndex,
    queries: &VectorDataset,
    params: &SearchParams,
    truth: &GroundTruth,
    mode: BenchMode,
    threads: usize,
) -> Result<BenchReport> {
    params.validate()?;
    if truth.len() != queries.len() || truth.k() < params.k {
        return Err(Error::param(format!(
            "truth covers {} queries at k = {}, need {} at k = {}",
            truth.len(),
            truth.k(),
            queries.len(),
            params.k
        )));
    }
    if queries.is_empty() {
        return Err(Error::param("no queries"));
    }
    let outputs: Vec<SearchOutput> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::param(e.to_string()))?;
        pool.install(|| {
            (0..queries.len())
                .into_par_iter()
                .map(|i| run_one(index, queries.row(i), params, mode))
                .collect::<Result<_>>()
        })?
    } else {
        (0..queries.len())
            .map(|i| run_one(index, queries.row(i), params, mode))
            .collect::<Result<_>>()?
    };

    let nq = queries.len() as f64;
    let per_query_recall = outputs
        .iter()
        .enumerate()
        .map(|(i, o)| recall(&o.ids(), truth.ids(i), params.k))
        .collect::<Result<Vec<f64>>>()?;
    let per_query_reads: Vec<u64> = outputs.iter().map(|o| o.stats.reads_issued).collect();
    let per_query_latency_ns: Vec<u64> = outputs.iter().map(|o| o.stats.latency_ns).collect();
    let sum = |f: &dyn Fn(&SearchOutput) -> u64| outputs.iter().map(f).sum::<u64>() as f64;
    let candidates = sum(&|o| o.stats.candidates);
    let skipped = sum(&|o| o.stats.skipped());
    Ok(BenchReport {
        label: mode.label(index),
        k: params.k,
        l: params.l,
        b: params.b,
        queries: queries.len(),
        recall: per_query_recall.iter().sum::<f64>() / nq,
        latency: LatencySummary::from_samples(&per_query_latency_ns),
        mean_reads: sum(&|o| o.stats.reads_issued) / nq,
        mean_candidates: candidates / nq,
        mean_filtered: skipped / nq,
        filtered_fraction: if candidates > 0.0 { skipped / candidates } else { 0.0 },
        mean_exact_distances: sum(&|o| o.stats.exact_distances) / nq,
        memory: index.memory_report(),
        io_mode: if index.io().is_simulated() {
            "sim".to_string()
        } else {
            index.store().io_mode().to_string()
        },
        throughput_mode: threads > 1,
        per_query_recall,
        per_query_reads,
        per_query_latency_ns,
    })
}
