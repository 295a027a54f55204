//! Offline reports: lower-bound tightness against a shared-centroid pivot
//! scheme, and I/O reduction as a function of the estimation multiplier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::{recall, GroundTruth, VectorDataset};
use crate::error::{check_dim, Error, Result};
use crate::kmeans::{kmeans, nearest_centroid};
use crate::pivot::{build_pivots, PivotPrecision};
use crate::search::{SearchParams, SkipDiskIndex, Variant};
use crate::transforms::distance::{l2_sq, l2_sq_f64};
use crate::transforms::PcaModel;

/// Clusters in the shared-centroid comparator.
pub const COMPARATOR_CLUSTERS: usize = 256;
const COMPARATOR_TRAIN: usize = 50_000;
const COMPARATOR_ITERS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TightnessRow {
    pub d_prefix: usize,
    /// Mean `LB / d(q, p)` with per-point BF16 pivots.
    pub bf16_ratio: f64,
    /// Same with the nearest of 256 k-means centroids as pivot.
    pub cluster_ratio: f64,
    pub pairs: usize,
}

/// Random (query, point) pairs with non-zero distance.
pub fn sample_pairs(data: &VectorDataset, queries: &VectorDataset, pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    let mut attempts = 0;
    while out.len() < pairs && attempts < pairs * 4 {
        attempts += 1;
        let q = rng.random_range(0..queries.len());
        let p = rng.random_range(0..data.len());
        if l2_sq(queries.row(q), data.row(p)) > 0.0 {
            out.push((q, p));
        }
    }
    out
}

/// Mean lower-bound tightness per prefix length for both pivot schemes.
pub fn tightness_curve(
    pca: &PcaModel,
    data: &VectorDataset,
    queries: &VectorDataset,
    prefixes: &[usize],
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<TightnessRow>> {
    check_dim(pca.dim(), data.dim())?;
    check_dim(pca.dim(), queries.dim())?;
    if pairs.is_empty() {
        return Err(Error::param("no pairs to evaluate"));
    }
    if data.len() < COMPARATOR_CLUSTERS {
        return Err(Error::param(format!("comparator needs at least {COMPARATOR_CLUSTERS} points")));
    }
    let full: Vec<f64> = pairs
        .iter()
        .map(|&(q, p)| l2_sq_f64(queries.row(q), data.row(p)).sqrt())
        .collect();
    let mut rows = Vec::with_capacity(prefixes.len());
    for &d in prefixes {
        if d == 0 || d > pca.dim() {
            return Err(Error::param(format!("prefix {d} outside 1..={}", pca.dim())));
        }
        let reduced = pca.apply_dataset(data, d)?;
        let rq = pca.apply_dataset(queries, d)?;
        let store = build_pivots(&reduced, d, None, PivotPrecision::Bf16)?;

        let step = (data.len() / COMPARATOR_TRAIN).max(1);
        let train: Vec<f32> = reduced
            .chunks_exact(d)
            .step_by(step)
            .flat_map(|r| r.iter().copied())
            .collect();
        let km = kmeans(&train, d, COMPARATOR_CLUSTERS, COMPARATOR_ITERS, seed)?;

        let (bf, cl): (f64, f64) = pairs
            .par_iter()
            .zip(&full)
            .map(|(&(q, p), &dist)| {
                let qv = &rq[q * d..(q + 1) * d];
                let pv = &reduced[p * d..(p + 1) * d];
                let lb = store.lower_bound_unchecked(qv, p) as f64;
                let (c, r2) = nearest_centroid(&km.centroids, d, pv);
                let dq = l2_sq(qv, km.centroid(c)).sqrt() as f64;
                let lbc = (dq - (r2 as f64).sqrt()).abs();
                (lb / dist, lbc / dist)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        rows.push(TightnessRow {
            d_prefix: d,
            bf16_ratio: bf / pairs.len() as f64,
            cluster_ratio: cl / pairs.len() as f64,
            pairs: pairs.len(),
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonRow {
    pub epsilon: f32,
    pub mean_reads: f64,
    pub filtered_fraction: f64,
    /// Reads saved relative to the unfiltered engine.
    pub io_reduction: f64,
    pub recall: Option<f64>,
}

/// Sweeps the estimation multiplier on the estimation variant of `index`.
pub fn io_vs_epsilon(
    index: &SkipDiskIndex,
    queries: &VectorDataset,
    params: &SearchParams,
    epsilons: &[f32],
    truth: Option<&GroundTruth>,
) -> Result<Vec<EpsilonRow>> {
    let est = index.with_variant(Variant::Est)?;
    let nq = queries.len().max(1) as f64;
    let mut base_reads = 0.0;
    for i in 0..queries.len() {
        base_reads += est.search(queries.row(i), &params.unfiltered())?.stats.reads_issued as f64;
    }
    base_reads /= nq;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let p = params.with_epsilon(eps);
        let (mut reads, mut skipped, mut cands, mut rec) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..queries.len() {
            let out = est.search(queries.row(i), &p)?;
            reads += out.stats.reads_issued as f64;
            skipped += out.stats.skipped() as f64;
            cands += out.stats.candidates as f64;
            if let Some(t) = truth {
                rec += recall(&out.ids(), t.ids(i), params.k)?;
            }
        }
        rows.push(EpsilonRow {
            epsilon: eps,
            mean_reads: reads / nq,
            filtered_fraction: if cands > 0.0 { skipped / cands } else { 0.0 },
            io_reduction: if base_reads > 0.0 { 1.0 - reads / nq / base_reads } else { 0.0 },
            recall: truth.map(|_| rec / nq),
        });
    }
    Ok(rows)
}
