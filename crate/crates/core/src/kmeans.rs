//! Lloyd's k-means with k-means++ seeding, used for PQ codebooks and for the
//! cluster-pivot comparator in the tightness analysis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::transforms::distance::l2_sq;

#[derive(Clone, Debug)]
pub struct KMeans {
    pub dim: usize,
    pub k: usize,
    /// `k x dim`, row-major.
    pub centroids: Vec<f32>,
    /// Mean squared quantization error after each assignment step.
    pub objective: Vec<f64>,
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

/// Index and squared distance of the nearest centroid; ties go to the lower
/// index.
#[inline]
pub fn nearest_centroid(centroids: &[f32], dim: usize, x: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sq(x, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn kmeans(data: &[f32], dim: usize, k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::param("k-means data is not a whole number of rows"));
    }
    let n = data.len() / dim;
    if k == 0 || n < k {
        return Err(Error::param(format!("k-means needs at least k = {k} points, got {n}")));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);

    let mut objective = Vec::with_capacity(iters + 1);
    let mut assign = vec![(0u32, 0f32); n];
    for it in 0..=iters {
        assign
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, a)| {
                let (c, d) = nearest_centroid(&centroids, dim, row(i));
                *a = (c as u32, d);
            });
        objective.push(assign.iter().map(|&(_, d)| d as f64).sum::<f64>() / n as f64);
        if it == iters {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assign.iter().enumerate() {
            let c = c as usize;
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += x as f64;
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = (s * inv) as f32;
                }
            }
        }
        if !empty.is_empty() {
            // re-seed empty clusters at the points worst served by their centroid
            let mut far: Vec<usize> = (0..n).collect();
            far.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
            for (c, &p) in empty.iter().zip(&far) {
                centroids[c * dim..(c + 1) * dim].copy_from_slice(row(p));
            }
        }
    }

    Ok(KMeans {
        dim,
        k,
        centroids,
        objective,
    })
}

fn plus_plus_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f32> = (0..n).map(|i| l2_sq(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().map(|&d| d as f64).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                target -= d as f64;
                if target < 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave a sliver of mass; fall back to the last positive
            chosen.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        centroids.extend_from_slice(&c);
        d2.par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| *d = d.min(l2_sq(&data[i * dim..(i + 1) * dim], &c)));
    }
    centroids
}
