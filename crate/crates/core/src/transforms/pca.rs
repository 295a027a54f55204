//! PCA rotation fitted on the sample covariance.
//!
//! Rows of the rotation are principal directions in descending eigenvalue
//! order, so any prefix of a rotated vector is a reduced representation whose
//! pairwise distances never exceed the full-space distances.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::VectorDataset;
use crate::error::{check_dim, Error, Result};

/// Upper bound on the number of points used to estimate the covariance.
pub const PCA_TRAIN_SAMPLE: usize = 500_000;
const SAMPLE_SEED: u64 = 0x5eed_0c0a;
const CHUNK_ROWS: usize = 4096;
const SIGN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    dim: usize,
    mean: Vec<f32>,
    /// `dim x dim`, row-major, rows are principal directions.
    rotation: Vec<f32>,
    eigenvalues: Vec<f32>,
}

impl PcaModel {
    pub fn from_parts(mean: Vec<f32>, rotation: Vec<f32>, eigenvalues: Vec<f32>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 || rotation.len() != dim * dim || eigenvalues.len() != dim {
            return Err(Error::format("inconsistent PCA model shapes"));
        }
        Ok(PcaModel {
            dim,
            mean,
            rotation,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn rotation(&self) -> &[f32] {
        &self.rotation
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    /// The `i`-th principal direction.
    pub fn component(&self, i: usize) -> &[f32] {
        &self.rotation[i * self.dim..(i + 1) * self.dim]
    }

    /// First `d_prefix` coordinates of `rotation * (x - mean)`.
    pub fn apply(&self, x: &[f32], d_prefix: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0; d_prefix];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// Like [`apply`](Self::apply), writing `out.len()` coordinates.
    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if out.is_empty() || out.len() > self.dim {
            return Err(Error::param(format!(
                "prefix length {} outside [1, {}]",
                out.len(),
                self.dim
            )));
        }
        let centered: Vec<f32> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot_f64(self.component(i), &centered) as f32;
        }
        Ok(())
    }

    /// Inverse of a full-length [`apply`](Self::apply).
    pub fn reconstruct(&self, reduced: &[f32]) -> Result<Vec<f32>> {
        check_dim(self.dim, reduced.len())?;
        let mut out: Vec<f64> = self.mean.iter().map(|&m| m as f64).collect();
        for (i, &c) in reduced.iter().enumerate() {
            for (o, &r) in out.iter_mut().zip(self.component(i)) {
                *o += c as f64 * r as f64;
            }
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }

    /// Apply to every row of a dataset, returning an `n x d_prefix` matrix.
    pub fn apply_dataset(&self, data: &VectorDataset, d_prefix: usize) -> Result<Vec<f32>> {
        use rayon::prelude::*;
        check_dim(self.dim, data.dim())?;
        let mut out = vec![0.0f32; data.len() * d_prefix];
        out.par_chunks_mut(d_prefix)
            .enumerate()
            .try_for_each(|(i, o)| self.apply_into(data.row(i), o))?;
        Ok(out)
    }

    /// Smallest prefix length whose eigenvalues explain at least `fraction`
    /// of the total variance.
    pub fn dims_for_variance(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().map(|&e| e as f64).sum();
        if total <= 0.0 {
            return 1;
        }
        let mut acc = 0.0;
        for (i, &e) in self.eigenvalues.iter().enumerate() {
            acc += e as f64;
            if acc / total >= fraction {
                return i + 1;
            }
        }
        self.dim
    }
}

#[inline]
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] as f64 * y[i] as f64;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(&x, &y)| x as f64 * y as f64).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Fit PCA on (a sample of at most [`PCA_TRAIN_SAMPLE`] points of) `dataset`.
pub fn fit_pca(dataset: &VectorDataset) -> Result<PcaModel> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::param("PCA needs at least two points"));
    }
    let dim = dataset.dim();
    let ids: Vec<usize> = if n > PCA_TRAIN_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        let mut s = sample(&mut rng, n, PCA_TRAIN_SAMPLE).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let m = ids.len();

    let mut mean = vec![0.0f64; dim];
    for &i in &ids {
        for (a, &x) in mean.iter_mut().zip(dataset.row(i)) {
            *a += x as f64;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for chunk in ids.chunks(CHUNK_ROWS) {
        let block = DMatrix::<f64>::from_fn(chunk.len(), dim, |r, c| {
            dataset.row(chunk[r])[c] as f64 - mean[c]
        });
        cov += block.transpose() * &block;
    }
    cov /= (m - 1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut rotation = Vec::with_capacity(dim * dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for &j in &order {
        let v = eig.eigenvectors.column(j);
        let sign = match v.iter().find(|x| x.abs() > SIGN_EPS) {
            Some(&x) if x < 0.0 => -1.0,
            _ => 1.0,
        };
        rotation.extend(v.iter().map(|&x| (sign * x) as f32));
        eigenvalues.push(eig.eigenvalues[j].max(0.0) as f32);
    }

    Ok(PcaModel {
        dim,
        mean: mean.into_iter().map(|x| x as f32).collect(),
        rotation,
        eigenvalues,
    })
}
