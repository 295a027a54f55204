//! Product quantization over a PCA prefix, with asymmetric distance tables.

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::kmeans::{kmeans, nearest_centroid};
use crate::transforms::distance::l2_sq;

/// Centroids per subspace; one byte per code.
pub const PQ_CENTROIDS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct PqCodebook {
    m: usize,
    sub_dim: usize,
    /// `m x 256 x sub_dim`.
    centroids: Vec<f32>,
}

/// Per-point codes, `n x m` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PqCodes {
    m: usize,
    codes: Vec<u8>,
}

/// `m x 256` table of squared partial distances for one query.
#[derive(Clone, Debug)]
pub struct QueryLut {
    m: usize,
    table: Vec<f32>,
}

impl PqCodebook {
    pub fn from_parts(m: usize, sub_dim: usize, centroids: Vec<f32>) -> Result<Self> {
        if m == 0 || sub_dim == 0 || centroids.len() != m * PQ_CENTROIDS * sub_dim {
            return Err(Error::format("inconsistent PQ codebook shape"));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::format("non-finite PQ centroid"));
        }
        Ok(PqCodebook { m, sub_dim, centroids })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    /// Length of the PCA prefix this codebook quantizes.
    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    fn subspace(&self, s: usize) -> &[f32] {
        let w = PQ_CENTROIDS * self.sub_dim;
        &self.centroids[s * w..(s + 1) * w]
    }

    pub fn centroid(&self, s: usize, c: usize) -> &[f32] {
        &self.subspace(s)[c * self.sub_dim..(c + 1) * self.sub_dim]
    }

    pub fn encode(&self, reduced: &[f32]) -> Result<Vec<u8>> {
        check_dim(self.dim(), reduced.len())?;
        let mut out = vec![0u8; self.m];
        self.encode_into(reduced, &mut out);
        Ok(out)
    }

    fn encode_into(&self, reduced: &[f32], out: &mut [u8]) {
        for (s, (x, o)) in reduced.chunks_exact(self.sub_dim).zip(out).enumerate() {
            *o = nearest_centroid(self.subspace(s), self.sub_dim, x).0 as u8;
        }
    }

    /// Encode an `n x dim` matrix.
    pub fn encode_all(&self, reduced: &[f32]) -> Result<PqCodes> {
        if reduced.len() % self.dim() != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: reduced.len() % self.dim(),
            });
        }
        let n = reduced.len() / self.dim();
        let mut codes = vec![0u8; n * self.m];
        codes
            .par_chunks_mut(self.m)
            .zip(reduced.par_chunks(self.dim()))
            .for_each(|(o, x)| self.encode_into(x, o));
        Ok(PqCodes { m: self.m, codes })
    }

    pub fn reconstruct(&self, codes: &[u8]) -> Result<Vec<f32>> {
        check_dim(self.m, codes.len())?;
        let mut out = Vec::with_capacity(self.dim());
        for (s, &c) in codes.iter().enumerate() {
            out.extend_from_slice(self.centroid(s, c as usize));
        }
        Ok(out)
    }

    pub fn build_lut(&self, query: &[f32]) -> Result<QueryLut> {
        check_dim(self.dim(), query.len())?;
        let mut table = Vec::with_capacity(self.m * PQ_CENTROIDS);
        for (s, q) in query.chunks_exact(self.sub_dim).enumerate() {
            table.extend(self.subspace(s).chunks_exact(self.sub_dim).map(|c| l2_sq(q, c)));
        }
        Ok(QueryLut { m: self.m, table })
    }

    pub fn memory_bytes(&self) -> usize {
        self.centroids.len() * 4
    }
}

/// Outcome of [`train_pq_traced`]: the codebook plus the per-subspace
/// k-means objective after every assignment step.
pub struct PqTraining {
    pub codebook: PqCodebook,
    pub objective: Vec<Vec<f64>>,
}

/// Train a codebook on an `n x d_pq` matrix of reduced vectors.
pub fn train_pq(reduced: &[f32], d_pq: usize, sub_dim: usize, iters: usize, seed: u64) -> Result<PqCodebook> {
    train_pq_traced(reduced, d_pq, sub_dim, iters, seed).map(|t| t.codebook)
}

pub fn train_pq_traced(
    reduced: &[f32],
    d_pq: usize,
    sub_dim: usize,
    iters: usize,
    seed: u64,
) -> Result<PqTraining> {
    if sub_dim == 0 || d_pq == 0 || d_pq % sub_dim != 0 {
        return Err(Error::param(format!(
            "PQ prefix {d_pq} is not divisible by sub-dimension {sub_dim}"
        )));
    }
    if reduced.len() % d_pq != 0 {
        return Err(Error::param("training matrix is not a whole number of rows"));
    }
    let n = reduced.len() / d_pq;
    if n < PQ_CENTROIDS {
        return Err(Error::param(format!(
            "PQ training needs at least {PQ_CENTROIDS} points, got {n}"
        )));
    }
    let m = d_pq / sub_dim;
    let mut centroids = Vec::with_capacity(m * PQ_CENTROIDS * sub_dim);
    let mut objective = Vec::with_capacity(m);
    for s in 0..m {
        let sub: Vec<f32> = reduced
            .chunks_exact(d_pq)
            .flat_map(|r| &r[s * sub_dim..(s + 1) * sub_dim])
            .copied()
            .collect();
        let km = kmeans(&sub, sub_dim, PQ_CENTROIDS, iters, seed.wrapping_add(s as u64))?;
        centroids.extend_from_slice(&km.centroids);
        objective.push(km.objective);
    }
    Ok(PqTraining {
        codebook: PqCodebook { m, sub_dim, centroids },
        objective,
    })
}

impl PqCodes {
    pub fn from_parts(m: usize, codes: Vec<u8>) -> Result<Self> {
        if m == 0 || codes.len() % m != 0 {
            return Err(Error::format("PQ code table is not a whole number of rows"));
        }
        Ok(PqCodes { m, codes })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.codes.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[u8] {
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }

    pub fn memory_bytes(&self) -> usize {
        self.codes.len()
    }
}

impl QueryLut {
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn entry(&self, s: usize, c: u8) -> f32 {
        self.table[s * PQ_CENTROIDS + c as usize]
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    pub fn zeros(m: usize) -> Self {
        QueryLut {
            m,
            table: vec![0.0; m * PQ_CENTROIDS],
        }
    }

    /// Approximate squared distance: sum of per-subspace table entries.
    #[inline]
    pub fn distance(&self, codes: &[u8]) -> f32 {
        debug_assert_eq!(codes.len(), self.m);
        let mut acc = [0.0f32; 4];
        let chunks = codes.chunks_exact(4);
        let rem = chunks.remainder();
        let mut s = 0;
        for c in chunks {
            for j in 0..4 {
                acc[j] += self.table[(s + j) * PQ_CENTROIDS + c[j] as usize];
            }
            s += 4;
        }
        let mut tail = 0.0;
        for (j, &c) in rem.iter().enumerate() {
            tail += self.table[(s + j) * PQ_CENTROIDS + c as usize];
        }
        (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
    }
}

/// Checked asymmetric distance.
pub fn adc_distance(lut: &QueryLut, codes: &[u8]) -> Result<f32> {
    check_dim(lut.m, codes.len())?;
    Ok(lut.distance(codes))
}
