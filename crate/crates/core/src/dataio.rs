//! Dataset ingestion (fvecs / ivecs / bvecs), synthetic generation, the
//! brute-force KNN oracle and recall.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::transforms::distance::l2_sq_f64;

/// Dense row-major matrix of finite 32-bit vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    n: usize,
    dim: usize,
    data: Vec<f32>,
}

impl VectorDataset {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::format(format!(
                "data length {} is not a positive multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(VectorDataset {
            n: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim(dim, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            if i >= self.n {
                return Err(Error::InvalidId { id: i as u32, n: self.n });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.dim, data)
    }
}

/// A result entry: point id and a distance (squared or not, per context).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f32,
}

impl Neighbor {
    pub fn new(id: u32, distance: f32) -> Self {
        Neighbor { id, distance }
    }

    /// Total order by (distance, id).
    #[inline]
    pub fn cmp_key(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_key(other)
    }
}

// ---------------------------------------------------------------------------
// *vecs formats

fn read_records(bytes: &[u8], elem: usize) -> Result<(usize, Vec<&[u8]>)> {
    if bytes.is_empty() {
        return Err(Error::format("no records"));
    }
    let mut pos = 0usize;
    let mut dim = None;
    let mut out = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 4 {
            return Err(Error::format(format!("truncated record header at byte {pos}")));
        }
        let d = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        if d <= 0 {
            return Err(Error::format(format!("non-positive dimension {d} at byte {pos}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::format(format!(
                    "record {} has dimension {d}, expected {expected}",
                    out.len()
                )))
            }
            _ => {}
        }
        pos += 4;
        let len = d * elem;
        if bytes.len() - pos < len {
            return Err(Error::format(format!("truncated record {}", out.len())));
        }
        out.push(&bytes[pos..pos + len]);
        pos += len;
    }
    Ok((dim.unwrap(), out))
}

/// Parse fvecs bytes.
pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorDataset> {
    let (dim, records) = read_records(bytes, 4)?;
    let mut data = Vec::with_capacity(records.len() * dim);
    for rec in records {
        for c in rec.chunks_exact(4) {
            let x = f32::from_le_bytes(c.try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::NonFinite(data.len()));
            }
            data.push(x);
        }
    }
    VectorDataset::new(dim, data)
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    parse_fvecs(&fs::read(path)?)
}

pub fn encode_fvecs(dataset: &VectorDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(dataset.len() * (4 + 4 * dataset.dim()));
    for row in dataset.rows() {
        out.extend_from_slice(&(dataset.dim() as i32).to_le_bytes());
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn write_fvecs(dataset: &VectorDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_fvecs(dataset))?;
    w.flush()?;
    Ok(())
}

/// Byte vectors widened to 32-bit floats.
pub fn read_bvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    let bytes = fs::read(path)?;
    let (dim, records) = read_records(&bytes, 1)?;
    let data = records
        .iter()
        .flat_map(|r| r.iter().map(|&b| b as f32))
        .collect();
    VectorDataset::new(dim, data)
}

/// Integer vectors, one `Vec<i32>` per record.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    let bytes = fs::read(path)?;
    let (_, records) = read_records(&bytes, 4)?;
    Ok(records
        .iter()
        .map(|r| {
            r.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect())
}

pub fn write_ivecs<R: AsRef<[i32]>>(rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        let r = r.as_ref();
        w.write_all(&(r.len() as i32).to_le_bytes())?;
        for x in r {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read any supported vector file, dispatching on the extension.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<VectorDataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bvecs") => read_bvecs(path),
        _ => read_fvecs(path),
    }
}

// ---------------------------------------------------------------------------
// synthetic data

/// Standard deviation of cluster centers for [`SyntheticModel::Clustered`].
pub const CLUSTER_CENTER_SCALE: f32 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticModel {
    /// i.i.d. standard normal coordinates.
    Gaussian,
    /// `k` centers drawn from N(0, CLUSTER_CENTER_SCALE^2), then unit-variance
    /// noise around a uniformly chosen center per point.
    Clustered { k: usize },
}

pub fn gen_synthetic(n: usize, dim: usize, seed: u64, model: SyntheticModel) -> Result<VectorDataset> {
    if n == 0 || dim == 0 {
        return Err(Error::param("n and dim must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * dim);
    match model {
        SyntheticModel::Gaussian => {
            data.extend((0..n * dim).map(|_| rng.sample::<f32, _>(StandardNormal)));
        }
        SyntheticModel::Clustered { k } => {
            if k == 0 {
                return Err(Error::param("cluster count must be at least 1"));
            }
            let centers: Vec<f32> = (0..k * dim)
                .map(|_| CLUSTER_CENTER_SCALE * rng.sample::<f32, _>(StandardNormal))
                .collect();
            for _ in 0..n {
                let c = rng.random_range(0..k);
                let center = &centers[c * dim..(c + 1) * dim];
                data.extend(center.iter().map(|&m| m + rng.sample::<f32, _>(StandardNormal)));
            }
        }
    }
    VectorDataset::new(dim, data)
}

/// Sample `nq` points without replacement as queries; the rest form the
/// base set (original order preserved).
pub fn split_queries(dataset: &VectorDataset, nq: usize, seed: u64) -> Result<(VectorDataset, VectorDataset)> {
    if nq == 0 || nq >= dataset.len() {
        return Err(Error::param(format!(
            "query count {nq} must be in [1, {})",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, dataset.len(), nq).into_vec();
    let mut is_query = vec![false; dataset.len()];
    for &i in &picked {
        is_query[i] = true;
    }
    let base: Vec<usize> = (0..dataset.len()).filter(|&i| !is_query[i]).collect();
    Ok((dataset.select(&base)?, dataset.select(&picked)?))
}

// ---------------------------------------------------------------------------
// exact search

/// Exact top-k by squared distance; ties broken by ascending id.
pub fn brute_force_knn(dataset: &VectorDataset, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    check_dim(dataset.dim(), query.len())?;
    if k == 0 || k > dataset.len() {
        return Err(Error::param(format!("k = {k} outside [1, {}]", dataset.len())));
    }
    let mut heap: BinaryHeap<Neighbor> = BinaryHeap::with_capacity(k + 1);
    for (i, row) in dataset.rows().enumerate() {
        let cand = Neighbor::new(i as u32, l2_sq_f64(row, query) as f32);
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
    }
    Ok(heap.into_sorted_vec())
}

/// Per-query exact neighbor lists.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    k: usize,
    ids: Vec<u32>,
    sq_dists: Option<Vec<f32>>,
}

impl GroundTruth {
    pub fn compute(base: &VectorDataset, queries: &VectorDataset, k: usize) -> Result<Self> {
        check_dim(base.dim(), queries.dim())?;
        let rows: Vec<Vec<Neighbor>> = (0..queries.len())
            .into_par_iter()
            .map(|q| brute_force_knn(base, queries.row(q), k))
            .collect::<Result<_>>()?;
        let ids = rows.iter().flatten().map(|nb| nb.id).collect();
        let d = rows.iter().flatten().map(|nb| nb.distance).collect();
        Ok(GroundTruth {
            k,
            ids,
            sq_dists: Some(d),
        })
    }

    pub fn from_ids(k: usize, rows: &[Vec<i32>]) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len() * k);
        for (q, r) in rows.iter().enumerate() {
            if r.len() < k {
                return Err(Error::format(format!("truth row {q} has {} < {k} entries", r.len())));
            }
            for &x in &r[..k] {
                if x < 0 {
                    return Err(Error::format(format!("negative id in truth row {q}")));
                }
                ids.push(x as u32);
            }
        }
        Ok(GroundTruth { k, ids, sq_dists: None })
    }

    pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Self> {
        let rows = read_ivecs(path)?;
        let k = rows.iter().map(Vec::len).min().unwrap_or(0);
        Self::from_ids(k, &rows)
    }

    pub fn write_ivecs(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<Vec<i32>> = (0..self.len())
            .map(|q| self.ids(q).iter().map(|&x| x as i32).collect())
            .collect();
        write_ivecs(&rows, path)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.ids.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self, q: usize) -> &[u32] {
        &self.ids[q * self.k..(q + 1) * self.k]
    }

    pub fn sq_dists(&self, q: usize) -> Option<&[f32]> {
        self.sq_dists.as_ref().map(|d| &d[q * self.k..(q + 1) * self.k])
    }
}

/// `|result ∩ truth[..k]| / k`, counting each result id once.
pub fn recall(result: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("recall requires k >= 1"));
    }
    if truth.len() < k {
        return Err(Error::param(format!("truth has {} < {k} entries", truth.len())));
    }
    let top = &truth[..k];
    let mut seen: Vec<u32> = Vec::with_capacity(result.len());
    let mut hits = 0usize;
    for &id in result {
        if seen.contains(&id) {
            continue;
        }
        seen.push(id);
        if top.contains(&id) {
            hits += 1;
        }
    }
    Ok(hits as f64 / k as f64)
}
