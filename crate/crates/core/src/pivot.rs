//! Per-point pivots over a PCA prefix and the lower bounds they give.
//!
//! Each resident point `p` keeps a pivot `p^` (its reduced vector `p~`,
//! BF16-truncated, or kept at full precision for the Base variant) and the
//! residual `d(p~, p^)`. For a reduced query `q~` the triangle inequality gives
//! `|d(q~, p^) - d(p~, p^)| <= d(q~, p~) <= d(q, p)`.

use crate::bitset::{BitSet, RankBitmap};
use crate::error::{check_dim, Error, Result};
use crate::graph::{indegree_counts, NeighborGraph};
use crate::transforms::bf16::truncate_slice;
use crate::transforms::distance::{l2_sq, l2_sq_bf16};
use crate::transforms::{Bf16, PcaModel};

/// Relative BF16 truncation bound: 7 explicit mantissa bits.
pub const BF16_REL_ERROR: f64 = 1.0 / 128.0;
/// Absolute slack allowed on top of the relative bound.
pub const RESIDUAL_ABS_SLACK: f64 = 1e-6;
/// Minimum number of usable pairs for epsilon calibration.
pub const MIN_CALIBRATION_PAIRS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PivotPrecision {
    /// Full 32-bit prefix; the pivot is the reduced point itself.
    F32,
    Bf16,
}

#[derive(Clone, Debug, PartialEq)]
enum Pivots {
    F32(Vec<f32>),
    Bf16 { pivots: Vec<Bf16>, residuals: Vec<f32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PivotStore {
    n: usize,
    d_prefix: usize,
    pivots: Pivots,
    /// `None` when every point is resident.
    resident: Option<RankBitmap>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterDecision {
    Skip,
    Fetch,
}

impl PivotStore {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn d_prefix(&self) -> usize {
        self.d_prefix
    }

    pub fn precision(&self) -> PivotPrecision {
        match self.pivots {
            Pivots::F32(_) => PivotPrecision::F32,
            Pivots::Bf16 { .. } => PivotPrecision::Bf16,
        }
    }

    pub fn resident_count(&self) -> usize {
        match &self.resident {
            None => self.n,
            Some(b) => b.bits().count_ones(),
        }
    }

    pub fn has_bitmap(&self) -> bool {
        self.resident.is_some()
    }

    /// Raw bitmap words when residency is partial.
    pub fn resident_words(&self) -> Option<&[u64]> {
        self.resident.as_ref().map(|b| b.bits().words())
    }

    pub fn is_resident(&self, id: usize) -> bool {
        match &self.resident {
            None => id < self.n,
            Some(b) => id < self.n && b.get(id),
        }
    }

    #[inline]
    fn slot(&self, id: usize) -> Option<usize> {
        match &self.resident {
            None => Some(id),
            Some(b) => b.slot(id),
        }
    }

    /// Residuals by resident slot; empty for full-precision pivots.
    pub fn residuals(&self) -> &[f32] {
        match &self.pivots {
            Pivots::F32(_) => &[],
            Pivots::Bf16 { residuals, .. } => residuals,
        }
    }

    pub fn residual(&self, id: usize) -> Option<f32> {
        let s = self.slot(id)?;
        Some(match &self.pivots {
            Pivots::F32(_) => 0.0,
            Pivots::Bf16 { residuals, .. } => residuals[s],
        })
    }

    pub fn bf16_pivots(&self) -> Option<&[Bf16]> {
        match &self.pivots {
            Pivots::Bf16 { pivots, .. } => Some(pivots),
            Pivots::F32(_) => None,
        }
    }

    pub fn f32_pivots(&self) -> Option<&[f32]> {
        match &self.pivots {
            Pivots::F32(p) => Some(p),
            Pivots::Bf16 { .. } => None,
        }
    }

    /// Widened pivot of a resident point.
    pub fn pivot(&self, id: usize) -> Option<Vec<f32>> {
        let s = self.slot(id)?;
        let d = self.d_prefix;
        Some(match &self.pivots {
            Pivots::F32(p) => p[s * d..(s + 1) * d].to_vec(),
            Pivots::Bf16 { pivots, .. } => pivots[s * d..(s + 1) * d].iter().map(|b| b.to_f32()).collect(),
        })
    }

    #[inline]
    fn pivot_sq_distance(&self, q: &[f32], s: usize) -> f32 {
        let d = self.d_prefix;
        match &self.pivots {
            Pivots::F32(p) => l2_sq(q, &p[s * d..(s + 1) * d]),
            Pivots::Bf16 { pivots, .. } => l2_sq_bf16(q, &pivots[s * d..(s + 1) * d]),
        }
    }

    /// Lower bound with no id or shape checks; `q` must have `d_prefix` dims.
    #[inline]
    pub fn lower_bound_unchecked(&self, q: &[f32], id: usize) -> f32 {
        let Some(s) = self.slot(id) else { return 0.0 };
        let dq = self.pivot_sq_distance(q, s).sqrt();
        match &self.pivots {
            Pivots::F32(_) => dq,
            Pivots::Bf16 { residuals, .. } => (dq - residuals[s]).abs(),
        }
    }

    /// `|d(q~, p^) - d(p~, p^)|` for resident points, 0 otherwise.
    pub fn lower_bound(&self, q: &[f32], id: u32) -> Result<f32> {
        check_dim(self.d_prefix, q.len())?;
        if id as usize >= self.n {
            return Err(Error::InvalidId { id, n: self.n });
        }
        Ok(self.lower_bound_unchecked(q, id as usize))
    }

    /// True distances from `q` to the pivots of resident `ids`.
    pub fn query_pivot_distances(&self, q: &[f32], ids: &[u32]) -> Result<Vec<f32>> {
        check_dim(self.d_prefix, q.len())?;
        ids.iter()
            .map(|&id| {
                if id as usize >= self.n {
                    return Err(Error::InvalidId { id, n: self.n });
                }
                let s = self.slot(id as usize).ok_or(Error::NotResident(id))?;
                Ok(self.pivot_sq_distance(q, s).sqrt())
            })
            .collect()
    }

    /// Bytes of pivot vectors only.
    pub fn pivot_bytes(&self) -> usize {
        let r = self.resident_count();
        match self.pivots {
            Pivots::F32(_) => r * self.d_prefix * 4,
            Pivots::Bf16 { .. } => r * self.d_prefix * 2,
        }
    }

    pub fn residual_bytes(&self) -> usize {
        match self.pivots {
            Pivots::F32(_) => 0,
            Pivots::Bf16 { .. } => self.resident_count() * 4,
        }
    }

    pub fn bitmap_bytes(&self) -> usize {
        self.resident.as_ref().map_or(0, |b| b.memory_bytes())
    }

    pub fn memory_bytes(&self) -> usize {
        self.pivot_bytes() + self.residual_bytes() + self.bitmap_bytes()
    }

    /// Reassembles a store from its serialized parts.
    pub fn from_parts(
        n: usize,
        d_prefix: usize,
        resident_words: Option<Vec<u64>>,
        f32_pivots: Option<Vec<f32>>,
        bf16: Option<(Vec<Bf16>, Vec<f32>)>,
    ) -> Result<Self> {
        let resident = match resident_words {
            None => None,
            Some(w) => {
                if w.len() != n.div_ceil(64) {
                    return Err(Error::format("resident bitmap has wrong length"));
                }
                if n % 64 != 0 && w.last().is_some_and(|&x| x >> (n % 64) != 0) {
                    return Err(Error::format("resident bitmap has bits past n"));
                }
                Some(RankBitmap::new(BitSet::from_words(w, n)))
            }
        };
        let r = resident.as_ref().map_or(n, |b| b.bits().count_ones());
        let pivots = match (f32_pivots, bf16) {
            (Some(p), None) if p.len() == r * d_prefix => Pivots::F32(p),
            (None, Some((pivots, residuals))) if pivots.len() == r * d_prefix && residuals.len() == r => {
                if residuals.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::format("invalid residual"));
                }
                Pivots::Bf16 { pivots, residuals }
            }
            _ => return Err(Error::format("pivot payload does not match resident count")),
        };
        Ok(PivotStore {
            n,
            d_prefix,
            pivots,
            resident,
        })
    }
}

/// Builds pivots from an `n x d_prefix` matrix of reduced vectors. With
/// `resident = None` every point is resident.
pub fn build_pivots(
    reduced: &[f32],
    d_prefix: usize,
    resident: Option<&[bool]>,
    precision: PivotPrecision,
) -> Result<PivotStore> {
    if d_prefix == 0 || reduced.len() % d_prefix != 0 {
        return Err(Error::param("reduced matrix is not a whole number of rows"));
    }
    let n = reduced.len() / d_prefix;
    if let Some(i) = reduced.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i / d_prefix));
    }
    if let Some(flags) = resident {
        check_dim(n, flags.len())?;
    }
    let keep = |i: usize| resident.is_none_or(|f| f[i]);
    let rows = reduced.chunks_exact(d_prefix).enumerate().filter(|&(i, _)| keep(i));

    let pivots = match precision {
        PivotPrecision::F32 => Pivots::F32(rows.flat_map(|(_, r)| r.iter().copied()).collect()),
        PivotPrecision::Bf16 => {
            let mut pivots = Vec::new();
            let mut residuals = Vec::new();
            for (i, row) in rows {
                let start = pivots.len();
                truncate_slice(row, &mut pivots)?;
                let res = l2_sq_bf16(row, &pivots[start..]).sqrt();
                let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                assert!(
                    res as f64 <= BF16_REL_ERROR * norm + RESIDUAL_ABS_SLACK,
                    "residual {res} of point {i} exceeds the truncation bound for norm {norm}"
                );
                residuals.push(res);
            }
            Pivots::Bf16 { pivots, residuals }
        }
    };
    let resident = resident.map(|flags| {
        let mut bits = BitSet::new(n);
        for (i, &f) in flags.iter().enumerate() {
            if f {
                bits.set(i);
            }
        }
        RankBitmap::new(bits)
    });
    Ok(PivotStore {
        n,
        d_prefix,
        pivots,
        resident,
    })
}

/// Top `ceil(keep_fraction * n)` points by in-degree, ties to the lower id.
pub fn select_resident_by_indegree(indegree: &[u32], keep_fraction: f64) -> Result<Vec<bool>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::param(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    let n = indegree.len();
    let exact = keep_fraction * n as f64;
    // absorb representation error such as (1/3) * 3
    let count = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    } as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| indegree[b].cmp(&indegree[a]).then(a.cmp(&b)));
    let mut flags = vec![false; n];
    for &i in &order[..count.min(n)] {
        flags[i] = true;
    }
    Ok(flags)
}

pub fn select_resident_points(graph: &NeighborGraph, keep_fraction: f64) -> Result<Vec<bool>> {
    select_resident_by_indegree(&indegree_counts(graph), keep_fraction)
}

/// Multiplier for the estimation rule `LB > epsilon * tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimationCalibration {
    pub epsilon: f32,
    pub p_s: f32,
    pub d_prefix: usize,
    pub sample_size: usize,
}

impl EstimationCalibration {
    pub fn new(epsilon: f32, p_s: f32, d_prefix: usize, sample_size: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::param(format!("epsilon {epsilon} outside (0, 1]")));
        }
        if !(p_s > 0.0 && p_s < 1.0) {
            return Err(Error::param(format!("p_s {p_s} outside (0, 1)")));
        }
        Ok(EstimationCalibration {
            epsilon,
            p_s,
            d_prefix,
            sample_size,
        })
    }
}

/// Sets epsilon to the empirical `(1 - p_s)` quantile (nearest rank) of
/// `d(q~, p~) / d(q, p)` over the sample pairs. Zero-distance pairs are
/// skipped.
pub fn calibrate_epsilon(
    pca: &PcaModel,
    pairs: &[(&[f32], &[f32])],
    p_s: f32,
    d_prefix: usize,
) -> Result<EstimationCalibration> {
    if !(p_s > 0.0 && p_s < 1.0) {
        return Err(Error::param(format!("p_s {p_s} outside (0, 1)")));
    }
    if d_prefix == 0 || d_prefix > pca.dim() {
        return Err(Error::param(format!("prefix {d_prefix} outside 1..={}", pca.dim())));
    }
    if pairs.len() < MIN_CALIBRATION_PAIRS {
        return Err(Error::param(format!(
            "calibration needs at least {MIN_CALIBRATION_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    let mut ratios = Vec::with_capacity(pairs.len());
    for &(q, p) in pairs {
        let full = crate::transforms::distance::l2_sq_f64(q, p).sqrt();
        if full == 0.0 {
            continue;
        }
        if d_prefix == pca.dim() {
            // an orthonormal rotation preserves distances exactly
            ratios.push(1.0);
            continue;
        }
        let qr = pca.apply(q, d_prefix)?;
        let pr = pca.apply(p, d_prefix)?;
        let sub = crate::transforms::distance::l2_sq_f64(&qr, &pr).sqrt();
        ratios.push((sub / full).min(1.0));
    }
    if ratios.is_empty() {
        return Err(Error::param("every calibration pair has zero distance"));
    }
    ratios.sort_by(f64::total_cmp);
    let rank = ((1.0 - p_s as f64) * ratios.len() as f64).ceil() as usize;
    let eps = ratios[rank.clamp(1, ratios.len()) - 1] as f32;
    EstimationCalibration::new(eps.clamp(f32::MIN_POSITIVE, 1.0), p_s, d_prefix, ratios.len())
}

/// One-step estimation test: skip iff `LB > epsilon * tau`.
pub fn estimation_filter(
    store: &PivotStore,
    calib: &EstimationCalibration,
    q: &[f32],
    id: u32,
    tau: f32,
) -> Result<FilterDecision> {
    let lb = store.lower_bound(q, id)?;
    Ok(if lb > calib.epsilon * tau {
        FilterDecision::Skip
    } else {
        FilterDecision::Fetch
    })
}
