//! Index assembly and the query engine.

mod bench;
mod engine;
mod format;

pub use bench::{batch_bench, BenchMode, BenchReport, LatencySummary};
pub use engine::{QueryStats, SearchOutput, SkipAudit};
pub use format::{INDEX_MAGIC, INDEX_VERSION};

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::VectorDataset;
use crate::diskstore::{write_store, DiskStore, IoBackend, SimConfig};
use crate::error::{check_dim, Error, Result};
use crate::graph::{build_vamana, BuildParams, NeighborGraph};
use crate::pivot::{build_pivots, calibrate_epsilon, select_resident_points, EstimationCalibration, PivotPrecision, PivotStore};
use crate::quantizer::{train_pq, PqCodebook, PqCodes, PQ_CENTROIDS};
use crate::transforms::{fit_pca, PcaModel};

/// Rows used to train the PQ codebook.
pub const PQ_TRAIN_SAMPLE: usize = 50_000;
/// Dataset points used as pseudo-queries for epsilon calibration.
pub const CALIBRATION_QUERIES: usize = 1000;
/// Candidates sampled per calibration query.
pub const CALIBRATION_PER_QUERY: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Full-precision prefix pivots.
    Base,
    /// BF16 pivots with residuals.
    Pb,
    /// BF16 pivots for the highest in-degree points only.
    Pbc,
    /// BF16 pivots at the estimation prefix with the `LB > epsilon * tau` rule.
    Est,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Pb, Variant::Pbc, Variant::Est];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Pb => "pb",
            Variant::Pbc => "pbc",
            Variant::Est => "est",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::Base => 0,
            Variant::Pb => 1,
            Variant::Pbc => 2,
            Variant::Est => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Variant::ALL.get(c as usize).copied()
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "pb" => Ok(Variant::Pb),
            "pbc" => Ok(Variant::Pbc),
            "est" => Ok(Variant::Est),
            _ => Err(Error::param(format!("unknown variant '{s}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexConfig {
    pub d_pq: usize,
    pub d_lb: usize,
    pub d_dade: usize,
    pub pq_sub_dim: usize,
    pub pq_iters: usize,
    pub max_degree: usize,
    pub l_build: usize,
    pub alpha: f32,
    pub variant: Variant,
    pub keep_fraction: f64,
    pub p_s: f32,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let b = BuildParams::default();
        IndexConfig {
            d_pq: 256,
            d_lb: 256,
            d_dade: 128,
            pq_sub_dim: 4,
            pq_iters: 10,
            max_degree: b.max_degree,
            l_build: b.l_build,
            alpha: b.alpha,
            variant: Variant::Pb,
            keep_fraction: 0.5,
            p_s: 0.4,
        }
    }
}

impl IndexConfig {
    pub fn build_params(&self) -> BuildParams {
        BuildParams {
            max_degree: self.max_degree,
            l_build: self.l_build,
            alpha: self.alpha,
        }
    }

    /// Clamps prefixes to `dim` and rounds `d_pq` down to whole subspaces.
    pub fn resolved(&self, dim: usize) -> Result<Self> {
        let mut c = *self;
        if c.d_pq == 0 || c.d_lb == 0 || c.d_dade == 0 || c.pq_sub_dim == 0 {
            return Err(Error::param("prefix lengths and PQ sub-dimension must be positive"));
        }
        if !(c.keep_fraction > 0.0 && c.keep_fraction <= 1.0) {
            return Err(Error::param(format!("keep fraction {} outside (0, 1]", c.keep_fraction)));
        }
        if !(c.p_s > 0.0 && c.p_s < 1.0) {
            return Err(Error::param(format!("p_s {} outside (0, 1)", c.p_s)));
        }
        c.build_params().validate()?;
        c.d_lb = c.d_lb.min(dim);
        c.d_dade = c.d_dade.min(dim);
        c.pq_sub_dim = c.pq_sub_dim.min(dim);
        c.d_pq = c.d_pq.min(dim) / c.pq_sub_dim * c.pq_sub_dim;
        Ok(c)
    }

    /// Pivot prefix used by a variant.
    pub fn pivot_prefix(&self, variant: Variant) -> usize {
        match variant {
            Variant::Est => self.d_dade,
            _ => self.d_lb,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub l: usize,
    pub b: usize,
    pub epsilon_override: Option<f32>,
    /// When false, tau is treated as infinite and every candidate is read.
    pub filter: bool,
    /// Record every skip for later verification.
    pub audit: bool,
}

impl SearchParams {
    pub fn new(k: usize, l: usize, b: usize) -> Self {
        SearchParams {
            k,
            l,
            b,
            epsilon_override: None,
            filter: true,
            audit: false,
        }
    }

    pub fn with_epsilon(mut self, eps: f32) -> Self {
        self.epsilon_override = Some(eps);
        self
    }

    pub fn unfiltered(mut self) -> Self {
        self.filter = false;
        self
    }

    pub fn audited(mut self) -> Self {
        self.audit = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l < self.k {
            return Err(Error::param(format!("need L >= K >= 1, got K = {}, L = {}", self.k, self.l)));
        }
        if self.b == 0 {
            return Err(Error::param("queue depth B must be at least 1"));
        }
        if let Some(e) = self.epsilon_override {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::param(format!("epsilon {e} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams::new(10, 100, 32)
    }
}

/// Accounted bytes per in-memory structure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryReport {
    pub graph: usize,
    pub pq_codes: usize,
    pub pq_codebook: usize,
    pub pivots: usize,
    pub residuals: usize,
    pub resident_bitmap: usize,
    pub pca: usize,
}

impl MemoryReport {
    /// Bytes spent on filtering structures.
    pub fn filter_bytes(&self) -> usize {
        self.pivots + self.residuals + self.resident_bitmap
    }

    pub fn total(&self) -> usize {
        self.graph + self.pq_codes + self.pq_codebook + self.filter_bytes() + self.pca
    }
}

pub(crate) struct Core {
    pub config: IndexConfig,
    pub pca: PcaModel,
    pub pq: PqCodebook,
    pub codes: PqCodes,
    pub graph: NeighborGraph,
    pub calibration: Option<EstimationCalibration>,
    pub store: DiskStore,
}

/// A built or loaded index. Clones share the immutable structures.
#[derive(Clone)]
pub struct SkipDiskIndex {
    core: Arc<Core>,
    variant: Variant,
    pivots: Arc<PivotStore>,
    io: IoBackend,
}

fn pq_training_rows(reduced: &[f32], d_pq: usize, seed: u64) -> Vec<f32> {
    let n = reduced.len() / d_pq;
    let ids: Vec<usize> = if n > PQ_TRAIN_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let mut s = sample(&mut rng, n, PQ_TRAIN_SAMPLE).into_vec();
        s.sort_unstable();
        s
    } else {
        // tiny datasets are cycled up to one row per centroid
        (0..n.max(PQ_CENTROIDS)).map(|i| i % n).collect()
    };
    ids.iter().flat_map(|&i| &reduced[i * d_pq..(i + 1) * d_pq]).copied().collect()
}

fn build_variant_pivots(
    config: &IndexConfig,
    pca: &PcaModel,
    graph: &NeighborGraph,
    data: &VectorDataset,
    variant: Variant,
) -> Result<PivotStore> {
    let d = config.pivot_prefix(variant);
    let reduced = pca.apply_dataset(data, d)?;
    match variant {
        Variant::Base => build_pivots(&reduced, d, None, PivotPrecision::F32),
        Variant::Pb | Variant::Est => build_pivots(&reduced, d, None, PivotPrecision::Bf16),
        Variant::Pbc => {
            let resident = select_resident_points(graph, config.keep_fraction)?;
            build_pivots(&reduced, d, Some(&resident), PivotPrecision::Bf16)
        }
    }
}

/// Calibrates epsilon on dataset points used as pseudo-queries against the
/// candidates an unfiltered in-memory traversal generates for them.
fn calibrate(
    data: &VectorDataset,
    pca: &PcaModel,
    pq: &PqCodebook,
    codes: &PqCodes,
    graph: &NeighborGraph,
    config: &IndexConfig,
    seed: u64,
) -> Result<EstimationCalibration> {
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca11_b8a7);
    let nq = CALIBRATION_QUERIES.min(n);
    let mut queries = sample(&mut rng, n, nq).into_vec();
    queries.sort_unstable();
    let l = config.l_build.clamp(CALIBRATION_PER_QUERY + 1, 200);
    let mut pairs: Vec<(&[f32], &[f32])> = Vec::new();
    for &qi in &queries {
        let q = data.row(qi);
        let reduced = pca.apply(q, pq.dim())?;
        let lut = pq.build_lut(&reduced)?;
        let popped = engine::traverse_candidates(graph, codes, &lut, l);
        pairs.extend(
            popped
                .into_iter()
                .filter(|&p| p as usize != qi)
                .take(CALIBRATION_PER_QUERY)
                .map(|p| (q, data.row(p as usize))),
        );
    }
    calibrate_epsilon(pca, &pairs, config.p_s, config.d_dade)
}

/// Builds every structure, writes the vector store to `store_path` and
/// returns the index for `config.variant`.
pub fn build_index(
    dataset: &VectorDataset,
    config: &IndexConfig,
    seed: u64,
    store_path: impl AsRef<Path>,
) -> Result<SkipDiskIndex> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::param(format!("an index needs at least 2 points, got {n}")));
    }
    let config = config.resolved(dataset.dim())?;
    let pca = fit_pca(dataset)?;
    let reduced_pq = pca.apply_dataset(dataset, config.d_pq)?;
    let train = pq_training_rows(&reduced_pq, config.d_pq, seed);
    let pq = train_pq(&train, config.d_pq, config.pq_sub_dim, config.pq_iters, seed)?;
    let codes = pq.encode_all(&reduced_pq)?;
    drop(reduced_pq);
    let graph = build_vamana(dataset, config.build_params(), seed)?;
    let calibration = calibrate(dataset, &pca, &pq, &codes, &graph, &config, seed).ok();
    if config.variant == Variant::Est && calibration.is_none() {
        return Err(Error::param("too few points to calibrate the estimation variant"));
    }
    let pivots = build_variant_pivots(&config, &pca, &graph, dataset, config.variant)?;
    write_store(dataset, store_path.as_ref())?;
    let store = DiskStore::open(store_path.as_ref())?;
    Ok(SkipDiskIndex {
        variant: config.variant,
        core: Arc::new(Core {
            config,
            pca,
            pq,
            codes,
            graph,
            calibration,
            store,
        }),
        pivots: Arc::new(pivots),
        io: IoBackend::Simulated(SimConfig::default()),
    })
}

impl SkipDiskIndex {
    /// Same index with pivots rebuilt for another variant; vectors are read
    /// back from the store.
    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        if variant == self.variant {
            return Ok(self.clone());
        }
        if variant == Variant::Est && self.core.calibration.is_none() {
            return Err(Error::param("index has no estimation calibration"));
        }
        let data = self.core.store.read_all()?;
        let pivots = build_variant_pivots(&self.core.config, &self.core.pca, &self.core.graph, &data, variant)?;
        Ok(SkipDiskIndex {
            core: Arc::clone(&self.core),
            variant,
            pivots: Arc::new(pivots),
            io: self.io,
        })
    }

    pub fn with_io(mut self, io: IoBackend) -> Self {
        self.io = io;
        self
    }

    pub fn io(&self) -> IoBackend {
        self.io
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Build configuration with the active variant.
    pub fn config(&self) -> IndexConfig {
        IndexConfig {
            variant: self.variant,
            ..self.core.config
        }
    }

    pub fn len(&self) -> usize {
        self.core.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.graph.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.core.pca.dim()
    }

    pub fn pca(&self) -> &PcaModel {
        &self.core.pca
    }

    pub fn pq(&self) -> &PqCodebook {
        &self.core.pq
    }

    pub fn codes(&self) -> &PqCodes {
        &self.core.codes
    }

    pub fn graph(&self) -> &NeighborGraph {
        &self.core.graph
    }

    pub fn pivots(&self) -> &PivotStore {
        &self.pivots
    }

    pub fn calibration(&self) -> Option<&EstimationCalibration> {
        self.core.calibration.as_ref()
    }

    pub fn store(&self) -> &DiskStore {
        &self.core.store
    }

    pub fn memory_report(&self) -> MemoryReport {
        let d = self.dim();
        MemoryReport {
            graph: self.core.graph.memory_bytes(),
            pq_codes: self.core.codes.memory_bytes(),
            pq_codebook: self.core.pq.memory_bytes(),
            pivots: self.pivots.pivot_bytes(),
            residuals: self.pivots.residual_bytes(),
            resident_bitmap: self.pivots.bitmap_bytes(),
            pca: 4 * (d * d + 2 * d),
        }
    }

    /// Writes the index file (everything except the vectors).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, format::encode_index(self))?;
        Ok(())
    }

    pub fn load(index_path: impl AsRef<Path>, store_path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(index_path)?;
        let store = DiskStore::open(store_path)?;
        format::decode_index(&bytes, store)
    }

    /// Exact reduced-space distance `d(q~, p~)` at the active pivot prefix,
    /// read through the store; used to audit estimation skips.
    pub fn reduced_distance(&self, query: &[f32], id: u32) -> Result<f64> {
        check_dim(self.dim(), query.len())?;
        let d = self.pivots.d_prefix();
        let p = self.core.store.read_sync(id)?;
        let qr = self.core.pca.apply(query, d)?;
        let pr = self.core.pca.apply(&p, d)?;
        Ok(crate::transforms::distance::l2_sq_f64(&qr, &pr).sqrt())
    }
}
