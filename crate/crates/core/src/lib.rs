//! Disk-memory hybrid approximate nearest neighbor search.
//!
//! Full-precision vectors live in a page-aligned file on disk. Memory holds
//! the proximity graph, PQ codes over a PCA prefix for traversal, and one
//! BF16 pivot per point (a truncated PCA prefix plus the distance to it).
//! The pivot gives a triangle-inequality lower bound on the true distance,
//! which lets the search skip disk reads for candidates that cannot enter
//! the result set. Reads that do happen are overlapped with graph traversal
//! through a bounded asynchronous queue.

pub mod analysis;
pub mod dataio;
pub mod diskstore;
pub mod error;
pub mod graph;
pub mod kmeans;
pub mod pivot;
pub mod quantizer;
pub mod search;
pub mod transforms;

mod bitset;
mod codec;

pub use dataio::{GroundTruth, Neighbor, VectorDataset};
pub use diskstore::{DiskStore, IoBackend, IoStats, SimConfig};
pub use error::{Error, Result};
pub use graph::{BuildParams, NeighborGraph};
pub use pivot::{EstimationCalibration, PivotStore};
pub use quantizer::{PqCodebook, PqCodes};
pub use search::{
    IndexConfig, MemoryReport, QueryStats, SearchOutput, SearchParams, SkipDiskIndex, Variant,
};
pub use transforms::{Bf16, PcaModel};
