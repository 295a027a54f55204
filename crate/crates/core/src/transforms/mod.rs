//! PCA rotation with prefix truncation, BF16 truncation and the distance
//! kernels used on reduced vectors.

pub mod bf16;
pub mod distance;
pub mod pca;

pub use bf16::{to_bf16, Bf16};
pub use distance::{l2_sq, l2_sq_bf16, subspace_sq_distance, subspace_sq_distance_bf16};
pub use pca::{fit_pca, PcaModel};
