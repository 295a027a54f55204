//! Squared Euclidean distance kernels.
//!
//! The kernels accumulate into eight independent lanes so the compiler can
//! keep them in vector registers. Lane order is fixed, so results are
//! reproducible for identical inputs.

use super::bf16::Bf16;
use crate::error::{check_dim, Result};

const LANES: usize = 8;

/// Squared distance between two equal-length slices.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    fold(acc) + tail
}

/// Squared distance between a 32-bit vector and a BF16 vector. Each BF16
/// operand is widened to 32 bits before the subtraction.
#[inline]
pub fn l2_sq_bf16(a: &[f32], b: &[Bf16]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            let d = x[i] - y[i].to_f32();
            acc[i] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y.to_f32();
        tail += d * d;
    }
    fold(acc) + tail
}

#[inline]
fn fold(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Checked form of [`l2_sq`] for reduced vectors.
pub fn subspace_sq_distance(x: &[f32], y: &[f32]) -> Result<f32> {
    check_dim(x.len(), y.len())?;
    Ok(l2_sq(x, y))
}

/// Checked mixed-precision form of [`l2_sq_bf16`].
pub fn subspace_sq_distance_bf16(x: &[f32], y: &[Bf16]) -> Result<f32> {
    check_dim(x.len(), y.len())?;
    Ok(l2_sq_bf16(x, y))
}

/// Squared distance accumulated sequentially in f64. Used where an exact,
/// order-defined value matters more than speed (ground truth).
#[inline]
pub fn l2_sq_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}
