//! Bit-level pruning of 32-bit floats to BF16.
//!
//! A BF16 value keeps the sign, all eight exponent bits and the top seven
//! mantissa bits of an IEEE-754 single. Conversion here truncates (drops the
//! low sixteen bits) rather than rounding, so `|widen(x') - x| < 2^-7 |x|`
//! for every normal `x`.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ZERO: Bf16 = Bf16(0);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Bf16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Widen by appending sixteen zero mantissa bits. Exact.
    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    /// Truncating conversion without the finiteness check.
    #[inline]
    pub fn truncate(x: f32) -> Self {
        Bf16((x.to_bits() >> 16) as u16)
    }
}

/// Truncate a finite 32-bit float to BF16.
pub fn to_bf16(x: f32) -> Result<Bf16> {
    if !x.is_finite() {
        return Err(Error::param(format!("cannot convert {x} to bf16")));
    }
    Ok(Bf16::truncate(x))
}

/// Componentwise truncation of a slice into `out`.
pub fn truncate_slice(src: &[f32], out: &mut Vec<Bf16>) -> Result<()> {
    out.reserve(src.len());
    for (i, &x) in src.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite(i));
        }
        out.push(Bf16::truncate(x));
    }
    Ok(())
}
