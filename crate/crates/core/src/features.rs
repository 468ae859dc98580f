//! Entropy features (EFs) of a bitmap.
//!
//! Every bitmap row is reduced to the Shannon entropy of its byte histogram,
//! `E = -sum p_i log2 p_i` over the 256 byte values, and each entropy is
//! written as an unsigned fixed-point number with [`INT_BITS`] integer bits
//! and `frac_bits` fractional bits, truncated toward zero. The EF bit stream
//! is the concatenation of the row encodings in row order, MSB first.

use alloc::vec::Vec;

use crate::bits::BitString;
use crate::dram::Bitmap;
use crate::{Error, Result};

/// Integer bits of every fixed-point EF. Row entropy is below 8 for rows
/// narrower than 256 bytes.
pub const INT_BITS: u8 = 3;
pub const MIN_FRAC_BITS: u8 = 1;
pub const MAX_FRAC_BITS: u8 = 23;

/// Shannon entropy (bits) of the byte histogram of `row`.
pub fn row_entropy(row: &[u8]) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::EmptyRow);
    }
    let mut counts = [0u32; 256];
    for &b in row {
        counts[b as usize] += 1;
    }
    let n = row.len() as f64;
    let mut acc = 0.0;
    for &c in counts.iter().filter(|&&c| c > 0) {
        let p = c as f64 / n;
        acc += p * libm::log2(p);
    }
    // -0.0 for a single-symbol row
    Ok(if acc == 0.0 { 0.0 } else { -acc })
}

fn check_frac_bits(frac_bits: u8) -> Result<()> {
    if !(MIN_FRAC_BITS..=MAX_FRAC_BITS).contains(&frac_bits) {
        return Err(Error::InvalidFracBits(frac_bits));
    }
    Ok(())
}

/// Truncated fixed-point code of one value: `floor(value * 2^frac_bits)`.
pub fn fixed_point(value: f64, frac_bits: u8) -> Result<u64> {
    check_frac_bits(frac_bits)?;
    if !(0.0..8.0).contains(&value) {
        return Err(Error::ValueOutOfRange(value));
    }
    let scaled = libm::floor(value * (1u64 << frac_bits) as f64) as u64;
    Ok(scaled.min((1u64 << (INT_BITS + frac_bits)) - 1))
}

/// Encodes `values` as `3 + frac_bits`-bit fixed-point words, MSB first.
pub fn quantize(values: &[f64], frac_bits: u8) -> Result<BitString> {
    check_frac_bits(frac_bits)?;
    let width = (INT_BITS + frac_bits) as u32;
    let mut out = BitString::with_capacity(values.len() * width as usize);
    for &v in values {
        out.push_bits(fixed_point(v, frac_bits)?, width);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyFeatures {
    values: Vec<f64>,
    frac_bits: u8,
    bits: BitString,
}

impl EntropyFeatures {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frac_bits(&self) -> u8 {
        self.frac_bits
    }

    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    pub fn bits_per_row(&self) -> usize {
        (INT_BITS + self.frac_bits) as usize
    }

    /// Re-encodes the same entropies at another precision.
    pub fn requantize(&self, frac_bits: u8) -> Result<EntropyFeatures> {
        Ok(EntropyFeatures {
            bits: quantize(&self.values, frac_bits)?,
            values: self.values.clone(),
            frac_bits,
        })
    }
}

/// Per-row entropies of a bitmap.
pub fn entropy_values(bitmap: &Bitmap) -> Result<Vec<f64>> {
    if bitmap.rows() == 0 || bitmap.cols() == 0 || bitmap.cols() > 255 {
        return Err(Error::MalformedBitmap);
    }
    bitmap.iter_rows().map(row_entropy).collect()
}

/// Same as [`entropy_values`], but rows that are byte-identical to the same
/// row of `base` take their value from `base_values` instead of being
/// recomputed. Repeated reads of one segment differ in few rows.
pub fn entropy_values_from(bitmap: &Bitmap, base: &Bitmap, base_values: &[f64]) -> Result<Vec<f64>> {
    if base.rows() != bitmap.rows() || base.cols() != bitmap.cols() || base_values.len() != bitmap.rows() {
        return Err(Error::LengthMismatch {
            expected: bitmap.rows(),
            actual: base_values.len(),
        });
    }
    if bitmap.rows() == 0 || bitmap.cols() == 0 || bitmap.cols() > 255 {
        return Err(Error::MalformedBitmap);
    }
    bitmap
        .iter_rows()
        .zip(base.iter_rows())
        .zip(base_values)
        .map(|((row, b), &v)| if row == b { Ok(v) } else { row_entropy(row) })
        .collect()
}

/// Entropy features of a bitmap at `frac_bits` fractional bits.
pub fn generate_ef(bitmap: &Bitmap, frac_bits: u8) -> Result<EntropyFeatures> {
    check_frac_bits(frac_bits)?;
    let values = entropy_values(bitmap)?;
    let bits = quantize(&values, frac_bits)?;
    Ok(EntropyFeatures {
        values,
        frac_bits,
        bits,
    })
}
