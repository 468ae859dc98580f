//! Packed bit strings.
//!
//! Bits are packed MSB-first: bit `i` lives in byte `i / 8` at position
//! `7 - i % 8`. The length-prefixed wire encoding is a 32-bit big-endian bit
//! count followed by the packed bytes; trailing pad bits are zero.

use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bytes: alloc::vec![0; len.div_ceil(8)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = Self {
            bytes: alloc::vec![0xff; len.div_ceil(8)],
            len,
        };
        s.clear_padding();
        s
    }

    /// Wraps packed bytes; bits past `len` are cleared.
    pub fn from_packed(mut bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                expected: len.div_ceil(8),
                actual: bytes.len(),
            });
        }
        bytes.shrink_to_fit();
        let mut s = Self { bytes, len };
        s.clear_padding();
        Ok(s)
    }

    /// Parses a string of `'0'`/`'1'` characters. Whitespace and `_` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::new();
        for c in text.chars() {
            match c {
                '0' => s.push(false),
                '1' => s.push(true),
                '_' => {}
                c if c.is_whitespace() => {}
                _ => return Err(Error::Decode("bit string contains a non-binary digit")),
            }
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn as_packed(&self) -> &[u8] {
        &self.bytes
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for k in (0..width).rev() {
            self.push((value >> k) & 1 == 1);
        }
    }

    pub fn extend_from(&mut self, other: &BitString) {
        for b in other.iter() {
            self.push(b);
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 0x80 >> (i % 8);
        if bit {
            self.bytes[i / 8] |= m;
        } else {
            self.bytes[i / 8] &= !m;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let b = self.get(i);
        self.set(i, !b);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Copies `len` bits starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<BitString> {
        if start.checked_add(len).is_none_or(|end| end > self.len) {
            return Err(Error::LengthMismatch {
                expected: start.saturating_add(len),
                actual: self.len,
            });
        }
        let mut out = BitString::with_capacity(len);
        for i in start..start + len {
            out.push(self.get(i));
        }
        Ok(out)
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        self.check_len(other)?;
        let bytes = self.bytes.iter().zip(&other.bytes).map(|(a, b)| a ^ b).collect();
        Ok(BitString { bytes, len: self.len })
    }

    pub fn hamming(&self, other: &BitString) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Hamming distance restricted to positions where `mask` is set.
    pub fn masked_hamming(&self, other: &BitString, mask: &BitString) -> Result<usize> {
        self.check_len(other)?;
        self.check_len(mask)?;
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .zip(&mask.bytes)
            .map(|((a, b), m)| ((a ^ b) & m).count_ones() as usize)
            .sum())
    }

    pub fn and(&self, other: &BitString) -> Result<BitString> {
        self.check_len(other)?;
        let bytes = self.bytes.iter().zip(&other.bytes).map(|(a, b)| a & b).collect();
        Ok(BitString { bytes, len: self.len })
    }

    /// 32-bit big-endian bit count followed by the packed bytes.
    pub fn to_prefixed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.bytes.len());
        out.extend_from_slice(&(self.len as u32).to_be_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    /// Inverse of [`to_prefixed_bytes`](Self::to_prefixed_bytes). Returns the
    /// decoded string and the number of input bytes consumed.
    pub fn from_prefixed_bytes(input: &[u8]) -> Result<(BitString, usize)> {
        let head: [u8; 4] = input
            .get(..4)
            .and_then(|h| h.try_into().ok())
            .ok_or(Error::Decode("truncated bit-count prefix"))?;
        let len = u32::from_be_bytes(head) as usize;
        let nbytes = len.div_ceil(8);
        let body = input
            .get(4..4 + nbytes)
            .ok_or(Error::Decode("truncated bit string body"))?;
        if !len.is_multiple_of(8) && body[nbytes - 1] & (0xff >> (len % 8)) != 0 {
            return Err(Error::Decode("nonzero padding bits"));
        }
        Ok((BitString::from_packed(body.to_vec(), len)?, 4 + nbytes))
    }

    fn check_len(&self, other: &BitString) -> Result<()> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: other.len,
            });
        }
        Ok(())
    }

    fn clear_padding(&mut self) {
        if !self.len.is_multiple_of(8) {
            if let Some(last) = self.bytes.last_mut() {
                *last &= !(0xff >> (self.len % 8));
            }
        }
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut s = BitString::new();
        for b in iter {
            s.push(b);
        }
        s
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({}:", self.len)?;
        fmt::Display::fmt(self, f)?;
        f.write_str(")")
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Fraction of differing positions between two equal-length, non-empty strings.
pub fn fractional_hd(a: &BitString, b: &BitString) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, actual: 0 });
    }
    Ok(a.hamming(b)? as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn bits(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    #[test]
    fn msb_first_packing() {
        let s = bits("1000_0001 1");
        assert_eq!(s.as_packed(), &[0x81, 0x80]);
        assert_eq!(s.len(), 9);
    }

    #[test]
    fn hd_examples() {
        assert_eq!(fractional_hd(&bits("0000"), &bits("0000")).unwrap(), 0.0);
        assert_eq!(fractional_hd(&bits("0101"), &bits("1010")).unwrap(), 1.0);
        let a = BitString::from_packed(alloc::vec![0x0f], 8).unwrap();
        let b = BitString::from_packed(alloc::vec![0x00], 8).unwrap();
        assert_eq!(fractional_hd(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn hd_errors() {
        assert!(matches!(
            fractional_hd(&bits("01"), &bits("011")),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(fractional_hd(&BitString::new(), &BitString::new()).is_err());
    }

    #[test]
    fn prefixed_encoding_rejects_garbage() {
        assert!(BitString::from_prefixed_bytes(&[0, 0, 0]).is_err());
        assert!(BitString::from_prefixed_bytes(&[0, 0, 0, 9, 0xff]).is_err());
        // 3 bits, padding set
        assert!(BitString::from_prefixed_bytes(&[0, 0, 0, 3, 0xf0]).is_err());
        let (s, used) = BitString::from_prefixed_bytes(&[0, 0, 0, 3, 0xa0, 0x77]).unwrap();
        assert_eq!(s.to_string(), "101");
        assert_eq!(used, 5);
    }

    #[test]
    fn slice_bounds() {
        let s = bits("110010");
        assert_eq!(s.slice(2, 3).unwrap().to_string(), "001");
        assert!(s.slice(4, 3).is_err());
        assert!(s.slice(usize::MAX, 2).is_err());
    }

    fn arb_bits(max: usize) -> impl Strategy<Value = BitString> {
        proptest::collection::vec(any::<bool>(), 0..max).prop_map(BitString::from_iter)
    }

    proptest! {
        #[test]
        fn prefixed_roundtrip(s in arb_bits(300)) {
            let enc = s.to_prefixed_bytes();
            let (back, used) = BitString::from_prefixed_bytes(&enc).unwrap();
            prop_assert_eq!(used, enc.len());
            prop_assert_eq!(back, s);
        }

        #[test]
        fn hd_is_a_metric(v in proptest::collection::vec(any::<(bool, bool, bool)>(), 1..200)) {
            let a: BitString = v.iter().map(|t| t.0).collect();
            let b: BitString = v.iter().map(|t| t.1).collect();
            let c: BitString = v.iter().map(|t| t.2).collect();
            let ab = a.hamming(&b).unwrap();
            prop_assert_eq!(ab, b.hamming(&a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(a.hamming(&c).unwrap() <= ab + b.hamming(&c).unwrap());
        }
    }
}
