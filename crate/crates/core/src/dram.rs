//! Simulated DRAM population with latency-induced bit failures.
//!
//! Each cell of a segment belongs to one of three classes when the segment is
//! read back with reduced timing parameters:
//!
//! * `Stable` cells return the written bit.
//! * `AlwaysFails` cells return the inverted bit on every read.
//! * `Marginal` cells invert when the die temperature reaches their
//!   threshold `theta`, and additionally invert with probability `p_noise`
//!   on any single read (the draw is keyed by the read nonce).
//!
//! A failure XORs the written bit, so the set of failing positions does not
//! depend on the input pattern. Cell `8 * b + k` is bit `k` (LSB-first) of
//! byte `b`.
//!
//! Cell classes are a pure function of `(device_seed, chip, bank, segment,
//! cell)`, so two models built from the same seed are identical, and a
//! [`SegmentModel`] can be materialized on demand instead of storing the whole
//! device.

use alloc::vec::Vec;
use core::ops::RangeInclusive;

use crate::mix::{combine, mix64, unit};
use crate::{Error, Result};

/// Operating temperature envelope in °C.
pub const TEMPERATURE_RANGE: RangeInclusive<f64> = 25.0..=55.0;
/// Reference (room) temperature in °C.
pub const REFERENCE_TEMPERATURE: f64 = 25.0;

/// Marginal thresholds are whole degrees in `(25, 55]`.
const THETA_MIN: u32 = 26;
const THETA_STEPS: u32 = 30;

const SALT_CLASS: u64 = 0x636c_6173_735f_7631;
const SALT_NOISE: u64 = 0x6e6f_6973_655f_7631;
const SALT_PATTERN: u64 = 0x7061_7474_6572_6e31;

/// Default class fractions of the calibrated device profile.
pub const DEFAULT_F_FAIL: f64 = 0.135;
pub const DEFAULT_F_MARGINAL: f64 = 5.0e-5;
pub const DEFAULT_P_NOISE_MAX: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub chips: u32,
    pub banks_per_chip: u32,
    pub segments_per_bank: u32,
    pub segment_bytes: usize,
    /// Bitmap row width `C` in bytes.
    pub row_bytes: usize,
}

impl Default for Geometry {
    /// One chip, 8 banks, 4 segments of 32 KiB read as 256 x 128 bitmaps.
    fn default() -> Self {
        Geometry {
            chips: 1,
            banks_per_chip: 8,
            segments_per_bank: 4,
            segment_bytes: 32768,
            row_bytes: 128,
        }
    }
}

impl Geometry {
    /// Segments read as 256 x 125 bitmaps (32000 bytes).
    pub fn wide_profile() -> Self {
        Geometry {
            segment_bytes: 32000,
            row_bytes: 125,
            ..Geometry::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chips == 0 || self.banks_per_chip == 0 || self.segments_per_bank == 0 {
            return Err(Error::InvalidGeometry("chip, bank and segment counts must be >= 1"));
        }
        if self.segment_bytes == 0 || self.row_bytes == 0 {
            return Err(Error::InvalidGeometry("segment and row sizes must be >= 1"));
        }
        // log2(C) must stay below 8 for the 3-bit integer part of an EF.
        if self.row_bytes > 255 {
            return Err(Error::InvalidGeometry("row width must be at most 255 bytes"));
        }
        if !self.segment_bytes.is_multiple_of(self.row_bytes) {
            return Err(Error::InvalidGeometry("segment size not divisible by row width"));
        }
        if self.segment_bytes > (u32::MAX / 8) as usize {
            return Err(Error::InvalidGeometry("segment too large"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.segment_bytes / self.row_bytes
    }

    pub fn cells_per_segment(&self) -> usize {
        self.segment_bytes * 8
    }

    pub fn segment_count(&self) -> usize {
        self.chips as usize * self.banks_per_chip as usize * self.segments_per_bank as usize
    }

    pub fn contains(&self, addr: SegmentAddr) -> bool {
        addr.chip < self.chips && addr.bank < self.banks_per_chip && addr.segment < self.segments_per_bank
    }

    /// All segment addresses, chip-major.
    pub fn addresses(&self) -> impl Iterator<Item = SegmentAddr> + '_ {
        (0..self.chips).flat_map(move |chip| {
            (0..self.banks_per_chip).flat_map(move |bank| {
                (0..self.segments_per_bank).map(move |segment| SegmentAddr::new(chip, bank, segment))
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentAddr {
    pub chip: u32,
    pub bank: u32,
    pub segment: u32,
}

impl SegmentAddr {
    pub const fn new(chip: u32, bank: u32, segment: u32) -> Self {
        SegmentAddr { chip, bank, segment }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellClass {
    Stable,
    Marginal { theta: f64, p_noise: f64 },
    AlwaysFails,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputPattern {
    AllZero,
    AllOne,
    /// Bytes alternate 0x55, 0xAA.
    Checkerboard,
    SeededRandom(u64),
}

impl InputPattern {
    pub fn expand(&self, len: usize) -> Vec<u8> {
        match *self {
            InputPattern::AllZero => alloc::vec![0x00; len],
            InputPattern::AllOne => alloc::vec![0xff; len],
            InputPattern::Checkerboard => (0..len).map(|i| if i % 2 == 0 { 0x55 } else { 0xaa }).collect(),
            InputPattern::SeededRandom(seed) => {
                let key = combine(seed, SALT_PATTERN);
                let mut out = Vec::with_capacity(len);
                let mut word = 0u64;
                while out.len() < len {
                    let z = mix64(key ^ word);
                    let take = (len - out.len()).min(8);
                    out.extend_from_slice(&z.to_le_bytes()[..take]);
                    word += 1;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadCondition {
    pub temperature: f64,
    pub read_nonce: u64,
    pub pattern: InputPattern,
}

impl ReadCondition {
    pub fn new(temperature: f64, read_nonce: u64, pattern: InputPattern) -> Self {
        ReadCondition {
            temperature,
            read_nonce,
            pattern,
        }
    }

    fn check(&self) -> Result<()> {
        if !TEMPERATURE_RANGE.contains(&self.temperature) {
            return Err(Error::TemperatureOutOfRange(self.temperature));
        }
        Ok(())
    }
}

/// An `R x C` byte matrix read back from one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Bitmap {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::MalformedBitmap);
        }
        Ok(Bitmap { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn row(&self, j: usize) -> &[u8] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.cols)
    }

    /// Number of differing bits.
    pub fn hamming(&self, other: &Bitmap) -> Result<usize> {
        if self.data.len() != other.data.len() {
            return Err(Error::LengthMismatch {
                expected: self.data.len(),
                actual: other.data.len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    pub fn bit_len(&self) -> usize {
        self.data.len() * 8
    }
}

/// Per-device ground truth of the failure behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    seed: u64,
    geometry: Geometry,
    f_fail: f64,
    f_marginal: f64,
    p_noise_max: f64,
}

/// Builds a device with the default per-read noise ceiling.
pub fn build_device(device_seed: u64, geometry: Geometry, f_fail: f64, f_marginal: f64) -> Result<DeviceModel> {
    DeviceModel::new(device_seed, geometry, f_fail, f_marginal, DEFAULT_P_NOISE_MAX)
}

impl DeviceModel {
    /// `p_noise_max` bounds the per-read flip probability of marginal cells;
    /// each marginal cell draws its own `p_noise` uniformly from
    /// `(0, p_noise_max]`. Zero gives a noise-free device.
    pub fn new(device_seed: u64, geometry: Geometry, f_fail: f64, f_marginal: f64, p_noise_max: f64) -> Result<Self> {
        geometry.validate()?;
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(f_fail) || !in_unit(f_marginal) || f_fail + f_marginal > 1.0 {
            return Err(Error::InvalidFractions { f_fail, f_marginal });
        }
        if !in_unit(p_noise_max) {
            return Err(Error::InvalidFractions { f_fail, f_marginal });
        }
        Ok(DeviceModel {
            seed: device_seed,
            geometry,
            f_fail,
            f_marginal,
            p_noise_max,
        })
    }

    /// The calibrated default device.
    pub fn calibrated(device_seed: u64, geometry: Geometry) -> Result<Self> {
        Self::new(
            device_seed,
            geometry,
            DEFAULT_F_FAIL,
            DEFAULT_F_MARGINAL,
            DEFAULT_P_NOISE_MAX,
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn f_fail(&self) -> f64 {
        self.f_fail
    }

    pub fn f_marginal(&self) -> f64 {
        self.f_marginal
    }

    pub fn p_noise_max(&self) -> f64 {
        self.p_noise_max
    }

    fn segment_key(&self, addr: SegmentAddr) -> u64 {
        let k = combine(self.seed, SALT_CLASS);
        let k = combine(k, addr.chip as u64);
        let k = combine(k, addr.bank as u64);
        combine(k, addr.segment as u64)
    }

    fn class_from_key(&self, key: u64, cell: u32) -> CellClass {
        let z = combine(key, cell as u64);
        let u = unit(z);
        if u < self.f_fail {
            CellClass::AlwaysFails
        } else if u < self.f_fail + self.f_marginal {
            let step = (unit(combine(z, 1)) * THETA_STEPS as f64) as u32;
            let theta = (THETA_MIN + step.min(THETA_STEPS - 1)) as f64;
            // (0, p_max]
            let p_noise = self.p_noise_max * (1.0 - unit(combine(z, 2)));
            CellClass::Marginal { theta, p_noise }
        } else {
            CellClass::Stable
        }
    }

    /// Class of one cell; `cell` indexes bits within the segment.
    pub fn cell_class(&self, addr: SegmentAddr, cell: u32) -> Result<CellClass> {
        if !self.geometry.contains(addr) {
            return Err(Error::AddressOutOfRange);
        }
        if cell as usize >= self.geometry.cells_per_segment() {
            return Err(Error::AddressOutOfRange);
        }
        Ok(self.class_from_key(self.segment_key(addr), cell))
    }

    /// Materializes the class table of one segment.
    pub fn segment(&self, addr: SegmentAddr) -> Result<SegmentModel> {
        if !self.geometry.contains(addr) {
            return Err(Error::AddressOutOfRange);
        }
        let key = self.segment_key(addr);
        let mut fail_mask = alloc::vec![0u8; self.geometry.segment_bytes];
        let mut marginals = Vec::new();
        for cell in 0..self.geometry.cells_per_segment() as u32 {
            match self.class_from_key(key, cell) {
                CellClass::Stable => {}
                CellClass::AlwaysFails => fail_mask[(cell / 8) as usize] |= 1 << (cell % 8),
                CellClass::Marginal { theta, p_noise } => marginals.push(MarginalCell { cell, theta, p_noise }),
            }
        }
        Ok(SegmentModel {
            addr,
            geometry: self.geometry,
            noise_key: combine(key, SALT_NOISE),
            fail_mask,
            marginals,
        })
    }

    pub fn read_segment(&self, addr: SegmentAddr, condition: &ReadCondition) -> Result<Bitmap> {
        self.segment(addr)?.read(condition)
    }

    pub fn reference_read(&self, addr: SegmentAddr, pattern: InputPattern) -> Result<Bitmap> {
        self.segment(addr)?.reference_read(pattern)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCell {
    pub cell: u32,
    pub theta: f64,
    pub p_noise: f64,
}

/// The materialized class table of one segment. Reads through a
/// `SegmentModel` are identical to [`DeviceModel::read_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentModel {
    addr: SegmentAddr,
    geometry: Geometry,
    noise_key: u64,
    fail_mask: Vec<u8>,
    marginals: Vec<MarginalCell>,
}

impl SegmentModel {
    pub fn addr(&self) -> SegmentAddr {
        self.addr
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Always-failing cells as a packed mask (LSB-first within each byte).
    pub fn fail_mask(&self) -> &[u8] {
        &self.fail_mask
    }

    pub fn marginals(&self) -> &[MarginalCell] {
        &self.marginals
    }

    pub fn always_fail_count(&self) -> usize {
        self.fail_mask.iter().map(|b| b.count_ones() as usize).sum()
    }

    fn noise_flip(&self, m: &MarginalCell, read_nonce: u64) -> bool {
        m.p_noise > 0.0 && unit(combine(combine(self.noise_key, m.cell as u64), read_nonce)) < m.p_noise
    }

    /// Cells that invert under `condition`, as a packed LSB-first mask.
    pub fn flip_mask(&self, temperature: f64, read_nonce: Option<u64>) -> Vec<u8> {
        let mut mask = self.fail_mask.clone();
        for m in &self.marginals {
            let mut flip = temperature >= m.theta;
            if let Some(nonce) = read_nonce {
                flip ^= self.noise_flip(m, nonce);
            }
            if flip {
                mask[(m.cell / 8) as usize] ^= 1 << (m.cell % 8);
            }
        }
        mask
    }

    fn assemble(&self, pattern: InputPattern, mask: Vec<u8>) -> Result<Bitmap> {
        let mut data = pattern.expand(self.geometry.segment_bytes);
        for (d, m) in data.iter_mut().zip(mask) {
            *d ^= m;
        }
        Bitmap::new(self.geometry.rows(), self.geometry.row_bytes, data)
    }

    pub fn read(&self, condition: &ReadCondition) -> Result<Bitmap> {
        condition.check()?;
        let mask = self.flip_mask(condition.temperature, Some(condition.read_nonce));
        self.assemble(condition.pattern, mask)
    }

    /// Noise-free read at the reference temperature.
    pub fn reference_read(&self, pattern: InputPattern) -> Result<Bitmap> {
        self.read_noise_free(REFERENCE_TEMPERATURE, pattern)
    }

    /// Read at `temperature` with per-read noise suppressed.
    pub fn read_noise_free(&self, temperature: f64, pattern: InputPattern) -> Result<Bitmap> {
        ReadCondition::new(temperature, 0, pattern).check()?;
        self.assemble(pattern, self.flip_mask(temperature, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_segment() -> Geometry {
        Geometry {
            chips: 1,
            banks_per_chip: 1,
            segments_per_bank: 1,
            ..Geometry::default()
        }
    }

    const A0: SegmentAddr = SegmentAddr::new(0, 0, 0);

    #[test]
    fn zero_failure_device_is_all_stable() {
        let dev = build_device(7, one_segment(), 0.0, 0.0).unwrap();
        let seg = dev.segment(A0).unwrap();
        assert_eq!(seg.always_fail_count(), 0);
        assert!(seg.marginals().is_empty());
        let bm = dev
            .read_segment(A0, &ReadCondition::new(40.0, 3, InputPattern::AllZero))
            .unwrap();
        assert!(bm.data().iter().all(|&b| b == 0));
        assert_eq!((bm.rows(), bm.cols()), (256, 128));
    }

    #[test]
    fn always_fail_fraction() {
        let dev = build_device(7, one_segment(), 0.05, 0.0).unwrap();
        let seg = dev.segment(A0).unwrap();
        let frac = seg.always_fail_count() as f64 / one_segment().cells_per_segment() as f64;
        assert!((0.04..=0.06).contains(&frac), "{frac}");
    }

    #[test]
    fn same_seed_same_tables() {
        let a = build_device(7, one_segment(), 0.3, 0.02).unwrap();
        let b = build_device(7, one_segment(), 0.3, 0.02).unwrap();
        assert_eq!(a.segment(A0).unwrap(), b.segment(A0).unwrap());
    }

    #[test]
    fn single_fail_cell_lsb_first() {
        let mut seg = build_device(1, one_segment(), 0.0, 0.0).unwrap().segment(A0).unwrap();
        seg.fail_mask[0] = 0x01;
        let bm = seg.read(&ReadCondition::new(25.0, 0, InputPattern::AllZero)).unwrap();
        assert_eq!(bm.data()[0], 0x01);
        assert!(bm.data()[1..].iter().all(|&b| b == 0));
    }

    #[test]
    fn address_and_condition_errors() {
        let dev = DeviceModel::calibrated(1, Geometry::default()).unwrap();
        assert_eq!(dev.segment(SegmentAddr::new(1, 0, 0)), Err(Error::AddressOutOfRange));
        assert_eq!(dev.segment(SegmentAddr::new(0, 8, 0)), Err(Error::AddressOutOfRange));
        assert_eq!(dev.segment(SegmentAddr::new(0, 0, 4)), Err(Error::AddressOutOfRange));
        let cold = ReadCondition::new(10.0, 0, InputPattern::AllZero);
        assert!(matches!(
            dev.read_segment(A0, &cold),
            Err(Error::TemperatureOutOfRange(_))
        ));
    }

    #[test]
    fn invalid_construction() {
        let g = one_segment();
        assert!(build_device(1, g, 0.7, 0.4).is_err());
        assert!(build_device(1, g, -0.1, 0.0).is_err());
        let zero = Geometry { banks_per_chip: 0, ..g };
        assert!(matches!(
            build_device(1, zero, 0.1, 0.0),
            Err(Error::InvalidGeometry(_))
        ));
        let ragged = Geometry {
            segment_bytes: 1000,
            row_bytes: 128,
            ..g
        };
        assert!(build_device(1, ragged, 0.1, 0.0).is_err());
    }

    #[test]
    fn reference_read_is_repeatable_and_matches_noise_free_read() {
        let dev = build_device(9, one_segment(), 0.2, 0.0).unwrap();
        let a = dev.reference_read(A0, InputPattern::Checkerboard).unwrap();
        let b = dev.reference_read(A0, InputPattern::Checkerboard).unwrap();
        assert_eq!(a, b);
        let c = dev
            .read_segment(A0, &ReadCondition::new(25.0, 77, InputPattern::Checkerboard))
            .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn hot_read_differs_in_exactly_the_marginal_cells() {
        let dev = DeviceModel::new(11, one_segment(), 0.1, 0.01, 0.0).unwrap();
        let seg = dev.segment(A0).unwrap();
        let cold = seg.reference_read(InputPattern::AllZero).unwrap();
        let hot = seg.read(&ReadCondition::new(55.0, 5, InputPattern::AllZero)).unwrap();
        let expected = seg.marginals().iter().filter(|m| m.theta <= 55.0).count();
        assert_eq!(cold.hamming(&hot).unwrap(), expected);
        for m in seg.marginals() {
            let (b, k) = ((m.cell / 8) as usize, m.cell % 8);
            assert_ne!((cold.data()[b] >> k) & 1, (hot.data()[b] >> k) & 1);
        }
    }

    #[test]
    fn noise_between_reads_is_binomially_bounded() {
        let dev = DeviceModel::new(3, one_segment(), 0.1, 0.02, 0.05).unwrap();
        let seg = dev.segment(A0).unwrap();
        let c1 = ReadCondition::new(40.0, 1, InputPattern::AllZero);
        let c2 = ReadCondition { read_nonce: 2, ..c1 };
        let hd = seg.read(&c1).unwrap().hamming(&seg.read(&c2).unwrap()).unwrap() as f64;
        // A cell differs between two reads with probability 2p(1-p).
        let (mean, var) = seg.marginals().iter().fold((0.0, 0.0), |(m, v), c| {
            let q = 2.0 * c.p_noise * (1.0 - c.p_noise);
            (m + q, v + q * (1.0 - q))
        });
        assert!((hd - mean).abs() <= 3.0 * libm::sqrt(var) + 1.0, "hd {hd} mean {mean}");
    }

    #[test]
    fn theta_grid() {
        let dev = DeviceModel::new(5, one_segment(), 0.0, 0.05, 0.05).unwrap();
        for m in dev.segment(A0).unwrap().marginals() {
            assert!(m.theta >= 26.0 && m.theta <= 55.0 && m.theta.fract() == 0.0);
            assert!(m.p_noise > 0.0 && m.p_noise <= 0.05);
        }
    }

    #[test]
    fn pattern_expansion_lengths() {
        for p in [
            InputPattern::AllZero,
            InputPattern::AllOne,
            InputPattern::Checkerboard,
            InputPattern::SeededRandom(4),
        ] {
            assert_eq!(p.expand(32768).len(), 32768);
            assert_eq!(p.expand(13).len(), 13);
        }
    }
}
