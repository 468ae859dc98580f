//! Key registration and reconstruction.
//!
//! A challenge names a segment and a 256-bit window of its EF stream. At
//! registration the segment is characterized (precision selection, then a
//! temperature sweep for the helper stream); the key is the hash of the
//! qualified window bits. Reconstruction needs one read, the public helper
//! stream and the challenge, and no error correction.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::bits::BitString;
use crate::dram::{DeviceModel, Geometry, InputPattern, ReadCondition, SegmentAddr, SegmentModel};
use crate::features::{generate_ef, EntropyFeatures, MAX_FRAC_BITS, MIN_FRAC_BITS};
use crate::hash::{Digest256, FieldHasher};
use crate::helper::{
    apply_hs, count_flips, select_precision, FlipCounts, HelperStream, Precision, Response, TemperatureSweep,
};
use crate::mix::combine;
use crate::{Error, Result};

/// EF bits covered by one challenge (and carried by one wire HS).
pub const WINDOW_BITS: usize = 256;
pub const CHALLENGE_LEN: usize = 32;
pub const DEFAULT_MIN_QUALIFIED: usize = 128;

/// A segment address plus a window into its EF stream, together with the
/// fixed-point precision the EF is computed at.
///
/// Encoded as 32 bytes: chip, bank, segment and window offset as 32-bit
/// big-endian words, then one byte of fractional bits; the remaining 15
/// bytes are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Challenge {
    pub addr: SegmentAddr,
    pub window_offset: u32,
    pub frac_bits: u8,
}

impl Challenge {
    pub fn encode(&self) -> [u8; CHALLENGE_LEN] {
        let mut out = [0u8; CHALLENGE_LEN];
        out[0..4].copy_from_slice(&self.addr.chip.to_be_bytes());
        out[4..8].copy_from_slice(&self.addr.bank.to_be_bytes());
        out[8..12].copy_from_slice(&self.addr.segment.to_be_bytes());
        out[12..16].copy_from_slice(&self.window_offset.to_be_bytes());
        out[16] = self.frac_bits;
        out
    }

    pub fn decode(bytes: &[u8; CHALLENGE_LEN]) -> Result<Challenge> {
        if bytes[17..].iter().any(|&b| b != 0) {
            return Err(Error::InvalidChallenge("unused bits set"));
        }
        let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
        let c = Challenge {
            addr: SegmentAddr::new(word(0), word(4), word(8)),
            window_offset: word(12),
            frac_bits: bytes[16],
        };
        if !(MIN_FRAC_BITS..=MAX_FRAC_BITS).contains(&c.frac_bits) {
            return Err(Error::InvalidChallenge("fractional bits out of range"));
        }
        Ok(c)
    }

    /// Checks the challenge against a device geometry.
    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if !geometry.contains(self.addr) {
            return Err(Error::InvalidChallenge("address outside geometry"));
        }
        let ef_len = geometry.rows() * (crate::INT_BITS + self.frac_bits) as usize;
        if self.window_offset as usize + WINDOW_BITS > ef_len {
            return Err(Error::InvalidChallenge("window beyond EF stream"));
        }
        Ok(())
    }

    pub fn window_bits(&self, ef: &EntropyFeatures) -> Result<BitString> {
        ef.bits().slice(self.window_offset as usize, WINDOW_BITS)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SecretKey(pub Digest256);

impl SecretKey {
    /// `h(R)` with `R` fed as its length-prefixed bit encoding.
    pub fn from_response(response: &Response) -> SecretKey {
        SecretKey(FieldHasher::new().bits(&response.bits).finish())
    }

    pub fn as_bytes(&self) -> &Digest256 {
        &self.0
    }
}

impl core::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("SecretKey(")?;
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        f.write_str("..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecisionMode {
    /// Select per segment from repeated reads.
    Auto,
    Fixed(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterParams {
    pub pattern: InputPattern,
    pub precision: PrecisionMode,
    /// Reads for precision selection.
    pub omega_precision: usize,
    pub sweep: TemperatureSweep,
    pub theta: u32,
    pub min_qualified: usize,
    pub nonce_base: u64,
}

impl Default for RegisterParams {
    fn default() -> Self {
        RegisterParams {
            pattern: InputPattern::AllZero,
            precision: PrecisionMode::Auto,
            omega_precision: 20,
            sweep: TemperatureSweep::uniform(50),
            theta: 0,
            min_qualified: DEFAULT_MIN_QUALIFIED,
            nonce_base: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub challenge: Challenge,
    /// Window of the helper stream covering the challenge.
    pub hs: HelperStream,
    pub key: SecretKey,
}

/// Full-segment characterization shared by all windows of the segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCharacterization {
    pub addr: SegmentAddr,
    pub precision: Precision,
    pub counts: FlipCounts,
    pub reference: EntropyFeatures,
}

fn segment_nonce(base: u64, addr: SegmentAddr) -> u64 {
    combine(
        combine(combine(base, addr.chip as u64), addr.bank as u64),
        addr.segment as u64,
    )
}

pub fn characterize_segment(segment: &SegmentModel, params: &RegisterParams) -> Result<SegmentCharacterization> {
    let nonce = segment_nonce(params.nonce_base, segment.addr());
    let precision = match params.precision {
        PrecisionMode::Auto => select_precision(segment, params.pattern, params.omega_precision, nonce)?,
        PrecisionMode::Fixed(f) => Precision::fixed(f)?,
    };
    let (counts, reference) = count_flips(segment, params.pattern, precision.frac_bits, &params.sweep, nonce)?;
    Ok(SegmentCharacterization {
        addr: segment.addr(),
        precision,
        counts,
        reference,
    })
}

impl SegmentCharacterization {
    pub fn window_count(&self) -> usize {
        self.reference.bits().len() / WINDOW_BITS
    }

    pub fn helper_stream(&self, theta: u32) -> HelperStream {
        self.counts.helper_stream(theta)
    }

    /// Registers window `index` of this segment.
    pub fn register_window(&self, index: usize, theta: u32, min_qualified: usize) -> Result<Registration> {
        let offset = index * WINDOW_BITS;
        let challenge = Challenge {
            addr: self.addr,
            window_offset: offset as u32,
            frac_bits: self.precision.frac_bits,
        };
        let hs = self.helper_stream(theta).window(offset, WINDOW_BITS)?;
        if hs.qualified() < min_qualified {
            return Err(Error::InsufficientBits {
                qualified: hs.qualified(),
                required: min_qualified,
            });
        }
        let response = apply_hs(&challenge.window_bits(&self.reference)?, &hs)?;
        Ok(Registration {
            challenge,
            hs,
            key: SecretKey::from_response(&response),
        })
    }

    /// Every window with enough qualified bits, in offset order.
    pub fn registrations(&self, theta: u32, min_qualified: usize) -> Vec<Registration> {
        (0..self.window_count())
            .filter_map(|i| self.register_window(i, theta, min_qualified).ok())
            .collect()
    }
}

/// Registers the window at `window_offset` (a multiple of 256) of segment `addr`.
pub fn register(
    model: &DeviceModel,
    addr: SegmentAddr,
    window_offset: u32,
    params: &RegisterParams,
) -> Result<(Registration, Precision)> {
    if !(window_offset as usize).is_multiple_of(WINDOW_BITS) {
        return Err(Error::InvalidChallenge("window offset not aligned"));
    }
    let segment = model.segment(addr)?;
    let ch = characterize_segment(&segment, params)?;
    if window_offset as usize / WINDOW_BITS >= ch.window_count() {
        return Err(Error::InvalidChallenge("window beyond EF stream"));
    }
    let reg = ch.register_window(window_offset as usize / WINDOW_BITS, params.theta, params.min_qualified)?;
    Ok((reg, ch.precision))
}

/// EF window bits for a challenge from one read of `segment`.
pub fn evaluate_window(segment: &SegmentModel, challenge: &Challenge, condition: &ReadCondition) -> Result<BitString> {
    challenge.validate(segment.geometry())?;
    if segment.addr() != challenge.addr {
        return Err(Error::InvalidChallenge("segment does not match challenge"));
    }
    let ef = generate_ef(&segment.read(condition)?, challenge.frac_bits)?;
    challenge.window_bits(&ef)
}

/// One fresh read, EF, helper stream, hash.
pub fn reconstruct(
    model: &DeviceModel,
    challenge: &Challenge,
    hs: &HelperStream,
    condition: &ReadCondition,
) -> Result<SecretKey> {
    challenge.validate(model.geometry())?;
    if hs.len() != WINDOW_BITS {
        return Err(Error::LengthMismatch {
            expected: WINDOW_BITS,
            actual: hs.len(),
        });
    }
    let window = evaluate_window(&model.segment(challenge.addr)?, challenge, condition)?;
    Ok(SecretKey::from_response(&apply_hs(&window, hs)?))
}

/// The PUF as seen by a device: challenge in, EF window out.
pub trait Epuf {
    fn evaluate(&mut self, challenge: &Challenge) -> Result<BitString>;
}

/// A simulated device PUF at an adjustable ambient temperature. Each
/// evaluation uses a fresh read nonce; segment tables are cached.
#[derive(Debug, Clone)]
pub struct SimulatedEpuf {
    model: DeviceModel,
    pattern: InputPattern,
    temperature: f64,
    nonce: u64,
    cache: BTreeMap<SegmentAddr, SegmentModel>,
}

impl SimulatedEpuf {
    pub fn new(model: DeviceModel, pattern: InputPattern, nonce_seed: u64) -> Self {
        SimulatedEpuf {
            model,
            pattern,
            temperature: crate::dram::REFERENCE_TEMPERATURE,
            nonce: nonce_seed,
            cache: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> &DeviceModel {
        &self.model
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.temperature = t;
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Epuf for SimulatedEpuf {
    fn evaluate(&mut self, challenge: &Challenge) -> Result<BitString> {
        challenge.validate(self.model.geometry())?;
        if !self.cache.contains_key(&challenge.addr) {
            let seg = self.model.segment(challenge.addr)?;
            self.cache.insert(challenge.addr, seg);
        }
        self.nonce = combine(self.nonce, 0x6570_7566);
        let cond = ReadCondition::new(self.temperature, self.nonce, self.pattern);
        evaluate_window(&self.cache[&challenge.addr], challenge, &cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::DeviceModel;

    fn geometry() -> Geometry {
        Geometry {
            chips: 1,
            banks_per_chip: 2,
            segments_per_bank: 2,
            ..Geometry::default()
        }
    }

    #[test]
    fn challenge_codec() {
        let c = Challenge {
            addr: SegmentAddr::new(0, 7, 3),
            window_offset: 512,
            frac_bits: 5,
        };
        let enc = c.encode();
        assert_eq!(Challenge::decode(&enc).unwrap(), c);
        let mut bad = enc;
        bad[31] = 1;
        assert!(Challenge::decode(&bad).is_err());
        let mut bad = enc;
        bad[16] = 0;
        assert!(Challenge::decode(&bad).is_err());
        assert!(c.validate(&Geometry::default()).is_ok());
        let far = Challenge {
            window_offset: 2048 - 255,
            ..c
        };
        assert!(far.validate(&Geometry::default()).is_err());
    }

    #[test]
    fn noise_free_registration_uses_full_window() {
        let dev = DeviceModel::new(3, geometry(), 0.135, 0.0, 0.0).unwrap();
        let params = RegisterParams::default();
        let (reg, precision) = register(&dev, SegmentAddr::new(0, 1, 1), 256, &params).unwrap();
        assert_eq!(precision.frac_bits, 23);
        assert_eq!(reg.hs.qualified(), WINDOW_BITS);
        let ef = generate_ef(
            &dev.reference_read(SegmentAddr::new(0, 1, 1), params.pattern).unwrap(),
            23,
        )
        .unwrap();
        let full = Response {
            bits: ef.bits().slice(256, 256).unwrap(),
        };
        assert_eq!(reg.key, SecretKey::from_response(&full));
    }

    #[test]
    fn registration_is_deterministic() {
        let dev = DeviceModel::calibrated(5, geometry()).unwrap();
        let params = RegisterParams {
            nonce_base: 77,
            ..RegisterParams::default()
        };
        let a = register(&dev, SegmentAddr::new(0, 0, 1), 0, &params).unwrap();
        let b = register(&dev, SegmentAddr::new(0, 0, 1), 0, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruct_at_reference_matches() {
        let dev = DeviceModel::calibrated(6, geometry()).unwrap();
        let params = RegisterParams::default();
        let (reg, _) = register(&dev, SegmentAddr::new(0, 0, 0), 0, &params).unwrap();
        let cond = ReadCondition::new(25.0, 123, params.pattern);
        // noise may still touch the read; the calibrated device rarely does
        let key = reconstruct(&dev, &reg.challenge, &reg.hs, &cond).unwrap();
        assert_eq!(key, reg.key);
    }

    #[test]
    fn insufficient_bits() {
        let dev = DeviceModel::calibrated(6, geometry()).unwrap();
        let params = RegisterParams {
            min_qualified: 257,
            ..RegisterParams::default()
        };
        assert!(matches!(
            register(&dev, SegmentAddr::new(0, 0, 0), 0, &params),
            Err(Error::InsufficientBits { .. })
        ));
    }

    #[test]
    fn reconstruct_rejects_wrong_hs_length() {
        let dev = DeviceModel::calibrated(6, geometry()).unwrap();
        let c = Challenge {
            addr: SegmentAddr::new(0, 0, 0),
            window_offset: 0,
            frac_bits: 5,
        };
        let hs = HelperStream {
            mask: BitString::ones(100),
            theta: 0,
            omega: 50,
        };
        let cond = ReadCondition::new(25.0, 1, InputPattern::AllZero);
        assert!(matches!(
            reconstruct(&dev, &c, &hs, &cond),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
