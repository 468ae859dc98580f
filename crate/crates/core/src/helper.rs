//! Precision selection and helper streams.
//!
//! Precision selection reads a segment `omega` times at the reference
//! temperature and picks the number of fractional EF bits from the largest
//! elementwise spread `dmax` between any two reads.
//!
//! A helper stream (HS) marks which EF bits are reliable. The segment is read
//! across a temperature sweep, each quantized EF is XORed against the
//! reference EF, and bit `i` is qualified iff it flipped at most `theta`
//! times. The response is the EF gathered at the qualified positions.

use alloc::vec::Vec;

use crate::bits::BitString;
use crate::dram::{InputPattern, ReadCondition, SegmentModel, REFERENCE_TEMPERATURE, TEMPERATURE_RANGE};
use crate::features::{
    entropy_values, entropy_values_from, generate_ef, quantize, EntropyFeatures, MAX_FRAC_BITS, MIN_FRAC_BITS,
};
use crate::mix::combine;
use crate::{Error, Result};

/// Read-nonce stream tags.
pub const NONCE_PRECISION: u64 = 1;
pub const NONCE_SWEEP: u64 = 2;
pub const NONCE_VALIDATION: u64 = 3;

/// Nonce of the `k`-th read of stream `stream` under `base`.
pub fn derive_nonce(base: u64, stream: u64, k: u64) -> u64 {
    combine(combine(base, stream), k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    /// Largest elementwise EF spread between two reads; 0 when every read
    /// was identical.
    pub dmax: f64,
    pub frac_bits: u8,
}

impl Precision {
    /// `frac_bits = clamp(floor(log2(1 / dmax)), 1, 23)`, or 23 for `dmax = 0`.
    pub fn from_dmax(dmax: f64) -> Precision {
        if dmax <= 0.0 {
            return Precision {
                dmax: 0.0,
                frac_bits: MAX_FRAC_BITS,
            };
        }
        let f = libm::floor(libm::log2(1.0 / dmax));
        let frac_bits = f.clamp(MIN_FRAC_BITS as f64, MAX_FRAC_BITS as f64) as u8;
        Precision { dmax, frac_bits }
    }

    pub fn fixed(frac_bits: u8) -> Result<Precision> {
        if !(MIN_FRAC_BITS..=MAX_FRAC_BITS).contains(&frac_bits) {
            return Err(Error::InvalidFracBits(frac_bits));
        }
        Ok(Precision {
            dmax: libm::ldexp(1.0, -(frac_bits as i32)),
            frac_bits,
        })
    }
}

/// Largest `|a[k] - b[k]|` over all pairs of arrays and all elements.
pub fn max_pairwise_spread(reads: &[Vec<f64>]) -> f64 {
    let mut dmax = 0.0f64;
    for i in 0..reads.len() {
        for j in i + 1..reads.len() {
            let d = reads[i]
                .iter()
                .zip(&reads[j])
                .map(|(a, b)| libm::fabs(b - a))
                .fold(0.0, f64::max);
            dmax = dmax.max(d);
        }
    }
    dmax
}

/// Picks EF precision from `omega` noisy reads at the reference temperature.
pub fn select_precision(
    segment: &SegmentModel,
    pattern: InputPattern,
    omega: usize,
    nonce_base: u64,
) -> Result<Precision> {
    if omega < 2 {
        return Err(Error::InvalidOmega(omega));
    }
    let base = segment.reference_read(pattern)?;
    let base_values = entropy_values(&base)?;
    let reads = (0..omega as u64)
        .map(|k| {
            let cond = ReadCondition::new(
                REFERENCE_TEMPERATURE,
                derive_nonce(nonce_base, NONCE_PRECISION, k),
                pattern,
            );
            entropy_values_from(&segment.read(&cond)?, &base, &base_values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Precision::from_dmax(max_pairwise_spread(&reads)))
}

/// Temperatures of the characterization reads.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSweep(Vec<f64>);

impl TemperatureSweep {
    /// `omega` reads spread evenly over 25..=55 °C on a 1 °C grid. With
    /// `omega >= 31` every whole degree of the envelope is visited.
    pub fn uniform(omega: usize) -> TemperatureSweep {
        let (lo, hi) = (*TEMPERATURE_RANGE.start(), *TEMPERATURE_RANGE.end());
        if omega <= 1 {
            return TemperatureSweep(alloc::vec![lo; omega]);
        }
        TemperatureSweep(
            (0..omega)
                .map(|k| lo + libm::round((hi - lo) * k as f64 / (omega - 1) as f64))
                .collect(),
        )
    }

    pub fn new(temperatures: Vec<f64>) -> Result<TemperatureSweep> {
        if let Some(&t) = temperatures.iter().find(|t| !TEMPERATURE_RANGE.contains(t)) {
            return Err(Error::TemperatureOutOfRange(t));
        }
        Ok(TemperatureSweep(temperatures))
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-position flip counters from one characterization sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipCounts {
    counts: Vec<u32>,
    omega: u32,
}

impl FlipCounts {
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn omega(&self) -> u32 {
        self.omega
    }

    pub fn helper_stream(&self, theta: u32) -> HelperStream {
        HelperStream {
            mask: self.counts.iter().map(|&c| c <= theta).collect(),
            theta,
            omega: self.omega,
        }
    }
}

/// Runs the characterization sweep and returns the flip counters together
/// with the reference EF (noise-free read at the reference temperature).
pub fn count_flips(
    segment: &SegmentModel,
    pattern: InputPattern,
    frac_bits: u8,
    sweep: &TemperatureSweep,
    nonce_base: u64,
) -> Result<(FlipCounts, EntropyFeatures)> {
    if sweep.is_empty() {
        return Err(Error::InvalidOmega(0));
    }
    let base = segment.reference_read(pattern)?;
    let reference = generate_ef(&base, frac_bits)?;
    let mut counts = alloc::vec![0u32; reference.bits().len()];
    for (k, &t) in sweep.temperatures().iter().enumerate() {
        let cond = ReadCondition::new(t, derive_nonce(nonce_base, NONCE_SWEEP, k as u64), pattern);
        let values = entropy_values_from(&segment.read(&cond)?, &base, reference.values())?;
        let bits = quantize(&values, frac_bits)?;
        let diff = bits.xor(reference.bits())?;
        for (c, flipped) in counts.iter_mut().zip(diff.iter()) {
            *c += flipped as u32;
        }
    }
    Ok((
        FlipCounts {
            counts,
            omega: sweep.len() as u32,
        },
        reference,
    ))
}

/// Helper stream at threshold `theta` plus the reference EF.
pub fn generate_hs(
    segment: &SegmentModel,
    pattern: InputPattern,
    precision: &Precision,
    sweep: &TemperatureSweep,
    theta: u32,
    nonce_base: u64,
) -> Result<(HelperStream, EntropyFeatures)> {
    let (counts, reference) = count_flips(segment, pattern, precision.frac_bits, sweep, nonce_base)?;
    Ok((counts.helper_stream(theta), reference))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelperStream {
    pub mask: BitString,
    pub theta: u32,
    pub omega: u32,
}

impl HelperStream {
    pub fn qualified(&self) -> usize {
        self.mask.count_ones()
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn window(&self, offset: usize, len: usize) -> Result<HelperStream> {
        Ok(HelperStream {
            mask: self.mask.slice(offset, len)?,
            theta: self.theta,
            omega: self.omega,
        })
    }
}

/// How a helper stream is combined with an EF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HsSemantics {
    /// Keep EF bits where the mask is 1, in order.
    #[default]
    Select,
    /// Bitwise XNOR of EF and mask, full length. Unstable EF bits stay in
    /// the output (inverted), so this is only useful for comparisons.
    Xnor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub bits: BitString,
}

pub fn apply_hs(ef_bits: &BitString, hs: &HelperStream) -> Result<Response> {
    apply_hs_with(ef_bits, hs, HsSemantics::Select)
}

pub fn apply_hs_with(ef_bits: &BitString, hs: &HelperStream, semantics: HsSemantics) -> Result<Response> {
    if ef_bits.len() != hs.mask.len() {
        return Err(Error::LengthMismatch {
            expected: hs.mask.len(),
            actual: ef_bits.len(),
        });
    }
    let bits = match semantics {
        HsSemantics::Select => ef_bits
            .iter()
            .zip(hs.mask.iter())
            .filter_map(|(b, keep)| keep.then_some(b))
            .collect(),
        HsSemantics::Xnor => ef_bits.iter().zip(hs.mask.iter()).map(|(b, m)| b == m).collect(),
    };
    Ok(Response { bits })
}
