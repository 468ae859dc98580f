//! PUF quality statistics over simulated populations: bit error rates across
//! temperature, reliable-bit yield, uniqueness and entropy profiles.
//!
//! Work is spread over `(device, segment)` items with rayon. Error tallies
//! are integer counts merged in item order, so results do not depend on the
//! thread schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use epuf_core::features::{entropy_values, entropy_values_from};
use epuf_core::helper::{derive_nonce, NONCE_VALIDATION};
use epuf_core::keygen::{characterize_segment, SegmentCharacterization};
use epuf_core::{
    quantize, BitString, DeviceModel, HelperStream, ReadCondition, RegisterParams, SegmentAddr, SegmentModel,
};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use epuf_core::fractional_hd;

/// Pairs with fewer common qualified positions are left out of uniqueness.
pub const MIN_COMMON_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct HdSample {
    pub a: BitString,
    pub b: BitString,
    pub fractional_hd: f64,
}

impl HdSample {
    pub fn new(a: BitString, b: BitString) -> Result<HdSample> {
        let fractional_hd = fractional_hd(&a, &b)?;
        Ok(HdSample { a, b, fractional_hd })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    RawDram,
    Ef,
    Masked,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::RawDram => "raw",
            Stage::Ef => "ef",
            Stage::Masked => "masked",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerReport {
    pub temperature: f64,
    pub stage: Stage,
    /// Set for the masked stage only.
    pub theta: Option<u32>,
    pub ber: f64,
}

/// Characterization parameters plus the thresholds evaluated at the masked
/// stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: RegisterParams,
    pub thetas: Vec<u32>,
}

/// Error and bit counts for one `(temperature, stage, theta)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BerTally {
    pub errors: u64,
    pub bits: u64,
}

impl BerTally {
    pub fn ber(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.errors as f64 / self.bits as f64
        }
    }
}

/// `(temperature index, stage, theta)`.
pub type TallyKey = (usize, Stage, Option<u32>);

/// BER tallies of one characterized segment. Validation reads use their own
/// nonce stream, disjoint from the characterization reads.
fn segment_tallies(
    segment: &SegmentModel,
    ch: &SegmentCharacterization,
    cfg: &PipelineConfig,
    temperatures: &[f64],
    reads_per_point: usize,
) -> Result<BTreeMap<TallyKey, BerTally>> {
    let pattern = cfg.params.pattern;
    let frac = ch.precision.frac_bits;
    let ref_bitmap = segment.reference_read(pattern)?;
    let ref_ef = ch.reference.bits();
    let masks: Vec<(u32, HelperStream)> = cfg.thetas.iter().map(|&t| (t, ch.helper_stream(t))).collect();
    let addr = segment.addr();
    let base = derive_nonce(
        cfg.params.nonce_base,
        NONCE_VALIDATION,
        (addr.chip as u64) << 40 | (addr.bank as u64) << 20 | addr.segment as u64,
    );

    let mut out: BTreeMap<TallyKey, BerTally> = BTreeMap::new();
    for (ti, &t) in temperatures.iter().enumerate() {
        for r in 0..reads_per_point {
            let nonce = derive_nonce(base, ti as u64, r as u64);
            let bitmap = segment.read(&ReadCondition::new(t, nonce, pattern))?;
            let raw = out.entry((ti, Stage::RawDram, None)).or_default();
            raw.errors += bitmap.hamming(&ref_bitmap)? as u64;
            raw.bits += bitmap.bit_len() as u64;

            let ef = quantize(&entropy_values_from(&bitmap, &ref_bitmap, ch.reference.values())?, frac)?;
            let e = out.entry((ti, Stage::Ef, None)).or_default();
            e.errors += ef.hamming(ref_ef)? as u64;
            e.bits += ef.len() as u64;

            for (theta, hs) in &masks {
                let m = out.entry((ti, Stage::Masked, Some(*theta))).or_default();
                m.errors += ef.masked_hamming(ref_ef, &hs.mask)? as u64;
                m.bits += hs.qualified() as u64;
            }
        }
    }
    Ok(out)
}

fn check_temperatures(temperatures: &[f64]) -> Result<()> {
    for &t in temperatures {
        if !epuf_core::dram::TEMPERATURE_RANGE.contains(&t) {
            return Err(epuf_core::Error::TemperatureOutOfRange(t).into());
        }
    }
    Ok(())
}

fn tallies_to_reports(temperatures: &[f64], tallies: &BTreeMap<TallyKey, BerTally>) -> Vec<BerReport> {
    tallies
        .iter()
        .map(|(&(ti, stage, theta), tally)| BerReport {
            temperature: temperatures[ti],
            stage,
            theta,
            ber: tally.ber(),
        })
        .collect()
}

/// Mean BER against the noise-free 25 °C reference, per temperature and
/// stage, for one segment.
pub fn ber_sweep(
    model: &DeviceModel,
    addr: SegmentAddr,
    cfg: &PipelineConfig,
    temperatures: &[f64],
    reads_per_point: usize,
) -> Result<Vec<BerReport>> {
    check_temperatures(temperatures)?;
    let segment = model.segment(addr)?;
    let ch = characterize_segment(&segment, &cfg.params)?;
    let tallies = segment_tallies(&segment, &ch, cfg, temperatures, reads_per_point)?;
    Ok(tallies_to_reports(temperatures, &tallies))
}

/// One characterized segment of a population.
#[derive(Debug, Clone)]
pub struct SegmentRecord {
    pub device: usize,
    pub ch: SegmentCharacterization,
    /// This segment's share of the population tallies.
    pub tallies: BTreeMap<TallyKey, BerTally>,
}

impl SegmentRecord {
    pub fn addr(&self) -> SegmentAddr {
        self.ch.addr
    }
}

#[derive(Debug, Clone)]
pub struct PopulationStudy {
    pub temperatures: Vec<f64>,
    /// Records in device-major, address order.
    pub segments: Vec<SegmentRecord>,
    pub tallies: BTreeMap<TallyKey, BerTally>,
}

impl PopulationStudy {
    /// Population BER per `(temperature, stage, theta)`, pooled over bits.
    pub fn ber(&self) -> Vec<BerReport> {
        tallies_to_reports(&self.temperatures, &self.tallies)
    }

    pub fn ber_at(&self, temperature: f64, stage: Stage, theta: Option<u32>) -> Option<f64> {
        let ti = self.temperatures.iter().position(|&t| t == temperature)?;
        self.tallies.get(&(ti, stage, theta)).map(BerTally::ber)
    }

    pub fn entities(&self, theta: u32) -> Vec<Entity> {
        self.segments
            .iter()
            .map(|s| Entity {
                device: s.device,
                addr: s.addr(),
                ef: s.ch.reference.bits().clone(),
                mask: s.ch.helper_stream(theta).mask,
            })
            .collect()
    }

    pub fn helper_streams(&self, theta: u32) -> Vec<HelperStream> {
        self.segments.iter().map(|s| s.ch.helper_stream(theta)).collect()
    }
}

/// Characterizes every segment of every device and, when `reads_per_point`
/// is nonzero, tallies BER over `temperatures`.
pub fn study_population(
    models: &[DeviceModel],
    cfg: &PipelineConfig,
    temperatures: &[f64],
    reads_per_point: usize,
) -> Result<PopulationStudy> {
    check_temperatures(temperatures)?;
    let items: Vec<(usize, SegmentAddr)> = models
        .iter()
        .enumerate()
        .flat_map(|(d, m)| m.geometry().addresses().map(move |a| (d, a)))
        .collect();
    let segments: Vec<SegmentRecord> = items
        .par_iter()
        .map(|&(d, addr)| -> Result<_> {
            let segment = models[d].segment(addr)?;
            let ch = characterize_segment(&segment, &cfg.params)?;
            let tallies = segment_tallies(&segment, &ch, cfg, temperatures, reads_per_point)?;
            Ok(SegmentRecord { device: d, ch, tallies })
        })
        .collect::<Result<_>>()?;

    let mut tallies: BTreeMap<TallyKey, BerTally> = BTreeMap::new();
    for rec in &segments {
        for (k, v) in &rec.tallies {
            let acc = tallies.entry(*k).or_default();
            acc.errors += v.errors;
            acc.bits += v.bits;
        }
    }
    Ok(PopulationStudy {
        temperatures: temperatures.to_vec(),
        segments,
        tallies,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReliableBits {
    pub theta: u32,
    /// Qualified-bit count per segment, in input order.
    pub counts: Vec<usize>,
    /// EF length per segment.
    pub totals: Vec<usize>,
}

impl ReliableBits {
    pub fn mean(&self) -> f64 {
        self.counts.iter().sum::<usize>() as f64 / self.counts.len().max(1) as f64
    }

    /// `(popcount, segments)` pairs in ascending popcount.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &c in &self.counts {
            *h.entry(c).or_default() += 1;
        }
        h
    }
}

/// Qualified-bit counts per threshold. Every group must cover the same
/// segments in the same order.
pub fn reliable_bit_distribution(groups: &[(u32, Vec<HelperStream>)]) -> Result<Vec<ReliableBits>> {
    let Some((_, first)) = groups.first() else {
        return Ok(vec![]);
    };
    let lens: Vec<usize> = first.iter().map(HelperStream::len).collect();
    groups
        .iter()
        .map(|(theta, hss)| {
            if hss.len() != lens.len() || hss.iter().zip(&lens).any(|(h, &l)| h.len() != l) {
                return Err(Error::Format("helper streams do not cover the same segments".into()));
            }
            Ok(ReliableBits {
                theta: *theta,
                counts: hss.iter().map(HelperStream::qualified).collect(),
                totals: lens.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    InterSegment,
    InterBank,
    InterChip,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::InterChip, Scope::InterBank, Scope::InterSegment];

    pub fn name(self) -> &'static str {
        match self {
            Scope::InterSegment => "inter-segment",
            Scope::InterBank => "inter-bank",
            Scope::InterChip => "inter-chip",
        }
    }

    pub fn parse(s: &str) -> Option<Scope> {
        Scope::ALL.into_iter().find(|sc| sc.name() == s)
    }
}

/// A response-bearing entity: the reference EF of one segment and its
/// qualified positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub device: usize,
    pub addr: SegmentAddr,
    pub ef: BitString,
    pub mask: BitString,
}

/// HD over the positions qualified in both entities, or `None` when fewer
/// than [`MIN_COMMON_BITS`] positions are shared.
pub fn masked_pair_hd(a: &Entity, b: &Entity) -> Result<Option<f64>> {
    if a.ef.len() != b.ef.len() {
        return Ok(None);
    }
    let common = a.mask.and(&b.mask)?;
    let n = common.count_ones();
    if n < MIN_COMMON_BITS {
        return Ok(None);
    }
    Ok(Some(a.ef.masked_hamming(&b.ef, &common)? as f64 / n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMean {
    pub label: String,
    pub pairs: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    pub scope: Scope,
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Pairs dropped for too small a common mask.
    pub skipped: usize,
    /// Per-bank means for the inter-segment scope.
    pub groups: Vec<GroupMean>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pairwise HDs between entities that differ only in the scope's
/// coordinate: devices at the same address, banks of one device at the same
/// segment index, or segments within one bank.
pub fn uniqueness_study(entities: &[Entity], scope: Scope) -> Result<UniquenessReport> {
    type Key = (usize, u32, u32, u32);
    let class_of = |e: &Entity| -> Key {
        let a = e.addr;
        match scope {
            Scope::InterChip => (0, a.chip, a.bank, a.segment),
            Scope::InterBank => (e.device, a.chip, u32::MAX, a.segment),
            Scope::InterSegment => (e.device, a.chip, a.bank, u32::MAX),
        }
    };
    let mut classes: BTreeMap<Key, Vec<&Entity>> = BTreeMap::new();
    for e in entities {
        classes.entry(class_of(e)).or_default().push(e);
    }
    let pairs: Vec<(u32, &Entity, &Entity)> = classes
        .values()
        .flat_map(|members| {
            (0..members.len())
                .flat_map(move |i| (i + 1..members.len()).map(move |j| (members[i].addr.bank, members[i], members[j])))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Format(format!(
            "{}: fewer than two entities in scope",
            scope.name()
        )));
    }
    let hds: Vec<(u32, Option<f64>)> = pairs
        .par_iter()
        .map(|&(bank, a, b)| Ok((bank, masked_pair_hd(a, b)?)))
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(hds.len());
    let mut per_bank: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(bank, hd) in &hds {
        if let Some(hd) = hd {
            samples.push(hd);
            per_bank.entry(bank).or_default().push(hd);
        }
    }
    if samples.is_empty() {
        return Err(Error::Format(format!(
            "{}: no pair shares enough qualified bits",
            scope.name()
        )));
    }
    let groups = if scope == Scope::InterSegment {
        per_bank
            .into_iter()
            .map(|(bank, v)| GroupMean {
                label: format!("bank{bank}"),
                pairs: v.len(),
                mean: mean(&v),
            })
            .collect()
    } else {
        vec![]
    };
    Ok(UniquenessReport {
        scope,
        mean: mean(&samples),
        skipped: hds.len() - samples.len(),
        samples,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub temperatures: Vec<f64>,
    /// `columns[t][j]`: entropy of row `j` at `temperatures[t]`.
    pub columns: Vec<Vec<f64>>,
}

impl EntropyProfile {
    /// Pearson correlation of column `t` with the first column.
    pub fn correlation(&self, t: usize) -> f64 {
        pearson(&self.columns[0], &self.columns[t])
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return if x == y { 1.0 } else { 0.0 };
    }
    sxy / (sxx * syy).sqrt()
}

/// Row entropies of one segment, one read per temperature.
pub fn entropy_profile(
    model: &DeviceModel,
    addr: SegmentAddr,
    params: &RegisterParams,
    temperatures: &[f64],
) -> Result<EntropyProfile> {
    check_temperatures(temperatures)?;
    let segment = model.segment(addr)?;
    let columns = temperatures
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let nonce = derive_nonce(params.nonce_base, NONCE_VALIDATION + 1, ti as u64);
            Ok(entropy_values(&segment.read(&ReadCondition::new(
                t,
                nonce,
                params.pattern,
            ))?)?)
        })
        .collect::<Result<_>>()?;
    Ok(EntropyProfile {
        temperatures: temperatures.to_vec(),
        columns,
    })
}

pub fn ber_csv(reports: &[BerReport]) -> String {
    let mut s = String::from("temperature,stage,theta,ber\n");
    for r in reports {
        let theta = r.theta.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", r.temperature, r.stage.name(), theta, r.ber);
    }
    s
}

pub fn reliable_bits_csv(segments: &[SegmentRecord], dists: &[ReliableBits]) -> String {
    let mut s = String::from("theta,device,chip,bank,segment,qualified,total\n");
    for d in dists {
        for ((seg, &c), &total) in segments.iter().zip(&d.counts).zip(&d.totals) {
            let a = seg.addr();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                d.theta, seg.device, a.chip, a.bank, a.segment, c, total
            );
        }
    }
    s
}

pub fn uniqueness_csv(reports: &[UniquenessReport]) -> String {
    let mut s = String::from("scope,group,pairs,skipped,mean\n");
    for r in reports {
        for g in &r.groups {
            let _ = writeln!(s, "{},{},{},,{}", r.scope.name(), g.label, g.pairs, g.mean);
        }
        let _ = writeln!(s, "{},all,{},{},{}", r.scope.name(), r.samples.len(), r.skipped, r.mean);
    }
    s
}

pub fn entropy_profile_csv(profile: &EntropyProfile) -> String {
    let mut s = String::from("row");
    for t in &profile.temperatures {
        let _ = write!(s, ",t{t}");
    }
    s.push('\n');
    let rows = profile.columns.first().map_or(0, Vec::len);
    for j in 0..rows {
        let _ = write!(s, "{j}");
        for col in &profile.columns {
            let _ = write!(s, ",{}", col[j]);
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use epuf_core::keygen::PrecisionMode;
    use epuf_core::{Geometry, TemperatureSweep};

    fn small() -> Geometry {
        Geometry {
            chips: 1,
            banks_per_chip: 2,
            segments_per_bank: 2,
            segment_bytes: 4096,
            row_bytes: 128,
        }
    }

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            params: RegisterParams {
                precision: PrecisionMode::Fixed(5),
                sweep: TemperatureSweep::uniform(31),
                ..RegisterParams::default()
            },
            thetas: vec![0, 1, 2],
        }
    }

    #[test]
    fn hd_examples() {
        let z = BitString::parse("0000").unwrap();
        assert_eq!(HdSample::new(z.clone(), z).unwrap().fractional_hd, 0.0);
        let s = HdSample::new(BitString::parse("0101").unwrap(), BitString::parse("1010").unwrap()).unwrap();
        assert_eq!(s.fractional_hd, 1.0);
        let a = BitString::from_packed(vec![0x0f], 8).unwrap();
        let b = BitString::from_packed(vec![0x00], 8).unwrap();
        assert_eq!(fractional_hd(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn quiet_device_has_zero_ber_everywhere() {
        let m = DeviceModel::new(3, small(), 0.0, 0.0, 0.0).unwrap();
        let r = ber_sweep(&m, SegmentAddr::new(0, 1, 1), &cfg(), &[25.0, 55.0], 3).unwrap();
        assert_eq!(r.len(), 2 * (2 + 3));
        assert!(r.iter().all(|x| x.ber == 0.0));
    }

    #[test]
    fn out_of_envelope_temperature_is_rejected() {
        let m = DeviceModel::calibrated(3, small()).unwrap();
        assert!(ber_sweep(&m, SegmentAddr::new(0, 0, 0), &cfg(), &[60.0], 1).is_err());
    }

    #[test]
    fn theta_equal_omega_qualifies_everything() {
        let m = DeviceModel::calibrated(5, small()).unwrap();
        let study = study_population(&[m], &cfg(), &[], 0).unwrap();
        let dist = reliable_bit_distribution(&[(31, study.helper_streams(31))]).unwrap();
        assert_eq!(dist[0].counts, dist[0].totals);
    }

    #[test]
    fn self_comparison_is_zero() {
        let m = DeviceModel::calibrated(5, small()).unwrap();
        let study = study_population(&[m], &cfg(), &[], 0).unwrap();
        let e = &study.entities(0)[0];
        assert_eq!(masked_pair_hd(e, e).unwrap(), Some(0.0));
    }

    #[test]
    fn uniqueness_needs_two_entities() {
        let m = DeviceModel::calibrated(5, small()).unwrap();
        let study = study_population(&[m], &cfg(), &[], 0).unwrap();
        assert!(uniqueness_study(&study.entities(0), Scope::InterChip).is_err());
        let seg = uniqueness_study(&study.entities(0), Scope::InterSegment).unwrap();
        assert_eq!(seg.groups.len(), 2);
        assert_eq!(seg.samples.len() + seg.skipped, 2);
    }

    #[test]
    fn mismatched_groups_are_rejected() {
        let m = DeviceModel::calibrated(5, small()).unwrap();
        let study = study_population(&[m], &cfg(), &[], 0).unwrap();
        let mut short = study.helper_streams(1);
        short.pop();
        assert!(reliable_bit_distribution(&[(0, study.helper_streams(0)), (1, short)]).is_err());
    }

    #[test]
    fn quiet_profile_columns_match() {
        let m = DeviceModel::new(9, small(), 0.2, 0.0, 0.0).unwrap();
        let p = entropy_profile(&m, SegmentAddr::new(0, 0, 0), &cfg().params, &[25.0, 35.0, 55.0]).unwrap();
        assert_eq!(p.columns[0], p.columns[2]);
        assert_eq!(p.correlation(2), 1.0);
        let zero = DeviceModel::new(9, small(), 0.0, 0.0, 0.0).unwrap();
        let p = entropy_profile(&zero, SegmentAddr::new(0, 0, 0), &cfg().params, &[25.0, 55.0]).unwrap();
        assert!(p.columns.iter().flatten().all(|&e| e == 0.0));
    }

    #[test]
    fn csv_headers() {
        let r = [BerReport {
            temperature: 55.0,
            stage: Stage::Masked,
            theta: Some(2),
            ber: 0.125,
        }];
        assert_eq!(ber_csv(&r), "temperature,stage,theta,ber\n55,masked,2,0.125\n");
        let p = EntropyProfile {
            temperatures: vec![25.0, 35.5],
            columns: vec![vec![1.0, 2.0], vec![1.5, 2.0]],
        };
        assert_eq!(entropy_profile_csv(&p), "row,t25,t35.5\n0,1,1.5\n1,2,2\n");
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
