//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid configuration. Command-line flags are applied on top
//! through [`RunConfig::set`].

use std::fmt::Write as _;
use std::path::Path;

use epuf_core::dram::{DEFAULT_F_FAIL, DEFAULT_F_MARGINAL, DEFAULT_P_NOISE_MAX};
use epuf_core::keygen::{PrecisionMode, RegisterParams, DEFAULT_MIN_QUALIFIED};
use epuf_core::{DeviceModel, Geometry, InputPattern, TemperatureSweep};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::metrics::PipelineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub devices: usize,
    pub geometry: Geometry,
    pub f_fail: f64,
    pub f_marginal: f64,
    pub p_noise_max: f64,
    pub pattern: InputPattern,
    pub omega_precision: usize,
    pub omega: usize,
    pub theta: u32,
    pub thetas: Vec<u32>,
    pub temperatures: Vec<f64>,
    pub reads_per_point: usize,
    /// EF precision for metric studies.
    pub frac_bits: PrecisionMode,
    /// EF precision for enrollment and authentication.
    pub keygen_frac_bits: PrecisionMode,
    pub min_qualified: usize,
    pub crps_per_device: usize,
    pub sessions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            devices: 100,
            geometry: Geometry::default(),
            f_fail: DEFAULT_F_FAIL,
            f_marginal: DEFAULT_F_MARGINAL,
            p_noise_max: DEFAULT_P_NOISE_MAX,
            pattern: InputPattern::AllZero,
            omega_precision: 20,
            omega: 50,
            theta: 0,
            thetas: vec![0, 1, 2],
            temperatures: vec![25.0, 35.0, 45.0, 55.0],
            reads_per_point: 10,
            frac_bits: PrecisionMode::Fixed(5),
            keygen_frac_bits: PrecisionMode::Auto,
            min_qualified: DEFAULT_MIN_QUALIFIED,
            crps_per_device: 32,
            sessions: 10,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::invalid(key, e.to_string()))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn precision(key: &str, value: &str) -> Result<PrecisionMode> {
    Ok(match value {
        "auto" => PrecisionMode::Auto,
        v => PrecisionMode::Fixed(num(key, v)?),
    })
}

fn precision_name(p: PrecisionMode) -> String {
    match p {
        PrecisionMode::Auto => "auto".to_string(),
        PrecisionMode::Fixed(f) => f.to_string(),
    }
}

pub fn parse_pattern(value: &str) -> Result<InputPattern> {
    Ok(match value {
        "all-zero" => InputPattern::AllZero,
        "all-one" => InputPattern::AllOne,
        "checkerboard" => InputPattern::Checkerboard,
        other => match other.strip_prefix("random:") {
            Some(seed) => InputPattern::SeededRandom(num("pattern", seed)?),
            None => return Err(Error::invalid("pattern", format!("unknown pattern `{other}`"))),
        },
    })
}

pub fn pattern_name(p: InputPattern) -> String {
    match p {
        InputPattern::AllZero => "all-zero".into(),
        InputPattern::AllOne => "all-one".into(),
        InputPattern::Checkerboard => "checkerboard".into(),
        InputPattern::SeededRandom(s) => format!("random:{s}"),
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config {
                path: origin.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(Error::io(format!("reading {}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "devices" => self.devices = num(key, value)?,
            "chips" => self.geometry.chips = num(key, value)?,
            "banks" => self.geometry.banks_per_chip = num(key, value)?,
            "segments" => self.geometry.segments_per_bank = num(key, value)?,
            "segment_bytes" => self.geometry.segment_bytes = num(key, value)?,
            "row_bytes" => self.geometry.row_bytes = num(key, value)?,
            "f_fail" => self.f_fail = num(key, value)?,
            "f_marginal" => self.f_marginal = num(key, value)?,
            "p_noise_max" => self.p_noise_max = num(key, value)?,
            "pattern" => self.pattern = parse_pattern(value)?,
            "omega_precision" => self.omega_precision = num(key, value)?,
            "omega" => self.omega = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "thetas" => self.thetas = list(key, value)?,
            "temperatures" => self.temperatures = list(key, value)?,
            "reads_per_point" => self.reads_per_point = num(key, value)?,
            "frac_bits" => self.frac_bits = precision(key, value)?,
            "keygen_frac_bits" => self.keygen_frac_bits = precision(key, value)?,
            "min_qualified" => self.min_qualified = num(key, value)?,
            "crps_per_device" => self.crps_per_device = num(key, value)?,
            "sessions" => self.sessions = num(key, value)?,
            _ => return Err(Error::invalid(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        DeviceModel::new(0, self.geometry, self.f_fail, self.f_marginal, self.p_noise_max)?;
        if self.devices == 0 {
            return Err(Error::invalid("devices", "must be >= 1"));
        }
        if self.omega_precision < 2 {
            return Err(Error::invalid("omega_precision", "must be >= 2"));
        }
        if self.omega == 0 {
            return Err(Error::invalid("omega", "must be >= 1"));
        }
        if self.reads_per_point == 0 {
            return Err(Error::invalid("reads_per_point", "must be >= 1"));
        }
        TemperatureSweep::new(self.temperatures.clone())?;
        for p in [self.frac_bits, self.keygen_frac_bits] {
            if let PrecisionMode::Fixed(f) = p {
                epuf_core::Precision::fixed(f)?;
            }
        }
        Ok(())
    }

    /// Seed of device `index`, derived from the global seed.
    pub fn device_seed(&self, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng.next_u64()
    }

    pub fn device(&self, index: usize) -> Result<DeviceModel> {
        Ok(DeviceModel::new(
            self.device_seed(index),
            self.geometry,
            self.f_fail,
            self.f_marginal,
            self.p_noise_max,
        )?)
    }

    pub fn population(&self) -> Result<Vec<DeviceModel>> {
        (0..self.devices).map(|i| self.device(i)).collect()
    }

    pub fn register_params(&self) -> RegisterParams {
        RegisterParams {
            pattern: self.pattern,
            precision: self.frac_bits,
            omega_precision: self.omega_precision,
            sweep: TemperatureSweep::uniform(self.omega),
            theta: self.theta,
            min_qualified: self.min_qualified,
            nonce_base: self.seed,
        }
    }

    /// Enrollment parameters: as [`register_params`](Self::register_params)
    /// but with the keygen precision.
    pub fn keygen_params(&self) -> RegisterParams {
        RegisterParams {
            precision: self.keygen_frac_bits,
            ..self.register_params()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            params: self.register_params(),
            thetas: self.thetas.clone(),
        }
    }

    /// Canonical `key = value` rendering, used as report metadata.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let join = |v: &[String]| v.join(",");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "devices = {}", self.devices);
        let _ = writeln!(s, "chips = {}", self.geometry.chips);
        let _ = writeln!(s, "banks = {}", self.geometry.banks_per_chip);
        let _ = writeln!(s, "segments = {}", self.geometry.segments_per_bank);
        let _ = writeln!(s, "segment_bytes = {}", self.geometry.segment_bytes);
        let _ = writeln!(s, "row_bytes = {}", self.geometry.row_bytes);
        let _ = writeln!(s, "f_fail = {}", self.f_fail);
        let _ = writeln!(s, "f_marginal = {}", self.f_marginal);
        let _ = writeln!(s, "p_noise_max = {}", self.p_noise_max);
        let _ = writeln!(s, "pattern = {}", pattern_name(self.pattern));
        let _ = writeln!(s, "omega_precision = {}", self.omega_precision);
        let _ = writeln!(s, "omega = {}", self.omega);
        let _ = writeln!(s, "theta = {}", self.theta);
        let _ = writeln!(
            s,
            "thetas = {}",
            join(&self.thetas.iter().map(|t| t.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(
            s,
            "temperatures = {}",
            join(&self.temperatures.iter().map(|t| t.to_string()).collect::<Vec<_>>())
        );
        let _ = writeln!(s, "reads_per_point = {}", self.reads_per_point);
        let _ = writeln!(s, "frac_bits = {}", precision_name(self.frac_bits));
        let _ = writeln!(s, "keygen_frac_bits = {}", precision_name(self.keygen_frac_bits));
        let _ = writeln!(s, "min_qualified = {}", self.min_qualified);
        let _ = writeln!(s, "crps_per_device = {}", self.crps_per_device);
        let _ = writeln!(s, "sessions = {}", self.sessions);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::parse("", Path::new("x")).unwrap(), RunConfig::default());
    }

    #[test]
    fn parses_keys_and_comments() {
        let text =
            "# population\nseed = 9\ndevices=3 # trailing\npattern = random:5\nfrac_bits = auto\nthetas = 0, 1,5\n";
        let cfg = RunConfig::parse(text, Path::new("x")).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.devices, 3);
        assert_eq!(cfg.pattern, InputPattern::SeededRandom(5));
        assert_eq!(cfg.frac_bits, PrecisionMode::Auto);
        assert_eq!(cfg.thetas, vec![0, 1, 5]);
    }

    #[test]
    fn render_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.set("temperatures", "25,40.5").unwrap();
        cfg.set("frac_bits", "auto").unwrap();
        cfg.set("keygen_frac_bits", "7").unwrap();
        assert_eq!(RunConfig::parse(&cfg.render(), Path::new("x")).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunConfig::parse("seed = 1\nbogus = 2\n", Path::new("run.cfg")).unwrap_err();
        assert!(e.to_string().starts_with("run.cfg:2:"), "{e}");
        assert!(RunConfig::parse("seed 1", Path::new("x")).is_err());
        assert!(RunConfig::parse("f_fail = 0.9\nf_marginal = 0.2", Path::new("x")).is_err());
        assert!(RunConfig::parse("temperatures = 10", Path::new("x")).is_err());
        assert!(RunConfig::parse("row_bytes = 100", Path::new("x")).is_err());
    }

    #[test]
    fn device_seeds_are_distinct_and_stable() {
        let cfg = RunConfig::default();
        let seeds: std::collections::HashSet<_> = (0..100).map(|i| cfg.device_seed(i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(cfg.device_seed(3), RunConfig::default().device_seed(3));
    }
}
