use core::fmt;

/// Errors raised by the simulator, the feature pipeline and key generation.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Class fractions outside `[0, 1]` or summing above 1.
    InvalidFractions {
        f_fail: f64,
        f_marginal: f64,
    },
    InvalidGeometry(&'static str),
    AddressOutOfRange,
    TemperatureOutOfRange(f64),
    EmptyRow,
    MalformedBitmap,
    InvalidFracBits(u8),
    /// A value handed to the quantizer does not fit 3 integer bits.
    ValueOutOfRange(f64),
    InvalidOmega(usize),
    LengthMismatch {
        expected: usize,
        actual: usize,
    },
    /// Fewer qualified bits than the caller requires.
    InsufficientBits {
        qualified: usize,
        required: usize,
    },
    InvalidChallenge(&'static str),
    Decode(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidFractions { f_fail, f_marginal } => {
                write!(f, "invalid class fractions f_fail={f_fail} f_marginal={f_marginal}")
            }
            Error::InvalidGeometry(why) => write!(f, "invalid geometry: {why}"),
            Error::AddressOutOfRange => f.write_str("segment address out of range"),
            Error::TemperatureOutOfRange(t) => {
                write!(f, "temperature {t} outside the operating envelope")
            }
            Error::EmptyRow => f.write_str("empty bitmap row"),
            Error::MalformedBitmap => f.write_str("malformed bitmap"),
            Error::InvalidFracBits(b) => write!(f, "fractional bits {b} outside [1, 23]"),
            Error::ValueOutOfRange(v) => write!(f, "value {v} cannot be quantized"),
            Error::InvalidOmega(o) => write!(f, "invalid read count {o}"),
            Error::LengthMismatch { expected, actual } => {
                write!(f, "length mismatch: expected {expected}, got {actual}")
            }
            Error::InsufficientBits { qualified, required } => {
                write!(f, "only {qualified} qualified bits, need {required}")
            }
            Error::InvalidChallenge(why) => write!(f, "invalid challenge: {why}"),
            Error::Decode(why) => write!(f, "decode error: {why}"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for Error {}
