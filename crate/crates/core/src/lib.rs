//! Entropy-feature DRAM PUF.
//!
//! The crate turns bitmaps read back from latency-perturbed DRAM segments
//! into per-row Shannon entropy features (EFs), qualifies the stable EF bits
//! with a helper stream (HS), derives secret keys from the qualified bits and
//! runs a lightweight device/server mutual-authentication protocol on top.
//!
//! Everything here is `no_std` + `alloc` and free of IO. The DRAM itself is a
//! deterministic simulation ([`dram`]) so that every read is a pure function
//! of the device seed, the address and the read condition.
//!
//! Module map:
//!
//! * [`dram`]: simulated device population and segment reads
//! * [`features`]: row entropy, fixed-point quantization, EF generation
//! * [`helper`]: precision selection and helper-stream generation/application
//! * [`keygen`]: challenges, registration and key reconstruction
//! * [`protocol`]: wire messages and the two protocol state machines
//! * [`bits`]: packed bit strings and Hamming distance
//! * [`hash`]: the length-prefixed 256-bit hash used everywhere

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod bits;
pub mod dram;
mod error;
pub mod features;
pub mod hash;
pub mod helper;
pub mod keygen;
mod mix;
pub mod protocol;

pub use bits::{fractional_hd, BitString};
pub use dram::{Bitmap, CellClass, DeviceModel, Geometry, InputPattern, ReadCondition, SegmentAddr, SegmentModel};
pub use error::Error;
pub use features::{generate_ef, quantize, row_entropy, EntropyFeatures, INT_BITS};
pub use helper::{
    apply_hs, apply_hs_with, generate_hs, select_precision, HelperStream, HsSemantics, Precision, Response,
    TemperatureSweep,
};
pub use keygen::{Challenge, RegisterParams, Registration, SecretKey};

pub type Result<T, E = Error> = core::result::Result<T, E>;
