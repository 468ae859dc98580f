//! Registration and mutual authentication between a PUF device and a server.
//!
//! ```text
//! device                                   server
//!   N, ID  ------------------------------->  look up ID -> (Ch, K, HS) at cursor
//!                                            A  = ((M ^ rnd) || rnd) ^ K
//!                                            V1 = h(M, rnd, N, HS, Ch, K)
//!          <-------------------------------  A, V1, Ch, HS
//!   K = h(EPUF(Ch) . HS)
//!   (M ^ rnd || rnd) = A ^ K, check V1
//!   E  = (D || ID') ^ h(K)
//!   V2 = h(D, rnd, ID', K)
//!          ------------------------------->  (D || ID') = E ^ h(K), check V2
//!                                            ID := ID', cursor += 1
//! ```
//!
//! The server stores the CRPs; the device stores only its current pseudo-ID.

mod device;
mod messages;
mod server;

pub use device::{Device, DeviceAccept, OpCounters};
pub use messages::*;
pub use server::{CrpRecord, DeviceHandle, ReenrollPolicy, Server, ServerAccept, ServerDb, ServerDbRow, SessionHandle};

use alloc::vec::Vec;
use core::fmt;

use rand_core::RngCore;

use crate::dram::DeviceModel;
use crate::hash::FieldHasher;
use crate::keygen::{characterize_segment, Epuf, RegisterParams, Registration, SecretKey};

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolError {
    Decode(&'static str),
    /// Dropped without a reply.
    UnknownId,
    /// Every CRP of the device has been used; re-enrollment required.
    CrpExhausted,
    NoSession,
    NoPendingSession,
    V1Mismatch,
    V2Mismatch,
    Epuf(crate::Error),
    /// Enrollment found fewer usable challenges than requested.
    NotEnoughChallenges {
        requested: usize,
        available: usize,
    },
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolError::Decode(why) => write!(f, "malformed message: {why}"),
            ProtocolError::UnknownId => f.write_str("unknown device id"),
            ProtocolError::CrpExhausted => f.write_str("CRPs exhausted, re-enrollment required"),
            ProtocolError::NoSession => f.write_str("no open session"),
            ProtocolError::NoPendingSession => f.write_str("device has no pending session"),
            ProtocolError::V1Mismatch => f.write_str("server verifier V1 mismatch"),
            ProtocolError::V2Mismatch => f.write_str("device verifier V2 mismatch"),
            ProtocolError::Epuf(e) => write!(f, "PUF evaluation failed: {e}"),
            ProtocolError::NotEnoughChallenges { requested, available } => {
                write!(f, "requested {requested} CRPs, only {available} viable")
            }
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for ProtocolError {}

fn xor_into<const N: usize>(a: &mut [u8; N], b: &[u8; N]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x ^= y;
    }
}

pub(crate) fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// `A = ((M ^ rnd) || rnd) ^ K`.
pub fn seal_a(m: &Payload, rnd: &Nonce, k: &SecretKey) -> Field {
    let mut a = [0u8; FIELD_LEN];
    a[..16].copy_from_slice(m);
    xor_into(<&mut [u8; 16]>::try_from(&mut a[..16]).unwrap(), rnd);
    a[16..].copy_from_slice(rnd);
    xor_into(&mut a, k.as_bytes());
    a
}

/// Inverse of [`seal_a`]: returns `(M, rnd)`.
pub fn open_a(a: &Field, k: &SecretKey) -> (Payload, Nonce) {
    let mut x = *a;
    xor_into(&mut x, k.as_bytes());
    let rnd: Nonce = x[16..].try_into().unwrap();
    let mut m: Payload = x[..16].try_into().unwrap();
    xor_into(&mut m, &rnd);
    (m, rnd)
}

/// `V1 = h(M, rnd, N, HS, Ch, K)`.
pub fn verifier_v1(m: &Payload, rnd: &Nonce, n: &Nonce, hs: &Field, ch: &Field, k: &SecretKey) -> Field {
    FieldHasher::new()
        .field(m)
        .field(rnd)
        .field(n)
        .field(hs)
        .field(ch)
        .field(k.as_bytes())
        .finish()
}

/// `V2 = h(D, rnd, ID', K)`.
pub fn verifier_v2(d: &Payload, rnd: &Nonce, next_id: &Id, k: &SecretKey) -> Field {
    FieldHasher::new()
        .field(d)
        .field(rnd)
        .field(next_id)
        .field(k.as_bytes())
        .finish()
}

/// `h(K)`, the pad for `E`.
pub fn key_pad(k: &SecretKey) -> Field {
    FieldHasher::new().field(k.as_bytes()).finish()
}

/// `E = (D || ID') ^ pad`.
pub fn seal_e(d: &Payload, next_id: &Id, pad: &Field) -> Field {
    let mut e = [0u8; FIELD_LEN];
    e[..16].copy_from_slice(d);
    e[16..].copy_from_slice(next_id);
    xor_into(&mut e, pad);
    e
}

/// Inverse of [`seal_e`]: returns `(D, ID')`.
pub fn open_e(e: &Field, pad: &Field) -> (Payload, Id) {
    let mut x = *e;
    xor_into(&mut x, pad);
    (x[..16].try_into().unwrap(), x[16..].try_into().unwrap())
}

pub(crate) fn random_128(rng: &mut (impl RngCore + ?Sized)) -> [u8; 16] {
    let mut out = [0u8; 16];
    rng.fill_bytes(&mut out);
    out
}

/// Collects up to `n_crps` registrations, walking the device geometry in
/// address order and skipping windows with too few qualified bits and
/// challenges listed in `skip`.
pub fn collect_registrations(
    model: &DeviceModel,
    n_crps: usize,
    params: &RegisterParams,
    skip: &[[u8; 32]],
) -> Result<Vec<Registration>, ProtocolError> {
    let mut out = Vec::with_capacity(n_crps);
    if n_crps == 0 {
        return Ok(out);
    }
    for addr in model.geometry().addresses() {
        let segment = model.segment(addr).map_err(ProtocolError::Epuf)?;
        let ch = characterize_segment(&segment, params).map_err(ProtocolError::Epuf)?;
        for reg in ch.registrations(params.theta, params.min_qualified) {
            if skip.contains(&reg.challenge.encode()) {
                continue;
            }
            out.push(reg);
            if out.len() == n_crps {
                return Ok(out);
            }
        }
    }
    Err(ProtocolError::NotEnoughChallenges {
        requested: n_crps,
        available: out.len(),
    })
}

/// Enrollment over the (assumed secure) registration channel: registers
/// `n_crps` fresh challenges, draws a new pseudo-ID and installs it on both
/// sides. Returns the device's handle in the database.
#[allow(clippy::too_many_arguments)]
pub fn enroll<P: Epuf>(
    db: &mut ServerDb,
    handle: Option<DeviceHandle>,
    device: &mut Device<P>,
    model: &DeviceModel,
    n_crps: usize,
    params: &RegisterParams,
    policy: ReenrollPolicy,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<DeviceHandle, ProtocolError> {
    let known: Vec<[u8; 32]> = handle
        .and_then(|h| db.row(h))
        .map(|row| row.crps.iter().map(|c| c.challenge).collect())
        .unwrap_or_default();
    let regs = collect_registrations(model, n_crps, params, &known)?;
    let mut id = random_128(rng);
    while db.lookup(&id).is_some() {
        id = random_128(rng);
    }
    let crps = regs.iter().map(CrpRecord::from_registration).collect();
    let handle = db.install(handle, id, crps, policy);
    device.install_id(id);
    Ok(handle)
}
