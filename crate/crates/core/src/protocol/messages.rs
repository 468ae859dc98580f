//! Fixed-width wire messages. All fields are raw big-endian byte strings in
//! the order listed; there is no framing beyond the fixed sizes.

use crate::{Error, Result};

pub const ID_LEN: usize = 16;
pub const NONCE_LEN: usize = 16;
pub const FIELD_LEN: usize = 32;

pub type Id = [u8; ID_LEN];
pub type Nonce = [u8; NONCE_LEN];
/// 128-bit application payload (`M` from the server, `D` from the device).
pub type Payload = [u8; 16];
pub type Field = [u8; FIELD_LEN];

fn take<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().unwrap()
}

fn check_len(bytes: &[u8], want: usize) -> Result<()> {
    if bytes.len() != want {
        return Err(Error::Decode("wrong message length"));
    }
    Ok(())
}

/// `ID || N`, 32 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsgAuthInit {
    pub id: Id,
    pub nonce: Nonce,
}

impl MsgAuthInit {
    pub const LEN: usize = ID_LEN + NONCE_LEN;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..16].copy_from_slice(&self.id);
        out[16..].copy_from_slice(&self.nonce);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        check_len(bytes, Self::LEN)?;
        Ok(MsgAuthInit {
            id: take(bytes, 0),
            nonce: take(bytes, 16),
        })
    }
}

/// `A || V1 || Ch || HS`, 128 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsgServerChallenge {
    pub a: Field,
    pub v1: Field,
    pub ch: Field,
    pub hs: Field,
}

impl MsgServerChallenge {
    pub const LEN: usize = 4 * FIELD_LEN;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        for (i, f) in [&self.a, &self.v1, &self.ch, &self.hs].into_iter().enumerate() {
            out[i * FIELD_LEN..(i + 1) * FIELD_LEN].copy_from_slice(f);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        check_len(bytes, Self::LEN)?;
        Ok(MsgServerChallenge {
            a: take(bytes, 0),
            v1: take(bytes, 32),
            ch: take(bytes, 64),
            hs: take(bytes, 96),
        })
    }
}

/// `E || V2`, 64 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MsgDeviceResponse {
    pub e: Field,
    pub v2: Field,
}

impl MsgDeviceResponse {
    pub const LEN: usize = 2 * FIELD_LEN;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[..32].copy_from_slice(&self.e);
        out[32..].copy_from_slice(&self.v2);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        check_len(bytes, Self::LEN)?;
        Ok(MsgDeviceResponse {
            e: take(bytes, 0),
            v2: take(bytes, 32),
        })
    }
}

/// Bytes exchanged per authentication, excluding the opening `MsgAuthInit`.
pub const SESSION_OVERHEAD_BYTES: usize = MsgServerChallenge::LEN + MsgDeviceResponse::LEN;
