use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::messages::*;
use super::{ct_eq, key_pad, open_e, random_128, seal_a, verifier_v1, verifier_v2, ProtocolError};
use crate::keygen::{Registration, SecretKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceHandle(pub u32);

/// Identifies an open server session; one per device at a time.
pub type SessionHandle = DeviceHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrpRecord {
    pub challenge: Field,
    pub key: SecretKey,
    /// 256-bit helper stream in wire form.
    pub hs: Field,
}

impl CrpRecord {
    pub fn from_registration(reg: &Registration) -> CrpRecord {
        CrpRecord {
            challenge: reg.challenge.encode(),
            key: reg.key,
            hs: reg.hs.mask.as_packed().try_into().expect("256-bit helper stream"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerDbRow {
    pub handle: DeviceHandle,
    pub current_id: Id,
    pub crps: Vec<CrpRecord>,
    /// Index of the next unused CRP.
    pub cursor: usize,
}

/// What happens to consumed CRPs when a device is enrolled again.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReenrollPolicy {
    /// Append new CRPs after the existing ones; the cursor is kept.
    #[default]
    Append,
    /// Drop consumed CRPs, append the new ones, restart the cursor at 0.
    Compact,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerDb {
    rows: Vec<ServerDbRow>,
    by_id: BTreeMap<Id, DeviceHandle>,
}

impl ServerDb {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[ServerDbRow] {
        &self.rows
    }

    pub fn row(&self, handle: DeviceHandle) -> Option<&ServerDbRow> {
        self.rows.get(handle.0 as usize)
    }

    pub fn lookup(&self, id: &Id) -> Option<DeviceHandle> {
        self.by_id.get(id).copied()
    }

    /// Inserts a new row (`handle = None`) or refreshes an existing one.
    pub fn install(
        &mut self,
        handle: Option<DeviceHandle>,
        id: Id,
        crps: Vec<CrpRecord>,
        policy: ReenrollPolicy,
    ) -> DeviceHandle {
        match handle.filter(|h| (h.0 as usize) < self.rows.len()) {
            Some(h) => {
                let row = &mut self.rows[h.0 as usize];
                self.by_id.remove(&row.current_id);
                if policy == ReenrollPolicy::Compact {
                    row.crps.drain(..row.cursor);
                    row.cursor = 0;
                }
                row.crps.extend(crps);
                row.current_id = id;
                self.by_id.insert(id, h);
                h
            }
            None => {
                let h = DeviceHandle(self.rows.len() as u32);
                self.rows.push(ServerDbRow {
                    handle: h,
                    current_id: id,
                    crps,
                    cursor: 0,
                });
                self.by_id.insert(id, h);
                h
            }
        }
    }

    /// Restores a row verbatim, e.g. when loading a persisted database.
    pub fn restore(&mut self, row: ServerDbRow) -> DeviceHandle {
        let h = DeviceHandle(self.rows.len() as u32);
        self.by_id.insert(row.current_id, h);
        self.rows.push(ServerDbRow { handle: h, ..row });
        h
    }
}

struct Session {
    control: Payload,
    rnd: Nonce,
    key: SecretKey,
}

impl Drop for Session {
    fn drop(&mut self) {
        // volatile so the wipe is not elided
        for b in self
            .rnd
            .iter_mut()
            .chain(self.key.0.iter_mut())
            .chain(self.control.iter_mut())
        {
            unsafe { core::ptr::write_volatile(b, 0) };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerAccept {
    pub device: DeviceHandle,
    /// The control message that was delivered.
    pub control: Payload,
    /// The device report `D`.
    pub report: Payload,
}

/// Server-side state machine over a CRP database. Session state lives only
/// between [`respond`](Server::respond) and [`finalize`](Server::finalize).
#[derive(Default)]
pub struct Server {
    db: ServerDb,
    sessions: BTreeMap<DeviceHandle, Session>,
}

impl Server {
    pub fn new(db: ServerDb) -> Self {
        Server {
            db,
            sessions: BTreeMap::new(),
        }
    }

    pub fn db(&self) -> &ServerDb {
        &self.db
    }

    pub fn db_mut(&mut self) -> &mut ServerDb {
        &mut self.db
    }

    pub fn into_db(self) -> ServerDb {
        self.db
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Answers an authentication request with the next unused CRP. A new
    /// request for the same device replaces its open session.
    pub fn respond(
        &mut self,
        msg: &MsgAuthInit,
        control: &Payload,
        rng: &mut (impl RngCore + ?Sized),
    ) -> Result<(SessionHandle, MsgServerChallenge), ProtocolError> {
        let handle = self.db.lookup(&msg.id).ok_or(ProtocolError::UnknownId)?;
        let row = &self.db.rows[handle.0 as usize];
        let crp = *row.crps.get(row.cursor).ok_or(ProtocolError::CrpExhausted)?;
        let rnd = random_128(rng);
        let a = seal_a(control, &rnd, &crp.key);
        let v1 = verifier_v1(control, &rnd, &msg.nonce, &crp.hs, &crp.challenge, &crp.key);
        self.sessions.insert(
            handle,
            Session {
                control: *control,
                rnd,
                key: crp.key,
            },
        );
        Ok((
            handle,
            MsgServerChallenge {
                a,
                v1,
                ch: crp.challenge,
                hs: crp.hs,
            },
        ))
    }

    /// Verifies the device response. The session is closed either way; only
    /// a verified `V2` advances the cursor and rotates the stored ID.
    pub fn finalize(&mut self, handle: SessionHandle, msg: &MsgDeviceResponse) -> Result<ServerAccept, ProtocolError> {
        let session = self.sessions.remove(&handle).ok_or(ProtocolError::NoSession)?;
        let (report, next_id) = open_e(&msg.e, &key_pad(&session.key));
        let v2 = verifier_v2(&report, &session.rnd, &next_id, &session.key);
        if !ct_eq(&v2, &msg.v2) {
            return Err(ProtocolError::V2Mismatch);
        }
        let row = &mut self.db.rows[handle.0 as usize];
        row.cursor += 1;
        self.db.by_id.remove(&row.current_id);
        row.current_id = next_id;
        self.db.by_id.insert(next_id, handle);
        Ok(ServerAccept {
            device: handle,
            control: session.control,
            report,
        })
    }
}
