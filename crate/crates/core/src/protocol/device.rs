use rand_core::RngCore;

use super::messages::*;
use super::{ct_eq, key_pad, open_a, random_128, seal_e, verifier_v1, verifier_v2, ProtocolError};
use crate::bits::BitString;
use crate::helper::{apply_hs, HelperStream};
use crate::keygen::{Challenge, Epuf, SecretKey, WINDOW_BITS};

/// Work done by the device, for cost accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub epuf_reads: u64,
    pub hashes: u64,
    pub xors: u64,
    pub random_draws: u64,
}

impl core::ops::Sub for OpCounters {
    type Output = OpCounters;

    fn sub(self, rhs: OpCounters) -> OpCounters {
        OpCounters {
            epuf_reads: self.epuf_reads - rhs.epuf_reads,
            hashes: self.hashes - rhs.hashes,
            xors: self.xors - rhs.xors,
            random_draws: self.random_draws - rhs.random_draws,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceAccept {
    pub response: MsgDeviceResponse,
    /// The server's control message `M`.
    pub control: Payload,
}

/// Device-side state machine. Between sessions it keeps only its pseudo-ID;
/// during a session, only the nonce it sent.
#[derive(Debug, Clone)]
pub struct Device<P> {
    current_id: Id,
    pending: Option<Nonce>,
    epuf: P,
    counters: OpCounters,
}

impl<P: Epuf> Device<P> {
    pub fn new(epuf: P) -> Self {
        Device {
            current_id: [0; ID_LEN],
            pending: None,
            epuf,
            counters: OpCounters::default(),
        }
    }

    pub fn current_id(&self) -> Id {
        self.current_id
    }

    pub fn pending_nonce(&self) -> Option<Nonce> {
        self.pending
    }

    pub fn counters(&self) -> OpCounters {
        self.counters
    }

    pub fn epuf(&self) -> &P {
        &self.epuf
    }

    pub fn epuf_mut(&mut self) -> &mut P {
        &mut self.epuf
    }

    /// Sets the pseudo-ID out of band (enrollment, or resynchronization
    /// after a lost final message).
    pub fn install_id(&mut self, id: Id) {
        self.current_id = id;
        self.pending = None;
    }

    pub fn start(&mut self, rng: &mut (impl RngCore + ?Sized)) -> MsgAuthInit {
        let nonce = random_128(rng);
        self.counters.random_draws += 1;
        self.pending = Some(nonce);
        MsgAuthInit {
            id: self.current_id,
            nonce,
        }
    }

    /// Handles the server challenge. On any failure the message is discarded
    /// and the device state is left untouched, so the pending session can
    /// still complete.
    pub fn process(
        &mut self,
        msg: &MsgServerChallenge,
        report: &Payload,
        rng: &mut (impl RngCore + ?Sized),
    ) -> Result<DeviceAccept, ProtocolError> {
        let nonce = self.pending.ok_or(ProtocolError::NoPendingSession)?;
        let challenge = Challenge::decode(&msg.ch).map_err(ProtocolError::Epuf)?;
        let hs = HelperStream {
            mask: BitString::from_packed(msg.hs.to_vec(), WINDOW_BITS).map_err(ProtocolError::Epuf)?,
            theta: 0,
            omega: 0,
        };

        self.counters.epuf_reads += 1;
        let window = self.epuf.evaluate(&challenge).map_err(ProtocolError::Epuf)?;
        // R = EPUF(Ch) . HS, K = h(R)
        let response = apply_hs(&window, &hs).map_err(ProtocolError::Epuf)?;
        let key = SecretKey::from_response(&response);
        self.counters.hashes += 1;

        let (m, rnd) = open_a(&msg.a, &key);
        self.counters.xors += 2;
        let v1 = verifier_v1(&m, &rnd, &nonce, &msg.hs, &msg.ch, &key);
        self.counters.hashes += 1;
        if !ct_eq(&v1, &msg.v1) {
            return Err(ProtocolError::V1Mismatch);
        }

        let next_id = random_128(rng);
        self.counters.random_draws += 1;
        let e = seal_e(report, &next_id, &key_pad(&key));
        let v2 = verifier_v2(report, &rnd, &next_id, &key);
        self.counters.hashes += 2;
        self.counters.xors += 1;

        self.current_id = next_id;
        self.pending = None;
        Ok(DeviceAccept {
            response: MsgDeviceResponse { e, v2 },
            control: m,
        })
    }
}
