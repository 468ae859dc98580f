//! In-memory duplex channel between one device and the server, with a tap
//! through which an adversary can observe, drop, modify or inject frames.

use std::collections::{BTreeSet, VecDeque};

use epuf_core::keygen::Epuf;
use epuf_core::protocol::{
    Device, MsgAuthInit, MsgDeviceResponse, MsgServerChallenge, Payload, ProtocolError, Server, SessionHandle,
};
use rand_core::RngCore;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    Init,
    Challenge,
    Response,
}

impl MsgKind {
    fn to_server(self) -> bool {
        self != MsgKind::Challenge
    }
}

/// One message on the wire. `forged` marks frames the adversary created or
/// altered, and frames the honest parties produced in reply to them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MsgKind,
    pub bytes: Vec<u8>,
    pub forged: bool,
}

impl Frame {
    pub fn honest(kind: MsgKind, bytes: Vec<u8>) -> Frame {
        Frame {
            kind,
            bytes,
            forged: false,
        }
    }
}

/// Sees every frame before delivery and returns what is actually delivered,
/// in order.
pub trait Tap {
    fn intercept(&mut self, frame: Frame) -> Vec<Frame>;
}

pub struct PassThrough;

impl Tap for PassThrough {
    fn intercept(&mut self, frame: Frame) -> Vec<Frame> {
        vec![frame]
    }
}

impl<F: FnMut(Frame) -> Vec<Frame>> Tap for F {
    fn intercept(&mut self, frame: Frame) -> Vec<Frame> {
        self(frame)
    }
}

#[derive(Default)]
pub struct Channel {
    to_server: VecDeque<Frame>,
    to_device: VecDeque<Frame>,
    log: Vec<Frame>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, frame: Frame, tap: &mut dyn Tap) {
        for f in tap.intercept(frame) {
            self.log.push(f.clone());
            if f.kind.to_server() {
                self.to_server.push_back(f);
            } else {
                self.to_device.push_back(f);
            }
        }
    }

    /// Delivers a frame without passing it through a tap.
    pub fn inject(&mut self, frame: Frame) {
        self.send(frame, &mut PassThrough)
    }

    /// Every delivered frame so far.
    pub fn log(&self) -> &[Frame] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }
}

/// What happened to each delivered frame during one session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionOutcome {
    /// Sessions completed by the server on an honest exchange.
    pub server_accepts: usize,
    /// Challenges accepted by the device that were not forged.
    pub device_accepts: usize,
    /// Frames discarded by their receiver (bad MAC, decode error, no state).
    pub rejects: usize,
    /// Init frames dropped silently for an unknown ID.
    pub drops: usize,
    /// Forged or tainted frames accepted by their receiver.
    pub adversary_successes: usize,
    pub errors: Vec<ProtocolError>,
    /// Frames delivered during the session.
    pub wire: Vec<Frame>,
}

impl SessionOutcome {
    /// Both sides accepted an untampered exchange.
    pub fn mutual_accept(&self) -> bool {
        self.server_accepts == 1 && self.device_accepts == 1 && self.adversary_successes == 0
    }

    /// Challenge plus response bytes of the honest exchange.
    pub fn overhead_bytes(&self) -> usize {
        self.wire
            .iter()
            .filter(|f| f.kind != MsgKind::Init && !f.forged)
            .map(|f| f.bytes.len())
            .sum()
    }
}

/// Session bookkeeping that outlives a single [`pump`] call.
#[derive(Debug, Default)]
pub struct PumpState {
    tainted: BTreeSet<SessionHandle>,
    last_handle: Option<SessionHandle>,
}

/// Runs one protocol session: the device sends an init and frames are
/// delivered until both queues drain. `control` is the server's message `M`
/// and `report` the device's `D`.
#[allow(clippy::too_many_arguments)]
pub fn run_session<P: Epuf>(
    device: &mut Device<P>,
    server: &mut Server,
    channel: &mut Channel,
    tap: &mut dyn Tap,
    control: &Payload,
    report: &Payload,
    rng: &mut dyn RngCore,
) -> SessionOutcome {
    let log_start = channel.log.len();
    let init = device.start(rng);
    channel.send(Frame::honest(MsgKind::Init, init.encode().to_vec()), tap);
    let mut state = PumpState::default();
    let mut out = pump(device, server, channel, tap, control, report, rng, &mut state);
    out.wire = channel.log[log_start..].to_vec();
    out
}

/// Delivers queued frames until both directions are empty.
#[allow(clippy::too_many_arguments)]
pub fn pump<P: Epuf>(
    device: &mut Device<P>,
    server: &mut Server,
    channel: &mut Channel,
    tap: &mut dyn Tap,
    control: &Payload,
    report: &Payload,
    rng: &mut dyn RngCore,
    state: &mut PumpState,
) -> SessionOutcome {
    let mut out = SessionOutcome::default();
    let log_start = channel.log.len();
    loop {
        if let Some(f) = channel.to_server.pop_front() {
            match f.kind {
                MsgKind::Init => {
                    let result = MsgAuthInit::decode(&f.bytes)
                        .map_err(ProtocolError::Epuf)
                        .and_then(|m| server.respond(&m, control, rng));
                    match result {
                        Ok((h, msg)) => {
                            if f.forged {
                                state.tainted.insert(h);
                            } else {
                                state.tainted.remove(&h);
                            }
                            state.last_handle = Some(h);
                            let reply = Frame {
                                kind: MsgKind::Challenge,
                                bytes: msg.encode().to_vec(),
                                forged: f.forged,
                            };
                            channel.send(reply, tap);
                        }
                        Err(ProtocolError::UnknownId) => out.drops += 1,
                        Err(e) => {
                            out.rejects += 1;
                            out.errors.push(e);
                        }
                    }
                }
                MsgKind::Response => {
                    let result = match state.last_handle {
                        Some(h) => MsgDeviceResponse::decode(&f.bytes)
                            .map_err(ProtocolError::Epuf)
                            .and_then(|m| server.finalize(h, &m)),
                        None => Err(ProtocolError::NoSession),
                    };
                    match result {
                        Ok(acc) => {
                            if f.forged || state.tainted.contains(&acc.device) {
                                out.adversary_successes += 1;
                            } else {
                                out.server_accepts += 1;
                            }
                        }
                        Err(e) => {
                            out.rejects += 1;
                            out.errors.push(e);
                        }
                    }
                }
                MsgKind::Challenge => unreachable!("challenges travel to the device"),
            }
            continue;
        }
        if let Some(f) = channel.to_device.pop_front() {
            let result = MsgServerChallenge::decode(&f.bytes)
                .map_err(ProtocolError::Epuf)
                .and_then(|m| device.process(&m, report, rng));
            match result {
                Ok(acc) => {
                    if f.forged {
                        out.adversary_successes += 1;
                    } else {
                        out.device_accepts += 1;
                    }
                    let reply = Frame {
                        kind: MsgKind::Response,
                        bytes: acc.response.encode().to_vec(),
                        forged: f.forged,
                    };
                    channel.send(reply, tap);
                }
                Err(e) => {
                    out.rejects += 1;
                    out.errors.push(e);
                }
            }
            continue;
        }
        break;
    }
    out.wire = channel.log[log_start..].to_vec();
    out
}
