//! Protocol world (one enrolled device, one server) and the adversary
//! scenarios run against it.

use std::collections::HashSet;
use std::fmt;

use epuf_core::keygen::SimulatedEpuf;
use epuf_core::protocol::{
    enroll, Device, DeviceHandle, MsgAuthInit, MsgServerChallenge, OpCounters, ReenrollPolicy, Server, ServerDb,
    ServerDbRow,
};
use epuf_core::{DeviceModel, SecretKey};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;

use crate::channel::{run_session, Channel, Frame, MsgKind, PassThrough, SessionOutcome, Tap};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TamperField {
    Id,
    N,
    A,
    V1,
    Ch,
    Hs,
    E,
    V2,
}

impl TamperField {
    pub const ALL: [TamperField; 8] = [
        TamperField::Id,
        TamperField::N,
        TamperField::A,
        TamperField::V1,
        TamperField::Ch,
        TamperField::Hs,
        TamperField::E,
        TamperField::V2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TamperField::Id => "ID",
            TamperField::N => "N",
            TamperField::A => "A",
            TamperField::V1 => "V1",
            TamperField::Ch => "Ch",
            TamperField::Hs => "HS",
            TamperField::E => "E",
            TamperField::V2 => "V2",
        }
    }

    /// Message carrying the field and its byte range.
    pub fn location(self) -> (MsgKind, std::ops::Range<usize>) {
        match self {
            TamperField::Id => (MsgKind::Init, 0..16),
            TamperField::N => (MsgKind::Init, 16..32),
            TamperField::A => (MsgKind::Challenge, 0..32),
            TamperField::V1 => (MsgKind::Challenge, 32..64),
            TamperField::Ch => (MsgKind::Challenge, 64..96),
            TamperField::Hs => (MsgKind::Challenge, 96..128),
            TamperField::E => (MsgKind::Response, 0..32),
            TamperField::V2 => (MsgKind::Response, 32..64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Honest,
    Eavesdrop,
    ReplayInit,
    ReplayChallenge,
    ReplayResponse,
    Tamper(TamperField),
    BogusFlood,
    IdLinkability,
}

impl Scenario {
    /// Every adversarial scenario, with one tamper scenario per field.
    pub fn adversarial() -> Vec<Scenario> {
        let mut v = vec![
            Scenario::Eavesdrop,
            Scenario::ReplayInit,
            Scenario::ReplayChallenge,
            Scenario::ReplayResponse,
        ];
        v.extend(TamperField::ALL.map(Scenario::Tamper));
        v.extend([Scenario::BogusFlood, Scenario::IdLinkability]);
        v
    }

    /// Parses a CLI scenario name. `tamper-each` and `all` expand to
    /// several scenarios.
    pub fn parse_list(s: &str) -> Option<Vec<Scenario>> {
        let one = match s {
            "honest" => Scenario::Honest,
            "eavesdrop" => Scenario::Eavesdrop,
            "replay-init" => Scenario::ReplayInit,
            "replay-challenge" => Scenario::ReplayChallenge,
            "replay-response" => Scenario::ReplayResponse,
            "bogus-flood" => Scenario::BogusFlood,
            "id-linkability" => Scenario::IdLinkability,
            "tamper-each" => return Some(TamperField::ALL.map(Scenario::Tamper).to_vec()),
            "all" => return Some(Scenario::adversarial()),
            other => {
                let field = other.strip_prefix("tamper:")?;
                let f = TamperField::ALL
                    .into_iter()
                    .find(|f| f.name().eq_ignore_ascii_case(field))?;
                Scenario::Tamper(f)
            }
        };
        Some(vec![one])
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Honest => f.write_str("honest"),
            Scenario::Eavesdrop => f.write_str("eavesdrop"),
            Scenario::ReplayInit => f.write_str("replay-init"),
            Scenario::ReplayChallenge => f.write_str("replay-challenge"),
            Scenario::ReplayResponse => f.write_str("replay-response"),
            Scenario::Tamper(field) => write!(f, "tamper:{}", field.name()),
            Scenario::BogusFlood => f.write_str("bogus-flood"),
            Scenario::IdLinkability => f.write_str("id-linkability"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub epuf_reads: u64,
    pub hashes: u64,
    pub xors: u64,
    pub random_draws: u64,
}

impl From<OpCounters> for OpCounts {
    fn from(c: OpCounters) -> Self {
        OpCounts {
            epuf_reads: c.epuf_reads,
            hashes: c.hashes,
            xors: c.xors,
            random_draws: c.random_draws,
        }
    }
}

/// One line of the JSON-lines harness report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnessReport {
    pub scenario: String,
    pub sessions: usize,
    /// Sessions that ended in a mutual accept of the honest exchange.
    pub accepts: usize,
    /// Frames rejected by their receiver.
    pub rejects: usize,
    /// Init frames silently dropped for an unknown ID.
    pub drops: usize,
    pub adversary_successes: usize,
    /// Device work over the whole scenario.
    pub device_op_counts: OpCounts,
    /// Device work per bogus challenge; set for the bogus flood only.
    pub per_message_ops: Option<OpCounts>,
    /// Whether every bogus challenge cost exactly `per_message_ops`.
    pub per_message_ops_uniform: Option<bool>,
    pub distinct_ids: usize,
    pub id_repeats: usize,
    /// Challenge and response bytes per accepted session, deduplicated.
    pub overhead_bytes: Vec<usize>,
    /// Out-of-band ID resynchronizations after a lost final message.
    pub resyncs: usize,
    /// Rejected sessions that still changed persistent state.
    pub state_violations: usize,
}

impl HarnessReport {
    fn new(scenario: Scenario, sessions: usize) -> Self {
        HarnessReport {
            scenario: scenario.to_string(),
            sessions,
            accepts: 0,
            rejects: 0,
            drops: 0,
            adversary_successes: 0,
            device_op_counts: OpCounts::default(),
            per_message_ops: None,
            per_message_ops_uniform: None,
            distinct_ids: 0,
            id_repeats: 0,
            overhead_bytes: vec![],
            resyncs: 0,
            state_violations: 0,
        }
    }

    fn absorb(&mut self, o: &SessionOutcome) {
        self.accepts += o.mutual_accept() as usize;
        self.rejects += o.rejects;
        self.drops += o.drops;
        self.adversary_successes += o.adversary_successes;
        if o.mutual_accept() {
            let b = o.overhead_bytes();
            if !self.overhead_bytes.contains(&b) {
                self.overhead_bytes.push(b);
                self.overhead_bytes.sort_unstable();
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// No adversary success, no ID reuse, no state change on reject.
    pub fn secure(&self) -> bool {
        self.adversary_successes == 0 && self.id_repeats == 0 && self.state_violations == 0
    }
}

/// Persistent state of both parties, for before/after comparisons.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Snapshot {
    device_id: [u8; 16],
    row: ServerDbRow,
}

/// One device enrolled with one server. The device model is noise-free so
/// that honest sessions succeed at every temperature of the envelope.
pub struct World {
    pub device: Device<SimulatedEpuf>,
    pub server: Server,
    pub handle: DeviceHandle,
    pub channel: Channel,
    pub rng: ChaCha8Rng,
}

impl World {
    pub fn new(cfg: &RunConfig, n_crps: usize) -> Result<World> {
        let model = DeviceModel::new(cfg.device_seed(0), cfg.geometry, cfg.f_fail, cfg.f_marginal, 0.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0x6175_7468);
        let mut device = Device::new(SimulatedEpuf::new(model.clone(), cfg.pattern, rng.next_u64()));
        let mut db = ServerDb::new();
        let handle = enroll(
            &mut db,
            None,
            &mut device,
            &model,
            n_crps,
            &cfg.keygen_params(),
            ReenrollPolicy::Append,
            &mut rng,
        )?;
        Ok(World {
            device,
            server: Server::new(db),
            handle,
            channel: Channel::new(),
            rng,
        })
    }

    pub fn row(&self) -> &ServerDbRow {
        self.server.db().row(self.handle).expect("enrolled row")
    }

    /// Keys of every CRP consumed so far, in use order.
    pub fn used_keys(&self) -> Vec<SecretKey> {
        let row = self.row();
        row.crps[..row.cursor].iter().map(|c| c.key).collect()
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            device_id: self.device.current_id(),
            row: self.row().clone(),
        }
    }

    fn payloads(&mut self) -> ([u8; 16], [u8; 16]) {
        let mut m = [0u8; 16];
        let mut d = [0u8; 16];
        self.rng.fill_bytes(&mut m);
        self.rng.fill_bytes(&mut d);
        (m, d)
    }

    /// Puts the device at a random temperature of the envelope.
    fn pick_temperature(&mut self) {
        let u = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        self.device.epuf_mut().set_temperature(25.0 + 30.0 * u);
    }

    /// One session through `tap` at a random temperature.
    pub fn session(&mut self, tap: &mut dyn Tap) -> SessionOutcome {
        self.pick_temperature();
        let (m, d) = self.payloads();
        run_session(
            &mut self.device,
            &mut self.server,
            &mut self.channel,
            tap,
            &m,
            &d,
            &mut self.rng,
        )
    }

    /// Reinstalls the server's ID on the device when the two disagree.
    fn resync(&mut self) -> bool {
        let id = self.row().current_id;
        if self.device.current_id() != id {
            self.device.install_id(id);
            return true;
        }
        false
    }

    fn random_bit(&mut self, len_bytes: usize) -> (usize, u8) {
        let bit = (self.rng.next_u64() % (len_bytes as u64 * 8)) as usize;
        (bit / 8, 1 << (bit % 8))
    }
}

/// IDs sent in sessions that completed. A device whose session fails
/// retries with the same ID, so only completed sessions are expected to
/// carry fresh ones.
fn accepted_ids(o: &SessionOutcome) -> Vec<[u8; 16]> {
    if !o.mutual_accept() {
        return vec![];
    }
    o.wire
        .iter()
        .filter(|f| f.kind == MsgKind::Init && !f.forged)
        .map(|f| f.bytes[..16].try_into().unwrap())
        .collect()
}

/// CRPs needed to run `sessions` sessions of `scenario` in a fresh world.
pub fn crps_needed(scenario: Scenario, sessions: usize) -> usize {
    match scenario {
        Scenario::Tamper(_) | Scenario::BogusFlood => 2,
        _ => sessions + 1,
    }
}

/// Runs `sessions` sessions of `scenario` against `world`.
pub fn run_scenario(world: &mut World, scenario: Scenario, sessions: usize) -> HarnessReport {
    let mut report = HarnessReport::new(scenario, sessions);
    let ops_start = world.device.counters();
    let mut ids: Vec<[u8; 16]> = Vec::new();

    match scenario {
        Scenario::Honest | Scenario::IdLinkability => {
            for _ in 0..sessions {
                let o = world.session(&mut PassThrough);
                ids.extend(accepted_ids(&o));
                report.absorb(&o);
            }
            if scenario == Scenario::IdLinkability {
                // the ID for the next session is on the wire as well
                let init = world.device.start(&mut world.rng);
                ids.push(init.id);
                world.device.install_id(init.id);
            }
        }
        Scenario::Eavesdrop => {
            let mut seen: HashSet<Vec<u8>> = HashSet::new();
            let mut repeats = 0;
            for _ in 0..sessions {
                let o = world.session(&mut PassThrough);
                report.absorb(&o);
                ids.extend(accepted_ids(&o));
                for f in &o.wire {
                    for field in TamperField::ALL {
                        let (kind, range) = field.location();
                        // helper streams are static public data
                        if kind != f.kind || field == TamperField::Hs {
                            continue;
                        }
                        if !seen.insert(f.bytes[range].to_vec()) {
                            repeats += 1;
                        }
                    }
                }
            }
            // a repeated wire value would let a passive observer link sessions
            report.adversary_successes += repeats;
        }
        Scenario::ReplayInit | Scenario::ReplayChallenge | Scenario::ReplayResponse => {
            let kind = match scenario {
                Scenario::ReplayInit => MsgKind::Init,
                Scenario::ReplayChallenge => MsgKind::Challenge,
                _ => MsgKind::Response,
            };
            let mut recorded: Option<Vec<u8>> = None;
            for _ in 0..sessions {
                let stale = recorded.clone();
                let mut current = None;
                let mut tap = |f: Frame| -> Vec<Frame> {
                    if f.kind != kind || f.forged {
                        return vec![f];
                    }
                    current = Some(f.bytes.clone());
                    let replay = |bytes: Vec<u8>| Frame {
                        kind,
                        bytes,
                        forged: true,
                    };
                    match (kind, stale.clone()) {
                        // the final message is replayed after the genuine one,
                        // both the previous session's and this session's
                        (MsgKind::Response, s) => {
                            let mut v = vec![f.clone()];
                            v.extend(s.map(replay));
                            v.push(replay(f.bytes));
                            v
                        }
                        (_, Some(s)) => vec![replay(s), f],
                        (_, None) => vec![f],
                    }
                };
                let o = world.session(&mut tap);
                report.absorb(&o);
                ids.extend(accepted_ids(&o));
                recorded = current;
                report.resyncs += world.resync() as usize;
            }
        }
        Scenario::Tamper(field) => {
            let (kind, range) = field.location();
            for _ in 0..sessions {
                let before = world.snapshot();
                let (byte, bit) = world.random_bit(range.len());
                let at = range.start + byte;
                let mut tap = |mut f: Frame| -> Vec<Frame> {
                    if f.kind == kind && !f.forged {
                        f.bytes[at] ^= bit;
                        f.forged = true;
                    }
                    vec![f]
                };
                let o = world.session(&mut tap);
                report.absorb(&o);
                ids.extend(accepted_ids(&o));
                let after = world.snapshot();
                // the device commits its next ID before the final message,
                // so only the server side must be unchanged for E and V2
                let device_changed = before.device_id != after.device_id;
                let device_may_change = kind == MsgKind::Response;
                if before.row != after.row || (device_changed && !device_may_change) {
                    report.state_violations += 1;
                }
                report.resyncs += world.resync() as usize;
            }
        }
        Scenario::BogusFlood => {
            bogus_flood(world, sessions, &mut report);
        }
    }

    report.device_op_counts = (world.device.counters() - ops_start).into();
    if !ids.is_empty() {
        let distinct: HashSet<_> = ids.iter().collect();
        report.distinct_ids = distinct.len();
        report.id_repeats = ids.len() - distinct.len();
    }
    report
}

/// Floods the device with well-formed challenges (a valid, public `Ch`;
/// random `A`, `V1`, `HS`) while an honest session is pending, then lets the
/// honest session finish.
fn bogus_flood(world: &mut World, n: usize, report: &mut HarnessReport) {
    world.pick_temperature();
    let (m, d) = world.payloads();
    let init: MsgAuthInit = world.device.start(&mut world.rng);
    let (handle, genuine) = world
        .server
        .respond(&init, &m, &mut world.rng)
        .expect("enrolled device gets a challenge");
    let public_ch = world.row().crps[world.row().cursor].challenge;

    let mut per: Option<OpCounts> = None;
    let mut uniform = true;
    for _ in 0..n {
        let mut bogus = MsgServerChallenge {
            a: [0; 32],
            v1: [0; 32],
            ch: public_ch,
            hs: [0; 32],
        };
        world.rng.fill_bytes(&mut bogus.a);
        world.rng.fill_bytes(&mut bogus.v1);
        world.rng.fill_bytes(&mut bogus.hs);
        let before = world.device.counters();
        match world.device.process(&bogus, &d, &mut world.rng) {
            Ok(_) => report.adversary_successes += 1,
            Err(_) => report.rejects += 1,
        }
        let cost: OpCounts = (world.device.counters() - before).into();
        match per {
            None => per = Some(cost),
            Some(p) => uniform &= p == cost,
        }
    }
    report.per_message_ops = per;
    report.per_message_ops_uniform = Some(uniform);

    // the pending session survives the flood
    let mut o = SessionOutcome::default();
    match world.device.process(&genuine, &d, &mut world.rng) {
        Ok(acc) => {
            o.device_accepts += 1;
            match world.server.finalize(handle, &acc.response) {
                Ok(_) => o.server_accepts += 1,
                Err(_) => o.rejects += 1,
            }
            o.wire = vec![
                Frame::honest(MsgKind::Challenge, genuine.encode().to_vec()),
                Frame::honest(MsgKind::Response, acc.response.encode().to_vec()),
            ];
        }
        Err(_) => o.rejects += 1,
    }
    report.absorb(&o);
}
