//! Subcommand implementations behind the `epuf` binary. Every command reads
//! a [`RunConfig`], writes its artifacts under an output directory and
//! returns a human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use epuf_core::keygen::{characterize_segment, reconstruct, SegmentCharacterization, WINDOW_BITS};
use epuf_core::protocol::{CrpRecord, SESSION_OVERHEAD_BYTES};
use epuf_core::{HelperStream, ReadCondition, SegmentAddr};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, EnrolledDevice, SidecarEntry};
use crate::harness::{crps_needed, run_scenario, HarnessReport, Scenario, World};
use crate::metrics::{self, Scope};

/// Summary of a finished command. `CheckFailed` means the command ran but
/// one of its built-in checks did not hold.
pub enum Outcome {
    Ok(String),
    CheckFailed(String),
}

fn write(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(Error::io(format!("creating {}", out.display())))?;
    let path = out.join(name);
    fs::write(&path, contents).map_err(Error::io(format!("writing {}", path.display())))?;
    Ok(path)
}

fn metadata(cfg: &RunConfig, command: &str) -> String {
    let mut s = format!("# epuf {command}\n");
    s.push_str(&cfg.render());
    s
}

/// Selects precision and builds helper streams for every segment of every
/// device, then enrolls up to `crps_per_device` windows per device.
pub fn characterize(cfg: &RunConfig, out: &Path, dump_bitmaps: bool) -> Result<Outcome> {
    let params = cfg.keygen_params();
    let models = cfg.population()?;
    let items: Vec<(usize, SegmentAddr)> = (0..models.len())
        .flat_map(|d| cfg.geometry.addresses().map(move |a| (d, a)))
        .collect();
    let chars: Vec<(usize, SegmentCharacterization)> = items
        .par_iter()
        .map(|&(d, addr)| Ok((d, characterize_segment(&models[d].segment(addr)?, &params)?)))
        .collect::<Result<_>>()?;

    let mut precision = String::from("device,chip,bank,segment,dmax,frac_bits,ef_bits,qualified,viable_windows\n");
    let mut enrolled: Vec<EnrolledDevice> = (0..models.len())
        .map(|index| EnrolledDevice { index, crps: vec![] })
        .collect();
    for (d, ch) in &chars {
        let regs = ch.registrations(params.theta, params.min_qualified);
        let a = ch.addr;
        let _ = writeln!(
            precision,
            "{},{},{},{},{},{},{},{},{}",
            d,
            a.chip,
            a.bank,
            a.segment,
            ch.precision.dmax,
            ch.precision.frac_bits,
            ch.reference.bits().len(),
            ch.helper_stream(params.theta).qualified(),
            regs.len()
        );
        let dev = &mut enrolled[*d];
        let room = cfg.crps_per_device.saturating_sub(dev.crps.len());
        dev.crps
            .extend(regs.iter().take(room).map(CrpRecord::from_registration));
    }

    let empty: Vec<usize> = enrolled.iter().filter(|d| d.crps.is_empty()).map(|d| d.index).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x6964);
    let sidecar: Vec<SidecarEntry> = enrolled
        .iter()
        .map(|d| {
            let mut id = [0u8; 16];
            rng.fill_bytes(&mut id);
            SidecarEntry {
                index: d.index,
                id,
                cursor: 0,
            }
        })
        .collect();

    write(out, "precision.csv", &precision)?;
    write(out, "enrollment.txt", &formats::write_enrollment(&enrolled))?;
    write(out, "server_state.txt", &formats::write_sidecar(&sidecar))?;
    if dump_bitmaps {
        let dir = out.join("bitmaps");
        fs::create_dir_all(&dir).map_err(Error::io(format!("creating {}", dir.display())))?;
        for addr in cfg.geometry.addresses() {
            let bm = models[0].reference_read(addr, cfg.pattern)?;
            let path = dir.join(format!("dev0_c{}_b{}_s{}.bin", addr.chip, addr.bank, addr.segment));
            let mut f = fs::File::create(&path).map_err(Error::io(format!("creating {}", path.display())))?;
            formats::write_bitmap(&mut f, &bm)?;
        }
    }

    let total: usize = enrolled.iter().map(|d| d.crps.len()).sum();
    let mut report = metadata(cfg, "characterize");
    let _ = writeln!(report, "segments_characterized = {}", chars.len());
    let _ = writeln!(report, "crps_enrolled = {total}");
    let _ = writeln!(report, "devices_without_crps = {}", empty.len());
    write(out, "characterize_report.txt", &report)?;

    let summary = format!(
        "characterized {} segments of {} devices, enrolled {} CRPs -> {}",
        chars.len(),
        models.len(),
        total,
        out.display()
    );
    if !empty.is_empty() {
        return Ok(Outcome::CheckFailed(format!(
            "{summary}\nno viable challenge on device(s) {empty:?}"
        )));
    }
    Ok(Outcome::Ok(summary))
}

/// Metric CSVs for the configured population.
pub fn evaluate(cfg: &RunConfig, out: &Path, scopes: &[Scope]) -> Result<Outcome> {
    let models = cfg.population()?;
    let pipeline = cfg.pipeline();
    let study = metrics::study_population(&models, &pipeline, &cfg.temperatures, cfg.reads_per_point)?;

    let mut thetas = cfg.thetas.clone();
    if !thetas.contains(&cfg.theta) {
        thetas.push(cfg.theta);
    }
    thetas.sort_unstable();
    let groups: Vec<(u32, Vec<HelperStream>)> = thetas.iter().map(|&t| (t, study.helper_streams(t))).collect();
    let dists = metrics::reliable_bit_distribution(&groups)?;

    let entities = study.entities(cfg.theta);
    let mut uniq = Vec::new();
    let mut skipped_scopes = Vec::new();
    for &scope in scopes {
        match metrics::uniqueness_study(&entities, scope) {
            Ok(r) => uniq.push(r),
            Err(_) => skipped_scopes.push(scope.name()),
        }
    }
    let profile = metrics::entropy_profile(
        &models[0],
        SegmentAddr::new(0, 0, 0),
        &pipeline.params,
        &cfg.temperatures,
    )?;

    write(out, "ber.csv", &metrics::ber_csv(&study.ber()))?;
    write(
        out,
        "reliable_bits.csv",
        &metrics::reliable_bits_csv(&study.segments, &dists),
    )?;
    write(out, "uniqueness.csv", &metrics::uniqueness_csv(&uniq))?;
    write(out, "entropy_profile.csv", &metrics::entropy_profile_csv(&profile))?;

    let mut report = metadata(cfg, "evaluate");
    for d in &dists {
        let _ = writeln!(report, "mean_qualified_bits theta={} : {}", d.theta, d.mean());
    }
    for u in &uniq {
        let _ = writeln!(
            report,
            "mean_hd {} : {} ({} pairs)",
            u.scope.name(),
            u.mean,
            u.samples.len()
        );
    }
    for s in &skipped_scopes {
        let _ = writeln!(report, "mean_hd {s} : n/a (fewer than two entities)");
    }
    for t in 1..profile.temperatures.len() {
        let _ = writeln!(
            report,
            "entropy_correlation t{} : {}",
            profile.temperatures[t],
            profile.correlation(t)
        );
    }
    write(out, "evaluate_report.txt", &report)?;
    Ok(Outcome::Ok(report))
}

pub struct KeygenArgs {
    pub device: usize,
    pub addr: SegmentAddr,
    pub window: u32,
}

/// Registers one window and reconstructs its key `reads_per_point` times
/// at each configured temperature.
pub fn keygen(cfg: &RunConfig, out: &Path, args: &KeygenArgs) -> Result<Outcome> {
    let model = cfg.device(args.device)?;
    let params = cfg.keygen_params();
    let (reg, precision) = epuf_core::keygen::register(&model, args.addr, args.window * WINDOW_BITS as u32, &params)?;
    let mut s = metadata(cfg, "keygen");
    let _ = writeln!(s, "device = {}", args.device);
    let _ = writeln!(s, "challenge = {}", hex::encode(reg.challenge.encode()));
    let _ = writeln!(s, "dmax = {}", precision.dmax);
    let _ = writeln!(s, "frac_bits = {}", precision.frac_bits);
    let _ = writeln!(s, "helper_stream = {}", formats::bits_to_hex(&reg.hs.mask));
    let _ = writeln!(s, "qualified = {}", reg.hs.qualified());
    let _ = writeln!(s, "key = {}", hex::encode(reg.key.as_bytes()));
    let mut mismatches = 0;
    for (i, &t) in cfg.temperatures.iter().enumerate() {
        for r in 0..cfg.reads_per_point {
            let nonce = epuf_core::helper::derive_nonce(cfg.seed, 0x6b65_7967, (i * cfg.reads_per_point + r) as u64);
            let k = reconstruct(
                &model,
                &reg.challenge,
                &reg.hs,
                &ReadCondition::new(t, nonce, cfg.pattern),
            )?;
            let ok = k == reg.key;
            mismatches += !ok as usize;
            let _ = writeln!(
                s,
                "reconstruct t={t} read={r} : {}",
                if ok { "match" } else { "mismatch" }
            );
        }
    }
    let _ = writeln!(s, "mismatches = {mismatches}");
    write(out, "keygen.txt", &s)?;
    Ok(Outcome::Ok(s))
}

fn hex_frame(label: &str, bytes: &[u8]) -> String {
    format!("  {label:<9} {:>3} B  {}", bytes.len(), hex::encode(bytes))
}

/// Runs `cfg.sessions` honest sessions with a transcript, then each
/// requested attack scenario in a fresh world.
pub fn auth_demo(cfg: &RunConfig, out: &Path, attacks: &[Scenario]) -> Result<Outcome> {
    let mut text = String::new();
    let mut failures = Vec::new();

    let mut world = World::new(cfg, crps_needed(Scenario::Honest, cfg.sessions))?;
    let mut accepts = 0;
    for i in 0..cfg.sessions {
        let o = world.session(&mut crate::channel::PassThrough);
        let _ = writeln!(text, "session {i}");
        for f in &o.wire {
            let label = match f.kind {
                crate::channel::MsgKind::Init => "init",
                crate::channel::MsgKind::Challenge => "challenge",
                crate::channel::MsgKind::Response => "response",
            };
            let _ = writeln!(text, "{}", hex_frame(label, &f.bytes));
        }
        let verdict = if o.mutual_accept() { "accept" } else { "reject" };
        let _ = writeln!(text, "  result {verdict}, overhead {} B", o.overhead_bytes());
        if o.mutual_accept() {
            accepts += 1;
        }
        if o.overhead_bytes() != SESSION_OVERHEAD_BYTES {
            failures.push(format!("session {i}: overhead {} B", o.overhead_bytes()));
        }
    }
    if accepts != cfg.sessions {
        failures.push(format!(
            "{} of {} honest sessions rejected",
            cfg.sessions - accepts,
            cfg.sessions
        ));
    }
    let _ = writeln!(text, "honest sessions: {accepts}/{} accepted", cfg.sessions);
    let _ = writeln!(
        text,
        "overhead per session (challenge + response): {SESSION_OVERHEAD_BYTES}"
    );

    let mut jsonl = String::new();
    for &scenario in attacks {
        let mut w = World::new(cfg, crps_needed(scenario, cfg.sessions))?;
        let r: HarnessReport = run_scenario(&mut w, scenario, cfg.sessions);
        let _ = writeln!(
            text,
            "attack {}: {} sessions, {} adversary successes, {} state violations",
            r.scenario, r.sessions, r.adversary_successes, r.state_violations
        );
        if !r.secure() {
            failures.push(format!("attack {} not contained", r.scenario));
        }
        jsonl.push_str(&r.to_json());
        jsonl.push('\n');
    }

    write(out, "auth_transcript.txt", &text)?;
    if !attacks.is_empty() {
        write(out, "harness.jsonl", &jsonl)?;
    }
    if failures.is_empty() {
        Ok(Outcome::Ok(text))
    } else {
        Ok(Outcome::CheckFailed(format!("{text}{}", failures.join("\n"))))
    }
}

/// Parses `chip:bank:segment`.
pub fn parse_addr(s: &str) -> Option<SegmentAddr> {
    let parts: Vec<u32> = s.split(':').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    match parts[..] {
        [chip, bank, segment] => Some(SegmentAddr::new(chip, bank, segment)),
        _ => None,
    }
}
