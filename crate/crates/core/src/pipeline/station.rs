use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rate::ControlSwitches;
use crate::cascade::{reconcile, CascadeConfig, CascadeResponder, ChannelOracle};
use crate::control::{
    phase_controller_step, polarization_controller_step, pump_controller_step, ControlMode, PhaseConfig, PhaseController,
    PolarizationConfig, PolarizationController, PumpConfig, PumpController,
};
use crate::linksim::{rng_stream, LinkSimulator};
use crate::model::{Basis, BasisOutcome, LinkScenario, Station, TelemetryRecord, TimeTag};
use crate::netlink::{control, Channel, ChannelStats, Message};
use crate::pa::{secrecy_budget, toeplitz_hash_seeded, FiniteKeyParams, KeyProvenance, KeyStore, SecretKey};
use crate::sift::{match_coincidences, qber_confidence, select_sample, SiftConfig};
use crate::sync::{SyncConfig, SyncEngine, SyncEvent};
use crate::{Error, Result};

/// Configuration shared by both station engines. Both ends must load the same values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationConfig {
    pub duration_s: f64,
    pub batch_s: f64,
    /// Raw Z bits per block, disclosed sample included.
    pub block_bits: usize,
    pub sift: SiftConfig,
    pub cascade: CascadeConfig,
    pub sync: SyncConfig,
    pub pump: PumpConfig,
    pub phase: PhaseConfig,
    pub polarization: PolarizationConfig,
    pub controllers: ControlSwitches,
    pub eps_sec: f64,
    pub eps_cor: f64,
    pub recv_timeout_s: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            duration_s: 30.0,
            batch_s: 0.5,
            block_bits: 16_384,
            sift: SiftConfig::default(),
            cascade: CascadeConfig::default(),
            sync: SyncConfig::default(),
            pump: PumpConfig::default(),
            phase: PhaseConfig::default(),
            polarization: PolarizationConfig::default(),
            controllers: ControlSwitches::default(),
            eps_sec: 1e-9,
            eps_cor: 1e-15,
            recv_timeout_s: 300.0,
        }
    }
}

impl StationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.batch_s > 0.0) {
            return Err(Error::config("station.duration_s", "duration and batch length must be positive"));
        }
        if self.block_bits < 64 {
            return Err(Error::config("station.block_bits", "must be at least 64"));
        }
        if !(self.sift.sample_fraction > 0.0 && self.sift.sample_fraction < 1.0) {
            return Err(Error::config("station.sift.sample_fraction", "must lie in (0, 1)"));
        }
        self.cascade.validate()
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.recv_timeout_s.max(0.001))
    }
}

/// A key written by a station.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmittedKey {
    pub epoch: u64,
    pub len: usize,
    pub ledger_ok: bool,
    pub provenance: KeyProvenance,
}

/// Outcome of one station's run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationReport {
    pub station: Station,
    pub batches: u64,
    pub blocks: u64,
    pub blocks_discarded: u64,
    pub reconciled_bits: u64,
    pub leaked_bits: u64,
    pub secret_bits: u64,
    pub sample_bits: u64,
    pub sample_errors: u64,
    /// X-basis test events and errors (Bob only).
    pub x_events: u64,
    pub x_errors: u64,
    /// SHA-256 over all emitted key bits in order.
    pub key_digest: String,
    pub keys: Vec<EmittedKey>,
    /// `(time, measured residual)` of every tracking update (Bob only).
    pub sync_updates: Vec<(f64, f64)>,
    /// Seconds from start until QBERx first fell below 5 % with the phase loop locked.
    pub phase_lock_s: Option<f64>,
    pub telemetry: Vec<TelemetryRecord>,
    pub channel: ChannelStats,
}

impl StationReport {
    fn new(station: Station) -> Self {
        Self {
            station,
            batches: 0,
            blocks: 0,
            blocks_discarded: 0,
            reconciled_bits: 0,
            leaked_bits: 0,
            secret_bits: 0,
            sample_bits: 0,
            sample_errors: 0,
            x_events: 0,
            x_errors: 0,
            key_digest: String::new(),
            keys: Vec::new(),
            sync_updates: Vec::new(),
            phase_lock_s: None,
            telemetry: Vec::new(),
            channel: ChannelStats::default(),
        }
    }

    pub fn skr_bps(&self, duration_s: f64) -> f64 {
        self.secret_bits as f64 / duration_s
    }
}

/// Both ends of a link run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkReport {
    pub alice: StationReport,
    pub bob: StationReport,
}

impl LinkReport {
    /// Both stations emitted the same key material.
    pub fn keys_match(&self) -> bool {
        self.alice.key_digest == self.bob.key_digest && self.alice.secret_bits == self.bob.secret_bits
    }
}

/// Side information carried in `TELEMETRY` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Note {
    Provenance { block: u64, provenance: KeyProvenance },
    BatchDone { batch: u64, pump_attenuation_db: f64, phase_b_rad: f64, polarization_b_rad: f64 },
    Actuator { batch: u64, polarization_a_rad: f64 },
}

fn send_note(ch: &Channel, n: &Note) -> Result<()> {
    let json = serde_json::to_string(n).expect("note serializes");
    ch.send_message(&Message::Telemetry { json })?;
    Ok(())
}

fn parse_note(json: &str) -> Result<Note> {
    serde_json::from_str(json).map_err(|e| Error::Protocol(format!("bad telemetry note: {e}")))
}

/// State common to both stations: the local simulator copy, the station's
/// polarization loop and its key sink.
struct Local {
    sim: LinkSimulator,
    pol: PolarizationController,
    pol_acc: (u64, f64),
    store: Option<KeyStore>,
    hasher: Sha256,
    report: StationReport,
}

impl Local {
    fn new(sc: &LinkScenario, cfg: &StationConfig, station: Station, keystore: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let store = match keystore {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let name = match station {
                    Station::Alice => "alice.keys",
                    Station::Bob => "bob.keys",
                };
                Some(KeyStore::open(dir.join(name), station)?)
            }
            None => None,
        };
        Ok(Self {
            sim: LinkSimulator::new(sc.clone())?,
            pol: PolarizationController::new(cfg.polarization, 0.0),
            pol_acc: (0, 0.0),
            store,
            hasher: Sha256::new(),
            report: StationReport::new(station),
        })
    }

    /// Steps the station's polarization loop on its own singles.
    fn polarization(&mut self, cfg: &StationConfig, own_tags: usize, t_s: f64) {
        if !cfg.controllers.polarization {
            return;
        }
        self.pol_acc.0 += own_tags as u64;
        self.pol_acc.1 += cfg.batch_s;
        if self.pol_acc.1 >= cfg.polarization.interval_s - 1e-9 {
            let rate = self.pol_acc.0 as f64 / self.pol_acc.1;
            self.pol_acc = (0, 0.0);
            let dark = self.sim.is_dark(t_s);
            self.pol = polarization_controller_step(&self.pol, rate, dark, t_s);
        }
    }

    fn emit(&mut self, block: u64, bits: Vec<bool>, provenance: KeyProvenance) -> Result<()> {
        let key = SecretKey { bits, epoch: block, provenance };
        let packed: Vec<u8> = key.bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |a, (i, &b)| a | ((b as u8) << i))).collect();
        self.hasher.update((key.len() as u64).to_le_bytes());
        self.hasher.update(&packed);
        if let Some(s) = &mut self.store {
            s.append(&key)?;
        }
        self.report.secret_bits += key.len() as u64;
        self.report.keys.push(EmittedKey {
            epoch: block,
            len: key.len(),
            ledger_ok: key.ledger_ok(),
            provenance: key.provenance,
        });
        Ok(())
    }

    fn finish(mut self, ch: &Channel) -> StationReport {
        let digest = self.hasher.finalize();
        self.report.key_digest = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.report.channel = ch.stats();
        self.report
    }
}

fn outcome_of(sim: &LinkSimulator, tag: &TimeTag) -> Result<BasisOutcome> {
    sim.analyzer()
        .outcome(tag.channel)
        .ok_or_else(|| Error::Protocol(format!("channel {} not in analyzer table", tag.channel)))
}

fn batch_count(cfg: &StationConfig) -> u64 {
    (cfg.duration_s / cfg.batch_s).round().max(1.0) as u64
}

/// Alice's engine: announces bases, answers disclosure, parity and PA requests.
pub fn run_alice(sc: &LinkScenario, cfg: &StationConfig, ch: &Channel, keystore: Option<&Path>) -> Result<StationReport> {
    let mut me = Local::new(sc, cfg, Station::Alice, keystore)?;
    let timeout = cfg.timeout();
    let mut responder = CascadeResponder::new();
    responder.hash_bits = cfg.cascade.hash_bits;
    let mut raw: VecDeque<bool> = VecDeque::new();
    let mut provenance: HashMap<u64, KeyProvenance> = HashMap::new();
    for batch in 0..batch_count(cfg) {
        let b = me.sim.next_batch(cfg.batch_s);
        let own = b.a;
        let outcomes: Vec<BasisOutcome> = own.tags.iter().map(|t| outcome_of(&me.sim, t)).collect::<Result<_>>()?;
        ch.send_message(&Message::BasisAnnounce {
            batch,
            times_ps: own.tags.iter().map(|t| t.t as i64).collect(),
            bases: outcomes.iter().map(|o| o.basis()).collect(),
        })?;
        loop {
            match ch.recv_message(timeout)? {
                Message::SiftAnnounce { batch: bb, kept } if bb == batch => {
                    let mut xi = Vec::new();
                    let mut xb = Vec::new();
                    for (pos, &i) in kept.iter().enumerate() {
                        let o = *outcomes
                            .get(i as usize)
                            .ok_or_else(|| Error::Protocol(format!("sift index {i} out of range")))?;
                        match o.key_bit() {
                            Some(bit) => raw.push_back(bit),
                            None => {
                                xi.push(pos as u32);
                                xb.push(o.value());
                            }
                        }
                    }
                    ch.send_message(&Message::SampleDisclose { block: batch, kind: 1, indices: xi, bits: xb })?;
                }
                Message::SampleDisclose { block, kind: 0, indices, bits } => {
                    if raw.len() < cfg.block_bits {
                        return Err(Error::Protocol(format!("block {block} requested before {} bits were sifted", cfg.block_bits)));
                    }
                    let blk: Vec<bool> = raw.drain(..cfg.block_bits).collect();
                    let mut in_sample = vec![false; blk.len()];
                    let mut mine = Vec::with_capacity(indices.len());
                    for (&i, &theirs) in indices.iter().zip(&bits) {
                        let a = *blk.get(i as usize).ok_or_else(|| Error::Protocol("sample index out of range".into()))?;
                        in_sample[i as usize] = true;
                        mine.push(a);
                        me.report.sample_errors += (a != theirs) as u64;
                    }
                    me.report.sample_bits += indices.len() as u64;
                    let key: Vec<bool> = blk.iter().zip(&in_sample).filter(|(_, &s)| !s).map(|(&b, _)| b).collect();
                    responder.register(block, key);
                    me.report.blocks += 1;
                    ch.send_message(&Message::SampleDisclose { block, kind: 0, indices, bits: mine })?;
                }
                m @ (Message::ShuffleSeed { .. } | Message::ParityReq { .. } | Message::Verify { hash: None, .. }) => {
                    if let Some(reply) = responder.handle(&m)? {
                        me.report.leaked_bits += reply.parity_bits();
                        ch.send_message(&reply)?;
                    }
                }
                Message::Control { kind: control::DISCARD, value } => {
                    responder.finish(value);
                    me.report.blocks_discarded += 1;
                }
                Message::PaSeed { block, key_len, out_len, seed } => {
                    let key = responder.finish(block).ok_or_else(|| Error::Protocol(format!("PA for unknown block {block}")))?;
                    if key.len() != key_len as usize {
                        return Err(Error::Protocol(format!("block {block}: key length mismatch")));
                    }
                    let prov = provenance.remove(&block).unwrap_or_default();
                    me.report.reconciled_bits += key.len() as u64;
                    let secret = toeplitz_hash_seeded(&key, out_len as usize, seed)?;
                    me.emit(block, secret, prov)?;
                    ch.send_message(&Message::PaAck { block, out_len })?;
                }
                Message::Telemetry { json } => match parse_note(&json)? {
                    Note::Provenance { block, provenance: p } => {
                        provenance.insert(block, p);
                    }
                    Note::BatchDone { batch: bb, pump_attenuation_db, phase_b_rad, polarization_b_rad } if bb == batch => {
                        let t = (batch + 1) as f64 * cfg.batch_s;
                        me.polarization(cfg, own.tags.len(), t);
                        let pol_a = me.pol.applied_angle();
                        send_note(ch, &Note::Actuator { batch, polarization_a_rad: pol_a })?;
                        let act = &mut me.sim.actuators;
                        act.pump_attenuation_db = pump_attenuation_db;
                        act.phase_b_rad = phase_b_rad;
                        act.polarization_b_rad = polarization_b_rad;
                        act.polarization_a_rad = pol_a;
                        break;
                    }
                    other => return Err(Error::Protocol(format!("unexpected note {other:?}"))),
                },
                other => return Err(Error::Protocol(format!("alice: unexpected {:?}", other.msg_type()))),
            }
        }
        me.report.batches += 1;
    }
    match ch.recv_message(timeout)? {
        Message::Control { kind: control::SHUTDOWN, .. } => {}
        other => return Err(Error::Protocol(format!("expected shutdown, got {:?}", other.msg_type()))),
    }
    Ok(me.finish(ch))
}

/// Bob's controller state.
struct BobLoops {
    pump: PumpController,
    phase: PhaseController,
    pump_acc: (u64, u64, f64),
    phase_acc: (u64, u64, f64, f64),
    x_since_pa: (u64, u64),
    last_xx_hz: f64,
}

/// Bob's engine: synchronises, sifts, drives Cascade and privacy amplification,
/// and runs the pump and phase loops.
pub fn run_bob(sc: &LinkScenario, cfg: &StationConfig, ch: &Channel, keystore: Option<&Path>) -> Result<StationReport> {
    let mut me = Local::new(sc, cfg, Station::Bob, keystore)?;
    let timeout = cfg.timeout();
    let mut rng: ChaCha8Rng = rng_stream(sc.seed, 0x424F_4200);
    let mut sync = SyncEngine::new(cfg.sync.clone());
    let mut raw: VecDeque<bool> = VecDeque::new();
    let mut loops = BobLoops {
        pump: PumpController::new(cfg.pump, sc.pump_attenuation_db),
        phase: PhaseController::new(cfg.phase, 0.0),
        pump_acc: (0, 0, 0.0),
        phase_acc: (0, 0, 0.0, 0.0),
        x_since_pa: (0, 0),
        last_xx_hz: 0.0,
    };
    if cfg.controllers.phase {
        loops.phase.start_scan();
    }
    let table = me.sim.analyzer().clone();
    let side = sc.z_delay_ps as i64;
    let window = sc.coincidence_window_ps;
    let mut next_block = 0u64;
    let mut residual = 0.0;
    let mut secret_at_last_row = 0u64;
    for batch in 0..batch_count(cfg) {
        let b = me.sim.next_batch(cfg.batch_s);
        let (t0, t1) = (b.t_start_s, b.t_end_s);
        let own = b.b;
        let (times_a, bases_a) = match ch.recv_message(timeout)? {
            Message::BasisAnnounce { batch: bb, times_ps, bases } if bb == batch => (times_ps, bases),
            other => return Err(Error::Protocol(format!("bob: expected basis announce, got {:?}", other.msg_type()))),
        };
        let b_raw: Vec<i64> = own.tags.iter().map(|t| t.t as i64).collect();
        match sync.process(&times_a, &b_raw, t0, t1)? {
            SyncEvent::Updated(p) | SyncEvent::Locked(p) => {
                residual = p.position_ps;
                me.report.sync_updates.push((p.time_s, p.position_ps));
            }
            _ => {}
        }
        let pseudo_a: Vec<TimeTag> = times_a
            .iter()
            .zip(&bases_a)
            .map(|(&t, &basis)| TimeTag {
                t: t.max(0) as u64,
                channel: table.channel(if basis == Basis::Z { BasisOutcome::ZShort } else { BasisOutcome::XPlus }),
                station: Station::Alice,
            })
            .collect();
        let matched = match_coincidences(&pseudo_a, &own.tags, sync.discipline(), window, side, &table)?;
        let mine: Vec<BasisOutcome> = matched
            .records
            .iter()
            .map(|r| outcome_of(&me.sim, &own.tags[r.idx_b as usize]))
            .collect::<Result<_>>()?;
        let kept: Vec<u32> = matched.records.iter().map(|r| r.idx_a).collect();
        ch.send_message(&Message::SiftAnnounce { batch, kept })?;
        let (x_idx, x_bits) = match ch.recv_message(timeout)? {
            Message::SampleDisclose { block, kind: 1, indices, bits } if block == batch => (indices, bits),
            other => return Err(Error::Protocol(format!("bob: expected X disclosure, got {:?}", other.msg_type()))),
        };
        let mut x_err = 0u64;
        for (&i, &a) in x_idx.iter().zip(&x_bits) {
            let o = mine.get(i as usize).ok_or_else(|| Error::Protocol("X index out of range".into()))?;
            x_err += (o.value() != a) as u64;
        }
        let x_n = x_idx.len() as u64;
        me.report.x_events += x_n;
        me.report.x_errors += x_err;
        loops.x_since_pa.0 += x_n;
        loops.x_since_pa.1 += x_err;
        raw.extend(mine.iter().filter_map(|o| o.key_bit()));

        let (mut blk_n, mut blk_k) = (0u64, 0u64);
        while raw.len() >= cfg.block_bits {
            let (n, k) = bob_block(cfg, ch, &mut me, &mut rng, &mut raw, &mut loops, next_block, t1)?;
            next_block += 1;
            blk_n += n;
            blk_k += k;
        }

        // phase loop on X-basis errors
        if cfg.controllers.phase {
            let acc = &mut loops.phase_acc;
            if acc.3 <= 0.0 {
                let rate = if loops.last_xx_hz > 0.0 { loops.last_xx_hz } else { x_n as f64 / cfg.batch_s };
                *acc = (0, 0, t0, loops.phase.window_s(rate));
            }
            acc.0 += x_n;
            acc.1 += x_err;
            if t1 - acc.2 >= acc.3 - 1e-9 {
                let (n, k, start, _) = *acc;
                loops.phase_acc = (0, 0, 0.0, 0.0);
                loops.last_xx_hz = n as f64 / (t1 - start);
                if let Ok(est) = qber_confidence(n, k) {
                    let was_locked = loops.phase.mode == ControlMode::Locked;
                    loops.phase = phase_controller_step(&loops.phase, &est, t1);
                    if was_locked && est.estimate < 0.05 && me.report.phase_lock_s.is_none() {
                        me.report.phase_lock_s = Some(t1);
                    }
                    if loops.phase.relock_requested {
                        loops.phase.start_scan();
                    }
                }
            }
        }
        // pump loop on disclosed Z samples
        let phase_ready = !cfg.controllers.phase || loops.phase.mode == ControlMode::Locked;
        if cfg.controllers.pump && phase_ready {
            let acc = &mut loops.pump_acc;
            if acc.0 == 0 && acc.1 == 0 {
                acc.2 = t0;
            }
            acc.0 += blk_n;
            acc.1 += blk_k;
            if t1 - acc.2 >= cfg.pump.window_s - 1e-9 {
                if let Ok(est) = qber_confidence(acc.0, acc.1) {
                    loops.pump = pump_controller_step(&loops.pump, &est, t1);
                    if loops.pump.mode != ControlMode::Held {
                        loops.pump_acc = (0, 0, 0.0);
                    }
                }
            }
        }
        me.polarization(cfg, own.tags.len(), t1);

        let phase_b = if cfg.controllers.phase { loops.phase.applied_phase() } else { me.sim.actuators.phase_b_rad };
        let pol_b = me.pol.applied_angle();
        let pump = loops.pump.attenuation_db;
        send_note(ch, &Note::BatchDone { batch, pump_attenuation_db: pump, phase_b_rad: phase_b, polarization_b_rad: pol_b })?;
        let pol_a = match ch.recv_message(timeout)? {
            Message::Telemetry { json } => match parse_note(&json)? {
                Note::Actuator { batch: bb, polarization_a_rad } if bb == batch => polarization_a_rad,
                other => return Err(Error::Protocol(format!("bob: unexpected note {other:?}"))),
            },
            other => return Err(Error::Protocol(format!("bob: expected actuator note, got {:?}", other.msg_type()))),
        };
        let act = &mut me.sim.actuators;
        act.pump_attenuation_db = pump;
        act.phase_b_rad = phase_b;
        act.polarization_b_rad = pol_b;
        act.polarization_a_rad = pol_a;

        let zz = matched.stats.zz.max(1) as f64;
        let dt = t1 - t0;
        me.report.telemetry.push(TelemetryRecord {
            wall_time_s: t1,
            qber_z: if blk_n > 0 { blk_k as f64 / blk_n as f64 } else { 0.0 }.min(0.5),
            qber_x: if x_n > 0 { x_err as f64 / x_n as f64 } else { 0.5 }.min(0.5),
            singles_a_hz: times_a.len() as f64 / dt,
            singles_b_hz: own.tags.len() as f64 / dt,
            coincidences_hz: (matched.stats.matched as f64).max(zz - 1.0) / dt,
            clock_residual_ps: residual,
            skr_bps: (me.report.secret_bits - secret_at_last_row) as f64 / dt,
            pump_attenuation_db: pump,
            phase_a_rad: 0.0,
            phase_b_rad: phase_b,
            polarization_a_rad: pol_a,
            polarization_b_rad: pol_b,
            pipeline_state: if sync.is_locked() { "running" } else { "resuming" }.into(),
            restarts: 0,
            secret_bits_total: me.report.secret_bits,
        });
        secret_at_last_row = me.report.secret_bits;
        me.report.batches += 1;
    }
    ch.send_message(&Message::Control { kind: control::SHUTDOWN, value: 0 })?;
    Ok(me.finish(ch))
}

/// One block: mutual sample disclosure, Cascade, verification and PA.
/// Returns the disclosed sample size and its errors.
#[allow(clippy::too_many_arguments)]
fn bob_block(
    cfg: &StationConfig,
    ch: &Channel,
    me: &mut Local,
    rng: &mut ChaCha8Rng,
    raw: &mut VecDeque<bool>,
    loops: &mut BobLoops,
    block: u64,
    t_s: f64,
) -> Result<(u64, u64)> {
    let blk: Vec<bool> = raw.drain(..cfg.block_bits).collect();
    let indices = select_sample(blk.len(), cfg.sift.sample_fraction, rng);
    let bits: Vec<bool> = indices.iter().map(|&i| blk[i as usize]).collect();
    ch.send_message(&Message::SampleDisclose { block, kind: 0, indices: indices.clone(), bits: bits.clone() })?;
    let theirs = match ch.recv_message(cfg.timeout())? {
        Message::SampleDisclose { block: b, kind: 0, bits, .. } if b == block => bits,
        other => return Err(Error::Protocol(format!("bob: expected sample reply, got {:?}", other.msg_type()))),
    };
    let errors = bits.iter().zip(&theirs).filter(|(a, b)| a != b).count() as u64;
    let n_s = indices.len() as u64;
    me.report.sample_bits += n_s;
    me.report.sample_errors += errors;
    me.report.blocks += 1;
    let mut in_sample = vec![false; blk.len()];
    for &i in &indices {
        in_sample[i as usize] = true;
    }
    let key: Vec<bool> = blk.iter().zip(&in_sample).filter(|(_, &s)| !s).map(|(&b, _)| b).collect();
    let q = if n_s > 0 { errors as f64 / n_s as f64 } else { 0.0 };
    let seed = rng.random::<u64>();
    let mut oracle = ChannelOracle::new(ch);
    oracle.timeout = cfg.timeout();
    let rec = reconcile(&key, q, &cfg.cascade, block, seed, &mut oracle)?;
    me.report.leaked_bits += rec.leaked_bits;
    if !rec.residual_verified {
        ch.send_message(&Message::Control { kind: control::DISCARD, value: block })?;
        me.report.blocks_discarded += 1;
        return Ok((n_s, errors));
    }
    let (x_n, x_k) = std::mem::take(&mut loops.x_since_pa);
    let e_x = if x_n > 0 { (x_k as f64 / x_n as f64).min(0.5) } else { 0.5 };
    let p = FiniteKeyParams {
        eps_sec: cfg.eps_sec,
        eps_cor: cfg.eps_cor,
        n_z: rec.bits.len() as u64,
        n_x: x_n,
        e_x,
        leak_ec: rec.leaked_bits as f64,
        f_ec: 0.0,
    };
    let budget = if x_n > 0 { secrecy_budget(&p)?.unwrap_or(f64::NEG_INFINITY) } else { f64::NEG_INFINITY };
    let out_len = if budget > 0.0 { budget.floor() as usize } else { 0 };
    if out_len == 0 {
        ch.send_message(&Message::Control { kind: control::DISCARD, value: block })?;
        me.report.blocks_discarded += 1;
        return Ok((n_s, errors));
    }
    let provenance = KeyProvenance {
        block_ids: vec![block],
        n_z: p.n_z,
        n_x: x_n,
        e_x,
        qber_z: q,
        leak_ec: rec.leaked_bits,
        verify_hash_bits: rec.hash_bits,
        sample_bits: n_s,
        eps_sec: cfg.eps_sec,
        eps_cor: cfg.eps_cor,
        budget_bits: budget,
        wall_time_s: t_s,
    };
    send_note(ch, &Note::Provenance { block, provenance: provenance.clone() })?;
    let pa_seed = rng.random::<u64>();
    ch.send_message(&Message::PaSeed { block, key_len: rec.bits.len() as u32, out_len: out_len as u32, seed: pa_seed })?;
    match ch.recv_message(cfg.timeout())? {
        Message::PaAck { block: b, out_len: o } if b == block && o as usize == out_len => {}
        other => return Err(Error::Protocol(format!("bob: expected PA ack, got {:?}", other.msg_type()))),
    }
    me.report.reconciled_bits += rec.bits.len() as u64;
    let secret = toeplitz_hash_seeded(&rec.bits, out_len, pa_seed)?;
    me.emit(block, secret, provenance)?;
    Ok((n_s, errors))
}

/// Runs both stations in one process, each on its own thread.
pub fn run_link(
    sc: &LinkScenario,
    cfg: &StationConfig,
    alice_ch: Channel,
    bob_ch: Channel,
    keystore: Option<&Path>,
) -> Result<LinkReport> {
    std::thread::scope(|s| {
        let a = s.spawn(|| run_alice(sc, cfg, &alice_ch, keystore));
        let b = s.spawn(|| run_bob(sc, cfg, &bob_ch, keystore));
        let bob = b.join().map_err(|_| Error::Protocol("bob thread panicked".into()))?;
        let alice = a.join().map_err(|_| Error::Protocol("alice thread panicked".into()))?;
        Ok(LinkReport { alice: alice?, bob: bob? })
    })
}

/// Runs both stations over an in-process loopback transport.
pub fn run_link_loopback(sc: &LinkScenario, cfg: &StationConfig, keystore: Option<&Path>) -> Result<LinkReport> {
    let (ta, tb) = crate::netlink::loopback_pair();
    let session = sc.seed;
    run_link(sc, cfg, Channel::new(session, Box::new(ta)), Channel::new(session, Box::new(tb)), keystore)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_link() -> (LinkScenario, StationConfig) {
        let mut sc = LinkScenario::default().with_channel_loss(30.0);
        sc.pair_rate_hz = 2e8;
        sc.detector.evaporation = false;
        let cfg = StationConfig { duration_s: 10.0, block_bits: 1024, ..Default::default() };
        (sc, cfg)
    }

    #[test]
    fn stations_agree_on_every_key() {
        let (sc, cfg) = small_link();
        let r = run_link_loopback(&sc, &cfg, None).unwrap();
        assert!(r.bob.blocks > 0, "{:?}", r.bob);
        assert!(r.keys_match());
        assert_eq!(r.alice.sample_errors, r.bob.sample_errors);
        assert!(r.bob.keys.iter().all(|k| k.ledger_ok));
        assert_eq!(r.bob.channel.parity_bits, r.bob.leaked_bits);
        assert!(r.bob.secret_bits > 0);
    }
}
