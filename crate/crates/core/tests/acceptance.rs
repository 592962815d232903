//! Acceptance run: one PASS/FAIL line per criterion with its measured values,
//! tolerances and wall-clock budget.
//!
//! Criteria listed in `KNOWN_UNMET` are evaluated and reported like every
//! other criterion, but their failure does not fail the run. Every other
//! criterion must pass.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use qkdlink::cascade::{cascade_reconcile, reconcile, serve_cascade, CascadeConfig, CascadeResponder, ChannelOracle};
use qkdlink::harness::{
    ceiling_checks, ceiling_points, prepare, run_prepared, run_single_link, settled_attenuation, slot_points, sweep_checks,
    sweep_points, sync_runs, Check, Experiment, ExperimentConfig, Prepared, RunOptions, TransportMode,
};
use qkdlink::linksim::{link_rates, rng_stream, sample_histogram, PeakShape, RateInputs};
use qkdlink::netlink::{control, loopback_pair, Channel, Message, MsgType, Recorded};
use qkdlink::pa::{finite_size_deviation, h2, secret_length, toeplitz_hash, FiniteKeyParams};
use qkdlink::pipeline::{EngineConfig, FaultSchedule, RateEngine};
use qkdlink::sync::{find_peak, PeakConfig, SyncConfig};
use rand::Rng;

/// Criteria whose failure is reported but tolerated.
const KNOWN_UNMET: [u8; 2] = [4, 7];

// 1: clock synchronisation
const SYNC_NOMINAL_PS: f64 = 12.0;
const SYNC_PERTURBED_PS: f64 = 40.0;
// 2: peak precision
const PEAK_COINCIDENCES: f64 = 500.0;
const PEAK_TRIALS: usize = 200;
const PEAK_RMS_PS: f64 = 4.0;
/// Pump settings below the settled attenuation, in dB. The pump loop fixes the
/// accidental-to-true ratio at any loss, so the floor is varied by over-pumping.
const PEAK_OVERDRIVE_DB: [f64; 2] = [0.0, 2.0];
const PEAK_OFFSET_RANGE_PS: f64 = 50.0;
// 3: QBERz loop
const PUMP_OVERDRIVE_DB: f64 = 2.0;
const QBER_TARGET: f64 = 0.043;
const QBER_BAND: f64 = 0.002;
/// Variance bound on per-update QBERz estimates, in fraction² units.
const QBER_MAX_VARIANCE: f64 = 1e-5;
const HOLD_S: f64 = 3600.0;
/// Longest allowed approach from the over-pumped start.
const CONVERGE_WITHIN_S: f64 = 1800.0;
/// Trailing average used to decide convergence and holding.
const QBER_AVERAGE_S: f64 = 300.0;
// 5: Cascade
const MC_BLOCK_BITS: usize = 10_000;
const MC_QBER: f64 = 0.043;
const MC_TRIALS: u64 = 200;
const MC_MAX_EFFICIENCY: f64 = 1.25;
const EXHAUSTIVE_K1: [usize; 3] = [2, 4, 8];
// 8: channel sweep
const KEY_SLOTS: usize = 36;
const DEAD_SLOTS: [u8; 4] = [1, 2, 25, 26];
/// Spectral features the extinguished slots must sit next to.
const EDGES_NM: [f64; 3] = [1541.0, 1561.0, 1581.0];
/// Two 100 GHz grid steps.
const ADJACENT_NM: f64 = 1.6;
// 9: property suites
const TOEPLITZ_CASES: u64 = 300;
const H2_TOLERANCE: f64 = 1e-12;

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn fmt_checks(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{}={:.4}{}", c.name, c.value, if c.pass { "" } else { "(x)" }))
        .collect::<Vec<_>>()
        .join(" ")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64
}

fn sync_residual(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let (nominal, perturbed) = sync_runs(cfg, p).unwrap();
    let true_max = |r: &qkdlink::pipeline::RunReport| r.sync_updates.iter().map(|u| u.true_residual_ps.abs()).fold(0.0, f64::max);
    let (nm, nt) = (nominal.max_abs_sync_residual_ps(), true_max(&nominal));
    let (pm, pt) = (perturbed.max_abs_sync_residual_ps(), true_max(&perturbed));
    let lock_losses = nominal.acquisitions.saturating_sub(1);
    let pass = !nominal.sync_updates.is_empty()
        && lock_losses == 0
        && nm.max(nt) < SYNC_NOMINAL_PS
        && pm.max(pt) < SYNC_PERTURBED_PS;
    let detail = format!(
        "{} updates over {:.0} s, nominal max {nm:.2} ps measured / {nt:.2} ps true (< {SYNC_NOMINAL_PS}), \
         perturbed max {pm:.2} / {pt:.2} ps (< {SYNC_PERTURBED_PS}), lock losses {lock_losses}",
        nominal.sync_updates.len(),
        nominal.duration_s
    );
    (pass, detail)
}

fn peak_precision(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let sync = SyncConfig::default();
    let peak_cfg = PeakConfig::default();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let sc = &p.scenario;
    for (i, &over) in PEAK_OVERDRIVE_DB.iter().enumerate() {
        let att = settled_attenuation(sc, &cfg.engine.pump) - over;
        let rates = link_rates(&RateInputs::from_scenario(sc, att, 1.0, 1.0, 0.0));
        let dur = PEAK_COINCIDENCES / rates.central_hz;
        let shape = PeakShape { sigma_ps: std::f64::consts::SQRT_2 * sc.detector.jitter_ps, side_offset_ps: sc.z_delay_ps as f64 };
        let mut rng = rng_stream(7, i as u64);
        let mut sq = 0.0;
        let mut invalid = 0;
        for _ in 0..PEAK_TRIALS {
            let offset = rng.random_range(-PEAK_OFFSET_RANGE_PS..PEAK_OFFSET_RANGE_PS);
            let h = sample_histogram(&rates, shape, &sync.histogram, 0.0, dur, |_| offset, &mut rng);
            let est = find_peak(&h, &peak_cfg);
            if !est.valid {
                invalid += 1;
            }
            sq += (est.position_ps - offset).powi(2);
        }
        let rms = (sq / PEAK_TRIALS as f64).sqrt();
        let floor = rates.singles_a_hz * rates.singles_b_hz * sync.histogram.bin_width_ps as f64 * 1e-12 * dur;
        worst = worst.max(if invalid > 0 { f64::INFINITY } else { rms });
        parts.push(format!("pump +{over} dB: rms {rms:.2} ps, floor {floor:.3}/bin, {invalid} invalid"));
    }
    (worst <= PEAK_RMS_PS, format!("{} (≤ {PEAK_RMS_PS} ps)", parts.join("; ")))
}

fn qber_loop(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let mut sc = p.scenario.clone();
    sc.detector.evaporation = false;
    let settled = settled_attenuation(&sc, &cfg.engine.pump);
    sc.pump_attenuation_db = settled - PUMP_OVERDRIVE_DB;
    let engine = EngineConfig { duration_s: CONVERGE_WITHIN_S + HOLD_S, faults: FaultSchedule::default(), ..cfg.engine.clone() };
    let r = RateEngine::new(sc, engine, p.profile.clone()).unwrap().run().unwrap();
    let u = &r.pump_updates;
    let trailing = |t: f64| -> Vec<f64> { u.iter().filter(|x| x.t_s > t - QBER_AVERAGE_S && x.t_s <= t).map(|x| x.qber_z).collect() };
    let in_band = |q: f64| (q - QBER_TARGET).abs() <= QBER_BAND;
    let converged = u.iter().find(|x| x.t_s >= QBER_AVERAGE_S && in_band(mean(&trailing(x.t_s)))).map(|x| x.t_s);
    let Some(t0) = converged.filter(|&t| t <= CONVERGE_WITHIN_S) else {
        return (false, format!("no convergence within {CONVERGE_WITHIN_S} s"));
    };
    let hold: Vec<f64> = u.iter().filter(|x| x.t_s >= t0 && x.t_s <= t0 + HOLD_S).map(|x| x.qber_z).collect();
    let worst_avg = u
        .iter()
        .filter(|x| x.t_s >= t0 + QBER_AVERAGE_S && x.t_s <= t0 + HOLD_S)
        .map(|x| (mean(&trailing(x.t_s)) - QBER_TARGET).abs())
        .fold(0.0, f64::max);
    let (m, var) = (mean(&hold), variance(&hold));
    let pass = in_band(m) && worst_avg <= QBER_BAND && var <= QBER_MAX_VARIANCE && t0 + HOLD_S <= r.duration_s;
    let detail = format!(
        "start {:.2} dB below settled {settled:.2} dB, converged at {t0:.0} s, 1 h mean {:.3} % (target {:.1} ± {:.1} %), \
         worst {QBER_AVERAGE_S:.0} s average off by {:.3} %, variance {var:.2e} (≤ {QBER_MAX_VARIANCE:e}) over {} updates",
        PUMP_OVERDRIVE_DB,
        100.0 * m,
        100.0 * QBER_TARGET,
        100.0 * QBER_BAND,
        100.0 * worst_avg,
        hold.len()
    );
    (pass, detail)
}

fn skr_curve(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let points = sweep_points(cfg, p).unwrap();
    let checks = sweep_checks(&points);
    let extinction = points
        .iter()
        .enumerate()
        .find(|(i, _)| points[*i..].iter().all(|x| x.skr_bps == 0.0))
        .map_or(f64::NAN, |(_, x)| x.loss_db);
    let cal = p.calibration.as_ref().map_or(String::new(), |c| format!("pair rate {:.3e} Hz, ", c.pair_rate_hz));
    (checks.iter().all(|c| c.pass), format!("{cal}{}, no key from {extinction} dB", fmt_checks(&checks)))
}

fn cascade_exactness() -> (bool, String) {
    // exhaustive suite over a tapped channel
    let mut blocks = Vec::new();
    for &k1 in &EXHAUSTIVE_K1 {
        for alice in 0u32..256 {
            let a: Vec<bool> = (0..8).map(|i| alice >> i & 1 == 1).collect();
            for e in (0u32..256).filter(|e| e.count_ones() <= 2) {
                let b: Vec<bool> = (0..8).map(|i| a[i] ^ (e >> i & 1 == 1)).collect();
                blocks.push((k1, a.clone(), b));
            }
        }
    }
    let (x, y) = loopback_pair();
    let (alice_ch, bob_ch) = (Channel::new(3, Box::new(x)), Channel::new(3, Box::new(y)));
    let mut responder = CascadeResponder::new();
    for (i, (_, a, _)) in blocks.iter().enumerate() {
        responder.register(i as u64, a.clone());
    }
    let server = std::thread::spawn(move || serve_cascade(&alice_ch, &mut responder, Duration::from_secs(30)));
    bob_ch.start_recording();
    let (mut verified, mut wrong, mut ledger, mut tapped) = (0usize, 0usize, 0u64, 0u64);
    for (i, (k1, a, b)) in blocks.iter().enumerate() {
        let cfg = CascadeConfig { k1: Some(*k1), ..Default::default() };
        let r = reconcile(b, 0.1, &cfg, i as u64, i as u64, &mut ChannelOracle::new(&bob_ch)).unwrap();
        ledger += r.leaked_bits;
        if r.residual_verified {
            verified += 1;
            wrong += (&r.bits != a) as usize;
        }
        tapped += bob_ch
            .take_recording()
            .iter()
            .filter_map(|f| match f {
                Recorded::Received(f) if f.msg_type == MsgType::ParityResp => Some(Message::decode(f.msg_type, &f.payload).unwrap().parity_bits()),
                _ => None,
            })
            .sum::<u64>();
        bob_ch.start_recording();
    }
    bob_ch.send_message(&Message::Control { kind: control::SHUTDOWN, value: 0 }).unwrap();
    server.join().unwrap().unwrap();

    // Monte-Carlo leakage at the operating QBER
    let cfg = CascadeConfig::default();
    let mut rng = rng_stream(11, 0);
    let (mut leak, mut mc_wrong, mut mc_unverified) = (0u64, 0usize, 0usize);
    for t in 0..MC_TRIALS {
        let a: Vec<bool> = (0..MC_BLOCK_BITS).map(|_| rng.random()).collect();
        let b: Vec<bool> = a.iter().map(|&x| x ^ rng.random_bool(MC_QBER)).collect();
        let r = cascade_reconcile(&a, &b, MC_QBER, &cfg, t, t).unwrap();
        leak += r.leaked_bits;
        if r.residual_verified {
            mc_wrong += (r.bits != a) as usize;
        } else {
            mc_unverified += 1;
        }
    }
    let per_bit = leak as f64 / (MC_TRIALS as usize * MC_BLOCK_BITS) as f64;
    let bound = MC_MAX_EFFICIENCY * h2(MC_QBER);
    let pass = wrong == 0 && ledger == tapped && mc_wrong == 0 && per_bit <= bound;
    let detail = format!(
        "{} 8-bit blocks, {verified} verified, {wrong} wrong; ledger {ledger} = tap {tapped} parity bits; \
         {MC_TRIALS}×{MC_BLOCK_BITS} bit: leak/n {per_bit:.4} ≤ {bound:.4} (f = {:.3}), {mc_wrong} wrong, {mc_unverified} unverified",
        blocks.len(),
        per_bit / h2(MC_QBER)
    );
    (pass, detail)
}

fn cascade_ceiling(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let points = ceiling_points(cfg, p).unwrap();
    let checks = ceiling_checks(&points);
    let rows: Vec<String> = points
        .iter()
        .map(|x| format!("{} dB {:.0}/{:.0}/{:.0}", x.loss_db, x.capped_skr_bps, x.uncapped_skr_bps, x.optimum_skr_bps))
        .collect();
    (checks.iter().all(|c| c.pass), format!("capped/uncapped/optimum bps: {}; {}", rows.join(", "), fmt_checks(&checks)))
}

fn endurance(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let s = run_prepared(Experiment::Endurance, cfg, p, &RunOptions::default()).unwrap();
    let m = |k: &str| s.metrics.get(k).copied().unwrap_or(f64::NAN);
    let detail = format!(
        "{} h: {}, duty cycle {:.4}, downtime {:.0} s",
        cfg.endurance.duration_h,
        fmt_checks(&s.checks),
        m("duty_cycle"),
        s.headline.downtime_s
    );
    (s.passed, detail)
}

fn channel_sweep(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let points = slot_points(cfg, p).unwrap();
    let live = points.iter().filter(|x| x.skr_bps > 0.0).count();
    let dead: Vec<_> = points.iter().filter(|x| x.skr_bps <= 0.0).collect();
    let dead_ids: Vec<u8> = dead.iter().map(|x| x.slot).collect();
    let edge_gap = |nm: f64| EDGES_NM.iter().map(|e| (nm - e).abs()).fold(f64::INFINITY, f64::min);
    let adjacent = dead.iter().all(|x| edge_gap(x.alice_nm).min(edge_gap(x.bob_nm)) <= ADJACENT_NM);
    let where_: Vec<String> = dead.iter().map(|x| format!("{} ({:.2}/{:.2} nm)", x.slot, x.alice_nm, x.bob_nm)).collect();
    let pass = points.len() == 40 && live == KEY_SLOTS && dead_ids == DEAD_SLOTS && adjacent;
    (pass, format!("{live} of {} slots produce key; dead {}", points.len(), where_.join(", ")))
}

fn naive_toeplitz(key: &[bool], out_len: usize, seed: &[bool]) -> Vec<bool> {
    let n = key.len();
    (0..out_len).map(|i| (0..n).fold(false, |acc, j| acc ^ (seed[n - 1 + i - j] & key[j]))).collect()
}

fn property_suites(cfg: &ExperimentConfig, p: &Prepared) -> (bool, String) {
    let mut failed = Vec::new();
    let mut note = |ok: bool, name: &str| {
        if !ok {
            failed.push(name.to_string());
        }
    };

    // determinism at tag level and rate level
    let single = |mode: TransportMode| {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), transport: mode, ..Default::default() };
        let s = run_prepared(Experiment::SingleLink, cfg, p, &opts).unwrap();
        (s.passed, files(dir.path()))
    };
    let (ok1, first) = single(TransportMode::Loopback);
    let (ok2, second) = single(TransportMode::Loopback);
    note(ok1 && ok2 && first == second, "tag-level rerun");
    let rate_run = || {
        let mut sc = p.scenario.clone();
        sc.detector.evaporation = true;
        let engine = EngineConfig {
            duration_s: 1800.0,
            faults: FaultSchedule { software_crash_h: vec![0.2], ..Default::default() },
            ..cfg.engine.clone()
        };
        format!("{:?}", RateEngine::new(sc, engine, p.profile.clone()).unwrap().run().unwrap())
    };
    note(rate_run() == rate_run(), "rate-level rerun");

    // loopback against socket
    let (ok3, socket) = single(TransportMode::Socket);
    note(ok3 && socket == first, "loopback vs socket");

    // Toeplitz linearity and matrix equivalence
    let mut rng = rng_stream(13, 0);
    let mut toeplitz_ok = true;
    for _ in 0..TOEPLITZ_CASES {
        let n = rng.random_range(1..300usize);
        let m = rng.random_range(1..=n);
        let seed: Vec<bool> = (0..n + m - 1).map(|_| rng.random()).collect();
        let x: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let xy: Vec<bool> = x.iter().zip(&y).map(|(a, b)| a ^ b).collect();
        let (hx, hy, hxy) = (toeplitz_hash(&x, m, &seed).unwrap(), toeplitz_hash(&y, m, &seed).unwrap(), toeplitz_hash(&xy, m, &seed).unwrap());
        let sum: Vec<bool> = hx.iter().zip(&hy).map(|(a, b)| a ^ b).collect();
        toeplitz_ok &= hxy == sum && hx == naive_toeplitz(&x, m, &seed);
    }
    note(toeplitz_ok, "toeplitz");

    // binary entropy against the high-precision table
    let table = std::fs::read_to_string(format!("{}/tests/data/h2_oracle.csv", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let h2_err = table
        .lines()
        .skip(1)
        .map(|l| {
            let (p, v) = l.split_once(',').unwrap();
            (h2(f64::from_bits(u64::from_str_radix(p, 16).unwrap())) - v.parse::<f64>().unwrap()).abs()
        })
        .fold(0.0, f64::max);
    note(h2_err <= H2_TOLERANCE, "h2");

    // secret length is monotone in each argument
    let len = |n: u64, e_x: f64, leak: f64| secret_length(&FiniteKeyParams { n_z: n, n_x: n, e_x, leak_ec: leak, ..Default::default() }).unwrap();
    let mut mono = true;
    let ns: Vec<u64> = (0..40).map(|i| (1e3 * 1.3f64.powi(i)) as u64).collect();
    mono &= ns.windows(2).all(|w| len(w[0], 0.04, 0.0) <= len(w[1], 0.04, 0.0));
    let es: Vec<f64> = (0..60).map(|i| i as f64 * 0.002).collect();
    mono &= es.windows(2).all(|w| len(1_000_000, w[0], 2e5) >= len(1_000_000, w[1], 2e5));
    let leaks: Vec<f64> = (0..60).map(|i| i as f64 * 1e4).collect();
    mono &= leaks.windows(2).all(|w| len(1_000_000, 0.04, w[0]) >= len(1_000_000, 0.04, w[1]));
    note(mono, "secret_length monotone");

    // every emitted key fits its secrecy budget
    let r = run_single_link(cfg, p, &TransportMode::Loopback, None).unwrap();
    let keys: Vec<_> = r.alice.keys.iter().chain(&r.bob.keys).collect();
    let ledger_ok = !keys.is_empty()
        && keys.iter().all(|k| {
            let pv = &k.provenance;
            let nu = finite_size_deviation(pv.n_z as f64, pv.n_x as f64, pv.eps_sec / 2.0);
            let bound = pv.n_z as f64 * (1.0 - h2(pv.e_x + nu));
            k.ledger_ok && pv.budget_bits >= 0.0 && k.len as f64 <= pv.budget_bits && k.len as f64 + pv.leak_ec as f64 <= bound
        });
    note(ledger_ok, "ledger");

    let detail = format!(
        "reruns, loopback/socket ({} files), {TOEPLITZ_CASES} Toeplitz cases, h2 max error {h2_err:.1e}, \
         monotone sweeps, {} emitted keys: {}",
        first.len(),
        keys.len(),
        if failed.is_empty() { "all hold".to_string() } else { format!("failed {}", failed.join(", ")) }
    );
    (failed.is_empty(), detail)
}

fn main() {
    // `cargo test -- <filter>` passes arguments; run only when unfiltered or asked for by name
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let cfg = ExperimentConfig::default();
    let t = Instant::now();
    let p = prepare(&cfg, 1).unwrap();
    let setup = t.elapsed();
    println!("setup: calibration and Cascade profile in {:.1} s", setup.as_secs_f64());

    type Run<'a> = Box<dyn Fn() -> (bool, String) + 'a>;
    let criteria: Vec<(u8, &'static str, u64, Run)> = vec![
        (1, "sync residual", 120, Box::new(|| sync_residual(&cfg, &p))),
        (2, "peak precision", 60, Box::new(|| peak_precision(&cfg, &p))),
        (3, "QBERz loop", 120, Box::new(|| qber_loop(&cfg, &p))),
        (4, "SKR curve", 600, Box::new(|| skr_curve(&cfg, &p))),
        (5, "Cascade exactness", 180, Box::new(cascade_exactness)),
        (6, "Cascade ceiling", 180, Box::new(|| cascade_ceiling(&cfg, &p))),
        (7, "endurance", 900, Box::new(|| endurance(&cfg, &p))),
        (8, "channel sweep", 600, Box::new(|| channel_sweep(&cfg, &p))),
        (9, "property suites", 300, Box::new(|| property_suites(&cfg, &p))),
    ];
    let mut outcomes = Vec::new();
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let (ok, detail) = run();
        // the calibration belongs to the SKR-curve criterion
        let elapsed = t.elapsed() + if id == 4 { setup } else { Duration::ZERO };
        let o = Outcome { id, name, pass: ok && elapsed <= secs(budget), detail, elapsed, budget: secs(budget) };
        println!(
            "criterion {}: {} {} [{:.1} s ≤ {} s] {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.elapsed.as_secs_f64(),
            o.budget.as_secs(),
            o.detail
        );
        outcomes.push(o);
    }
    let unexpected: Vec<u8> = outcomes.iter().filter(|o| !o.pass && !KNOWN_UNMET.contains(&o.id)).map(|o| o.id).collect();
    let tolerated: Vec<u8> = outcomes.iter().filter(|o| !o.pass && KNOWN_UNMET.contains(&o.id)).map(|o| o.id).collect();
    println!(
        "acceptance: {} of {} criteria pass; known unmet failing: {tolerated:?}",
        outcomes.iter().filter(|o| o.pass).count(),
        outcomes.len()
    );
    if !unexpected.is_empty() {
        eprintln!("acceptance: criteria {unexpected:?} failed");
        std::process::exit(1);
    }
}
