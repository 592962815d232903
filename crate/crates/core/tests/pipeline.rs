//! End-to-end checks across modules: classical-channel accounting, Cascade
//! over real transports, wire-schema audit, reproducibility and transport
//! equivalence.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use qkdlink::cascade::{cascade_reconcile, reconcile, serve_cascade, CascadeConfig, CascadeResponder, ChannelOracle, ReconciledBlock};
use qkdlink::harness::{prepare, run_experiment, run_prepared, run_single_link, Experiment, ExperimentConfig, Prepared, RunOptions, TransportMode};
use qkdlink::linksim::rng_stream;
use qkdlink::netlink::{control, loopback_pair, Channel, FaultyTransport, LatencyTransport, LoopbackHub, Message, MsgType, Recorded, Transport, VirtualClock};
use qkdlink::pa::{finite_size_deviation, h2, read_keystore};
use qkdlink::pipeline::{run_alice, run_bob};
use rand::Rng;

const TIMEOUT: Duration = Duration::from_secs(30);

fn noisy_blocks(n: usize, q: f64, seed: u64) -> (Vec<bool>, Vec<bool>) {
    let mut rng = rng_stream(seed, 9);
    let a: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let b = a.iter().map(|&x| x ^ rng.random_bool(q)).collect();
    (a, b)
}

/// Runs Bob's Cascade for `blocks` over `bob_ch` against a responder thread on `alice_ch`.
fn cascade_over(alice_ch: Channel, bob_ch: &Channel, blocks: &[(Vec<bool>, Vec<bool>)], q: f64) -> Vec<ReconciledBlock> {
    let mut responder = CascadeResponder::new();
    for (i, (a, _)) in blocks.iter().enumerate() {
        responder.register(i as u64, a.clone());
    }
    let server = std::thread::spawn(move || {
        serve_cascade(&alice_ch, &mut responder, TIMEOUT).unwrap();
        alice_ch
    });
    let cfg = CascadeConfig::default();
    let out = blocks
        .iter()
        .enumerate()
        .map(|(i, (_, b))| {
            let mut oracle = ChannelOracle::new(bob_ch);
            reconcile(b, q, &cfg, i as u64, 1000 + i as u64, &mut oracle).unwrap()
        })
        .collect();
    bob_ch.send_message(&Message::Control { kind: control::SHUTDOWN, value: 0 }).unwrap();
    server.join().unwrap();
    out
}

#[test]
fn channel_tap_sees_exactly_the_ledgered_parity_bits() {
    let (x, y) = loopback_pair();
    let (alice, bob) = (Channel::new(5, Box::new(x)), Channel::new(5, Box::new(y)));
    bob.start_recording();
    let blocks: Vec<_> = (0..6).map(|i| noisy_blocks(8192, 0.043, i)).collect();
    let results = cascade_over(alice, &bob, &blocks, 0.043);

    let tapped: u64 = bob
        .take_recording()
        .iter()
        .filter_map(|r| match r {
            Recorded::Received(f) if f.msg_type == MsgType::ParityResp => Some(Message::decode(f.msg_type, &f.payload).unwrap().parity_bits()),
            _ => None,
        })
        .sum();
    let ledger: u64 = results.iter().map(|r| r.leaked_bits).sum();
    assert_eq!(tapped, ledger);
    assert_eq!(bob.stats().parity_bits, ledger);
    for ((a, _), r) in blocks.iter().zip(&results) {
        assert!(r.residual_verified);
        assert_eq!(&r.bits, a);
    }
    // frame bytes counted by the channel equal the transport's byte counters
    let s = bob.stats();
    assert_eq!(bob.transport_bytes(), (s.bytes_up, s.bytes_down));
}

#[test]
fn channel_results_equal_in_process_results() {
    let (x, y) = loopback_pair();
    let bob = Channel::new(6, Box::new(y));
    let blocks: Vec<_> = (0..3).map(|i| noisy_blocks(4096, 0.03, 40 + i)).collect();
    let over_wire = cascade_over(Channel::new(6, Box::new(x)), &bob, &blocks, 0.03);
    for (i, ((a, b), w)) in blocks.iter().zip(&over_wire).enumerate() {
        let local = cascade_reconcile(a, b, 0.03, &CascadeConfig::default(), i as u64, 1000 + i as u64).unwrap();
        assert_eq!(&local, w);
    }
}

#[test]
fn latency_cost_follows_the_round_count() {
    let latency = Duration::from_millis(50);
    let (x, y) = loopback_pair();
    let clock = VirtualClock::new();
    let (x, y) = LatencyTransport::pair(x, y, latency, clock.clone());
    let bob = Channel::new(7, Box::new(y));
    let blocks = vec![noisy_blocks(10_000, 0.043, 77)];
    let r = &cascade_over(Channel::new(7, Box::new(x)), &bob, &blocks, 0.043)[0];
    // every parity round and the verification are one round trip; the
    // shutdown notice adds one final one-way hop
    let expected = latency * (2 * (r.rounds + 1) + 1);
    assert_eq!(clock.now(), expected, "rounds {}", r.rounds);
}

#[test]
fn disconnect_mid_cascade_resumes_to_the_fault_free_result() {
    let blocks = vec![noisy_blocks(8192, 0.043, 3), noisy_blocks(8192, 0.043, 4)];
    let clean = {
        let (x, y) = loopback_pair();
        let bob = Channel::new(8, Box::new(y));
        cascade_over(Channel::new(8, Box::new(x)), &bob, &blocks, 0.043)
    };
    for fail_after in [1u64, 5, 17, 40] {
        let hub = LoopbackHub::new();
        let (ha, hb) = (hub.clone(), hub.clone());
        let alice = Channel::new(8, Box::new(hub.connect(0)))
            .with_connector(Box::new(move || Ok(Box::new(ha.connect(0)) as Box<dyn Transport>)));
        let bob = Channel::new(8, Box::new(FaultyTransport::new(hub.connect(1), fail_after)))
            .with_connector(Box::new(move || Ok(Box::new(hb.connect(1)) as Box<dyn Transport>)));
        let faulted = cascade_over(alice, &bob, &blocks, 0.043);
        assert_eq!(faulted, clean, "disconnect after {fail_after} sends");
        assert!(bob.stats().resumes >= 1);
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.profile.trials = 1;
    cfg.sync_stress.duration_s = 300.0;
    cfg.sync_stress.perturbations.truncate(1);
    cfg.sync_stress.perturbations[0].start_s = 120.0;
    cfg
}

fn prepared() -> &'static (ExperimentConfig, Arc<Prepared>) {
    static P: OnceLock<(ExperimentConfig, Arc<Prepared>)> = OnceLock::new();
    P.get_or_init(|| {
        let cfg = small_config();
        let p = prepare(&cfg, 1).unwrap();
        (cfg, Arc::new(p))
    })
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

#[test]
fn wire_schema_never_carries_key_bits_outside_sample_and_parity() {
    let (cfg, p) = prepared();
    let sc = qkdlink::harness::single_link_scenario(cfg, p);
    let (x, y) = loopback_pair();
    let (a, b) = (Channel::new(sc.seed, Box::new(x)), Channel::new(sc.seed, Box::new(y)));
    a.start_recording();
    let (ra, rb) = std::thread::scope(|s| {
        let ta = s.spawn(|| run_alice(&sc, &cfg.station, &a, None).unwrap());
        let rb = run_bob(&sc, &cfg.station, &b, None).unwrap();
        (ta.join().unwrap(), rb)
    });
    assert!(rb.blocks > 0);

    let mut parity = 0u64;
    let mut z_sample = 0u64;
    for r in a.take_recording() {
        let f = match r {
            Recorded::Sent(f) | Recorded::Received(f) => f,
        };
        let m = Message::decode(f.msg_type, &f.payload).unwrap();
        match &m {
            Message::BasisAnnounce { times_ps, bases, .. } => assert_eq!(times_ps.len(), bases.len()),
            Message::SampleDisclose { kind, indices, bits, .. } => {
                assert_eq!(indices.len(), bits.len());
                if *kind == 0 {
                    z_sample += bits.len() as u64;
                }
            }
            Message::ParityResp { bits, .. } => parity += bits.len() as u64,
            Message::SiftAnnounce { .. }
            | Message::ShuffleSeed { .. }
            | Message::ParityReq { .. }
            | Message::Verify { .. }
            | Message::PaSeed { .. }
            | Message::PaAck { .. }
            | Message::Control { .. } => {}
            Message::Telemetry { json } => {
                let v: serde_json::Value = serde_json::from_str(json).unwrap();
                assert!(v.as_object().unwrap().values().all(|x| !x.is_array()), "telemetry carries a list: {json}");
            }
        }
    }
    assert_eq!(parity, rb.leaked_bits);
    assert_eq!(parity, ra.leaked_bits);
    // each station reveals its own bit at every sampled position
    assert_eq!(ra.sample_bits, rb.sample_bits);
    assert_eq!(z_sample, 2 * rb.sample_bits);
}

#[test]
fn every_emitted_key_fits_its_secrecy_budget() {
    let (cfg, p) = prepared();
    let dir = tempfile::tempdir().unwrap();
    let r = run_single_link(cfg, p, &TransportMode::Loopback, Some(dir.path())).unwrap();
    assert!(r.keys_match() && !r.bob.keys.is_empty());
    for (name, report) in [("alice.keys", &r.alice), ("bob.keys", &r.bob)] {
        let (_, stored) = read_keystore(dir.path().join(name)).unwrap();
        assert_eq!(stored.len(), report.keys.len());
        for ((epoch, bits, digest), k) in stored.iter().zip(&report.keys) {
            let pv = &k.provenance;
            assert_eq!((*epoch, bits.len(), *digest), (k.epoch, k.len, pv.digest()));
            let nu = finite_size_deviation(pv.n_z as f64, pv.n_x as f64, pv.eps_sec / 2.0);
            let bound = pv.n_z as f64 * (1.0 - h2(pv.e_x + nu));
            assert!(k.ledger_ok && pv.budget_bits >= 0.0);
            assert!(k.len as f64 <= pv.budget_bits);
            assert!(k.len as f64 + pv.leak_ec as f64 <= bound, "{pv:?}");
        }
    }
}

#[test]
fn reruns_write_byte_identical_outputs() {
    let (cfg, p) = prepared();
    for exp in [Experiment::SingleLink, Experiment::SyncStress] {
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), ..Default::default() };
                run_prepared(exp, cfg, p, &opts).unwrap();
                files(dir.path())
            })
            .collect();
        assert!(runs[0].keys().any(|f| f.ends_with(".csv")));
        assert_eq!(runs[0], runs[1], "{exp}");
    }
}

#[test]
fn loopback_and_socket_runs_agree() {
    let (cfg, p) = prepared();
    let run = |mode: TransportMode| {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out_dir: Some(dir.path().to_path_buf()), transport: mode, ..Default::default() };
        let s = run_prepared(Experiment::SingleLink, cfg, p, &opts).unwrap();
        assert!(s.passed, "{:?}", s.checks);
        files(dir.path())
    };
    assert_eq!(run(TransportMode::Loopback), run(TransportMode::Socket));
}

#[test]
fn separate_processes_produce_the_same_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, small_config().to_toml_string()).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let bin = env!("CARGO_BIN_EXE_qkdlink");
    let spawn = |flag: &str, out: &str| {
        std::process::Command::new(bin)
            .args(["run", "single_link", "--config"])
            .arg(&config)
            .args(["--out", dir.path().join(out).to_str().unwrap(), flag, &addr])
            .env("QKDLINK_LOG", "warn")
            .spawn()
            .unwrap()
    };
    let mut alice = spawn("--listen", "alice");
    let mut bob = spawn("--connect", "bob");
    assert!(bob.wait().unwrap().success());
    assert!(alice.wait().unwrap().success());

    let loopback = dir.path().join("loopback");
    let opts = RunOptions { out_dir: Some(loopback.clone()), ..Default::default() };
    assert!(run_experiment(Experiment::SingleLink, &small_config(), &opts).unwrap().passed);
    let read = |p: std::path::PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(dir.path().join("alice/alice.keys")), read(loopback.join("alice.keys")));
    assert_eq!(read(dir.path().join("bob/bob.keys")), read(loopback.join("bob.keys")));
}
