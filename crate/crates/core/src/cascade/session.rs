use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bisect::split;
use super::permutation::Permutations;
use crate::netlink::{control, Channel, Message, ParityQuery};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub iterations: u32,
    /// Initial block length is `ceil(k1_factor / qber)`, clamped to `[k1_min, k1_max]`.
    pub k1_factor: f64,
    pub k1_min: usize,
    pub k1_max: usize,
    /// Fixed initial block length, bypassing the rule and its clamp.
    pub k1: Option<usize>,
    pub hash_bits: u32,
    /// Safety stop for a misbehaving peer.
    pub max_rounds: u32,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            k1_factor: 0.73,
            k1_min: 8,
            k1_max: 1 << 14,
            k1: None,
            hash_bits: 64,
            max_rounds: 10_000,
        }
    }
}

impl CascadeConfig {
    pub fn k1_for(&self, qber: f64) -> usize {
        if let Some(k) = self.k1 {
            return k.max(1);
        }
        if !(qber > 0.0) {
            return self.k1_max;
        }
        ((self.k1_factor / qber).ceil() as usize).clamp(self.k1_min, self.k1_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.hash_bits == 0 || self.hash_bits > 64 || self.k1_min == 0 || self.k1_min > self.k1_max {
            return Err(Error::config("cascade", "iterations ≥ 1, 1 ≤ hash_bits ≤ 64, 1 ≤ k1_min ≤ k1_max"));
        }
        Ok(())
    }
}

/// Bob's reconciled copy of a block with its disclosure ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconciledBlock {
    pub instance: u64,
    pub bits: Vec<bool>,
    /// Parity bits Alice disclosed.
    pub leaked_bits: u64,
    /// Disclosure split by the iteration being processed when it happened.
    pub leaked_per_iteration: Vec<u64>,
    /// Hash bits exchanged for the final check (not part of `leaked_bits`).
    pub hash_bits: u32,
    pub residual_verified: bool,
    pub rounds: u32,
    pub rounds_per_iteration: Vec<u32>,
    pub corrections: u32,
    pub k1: usize,
}

/// Truncated SHA-256 of a bit string under a shared seed.
pub fn verify_hash(bits: &[bool], seed: u64, hash_bits: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((bits.len() as u64).to_le_bytes());
    let packed: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |a, (i, &b)| a | ((b as u8) << i)))
        .collect();
    h.update(&packed);
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    if hash_bits >= 64 {
        v
    } else {
        v & ((1u64 << hash_bits) - 1)
    }
}

/// Alice's side of one instance: her bits and the agreed permutations.
#[derive(Debug, Clone)]
pub struct AliceParities {
    bits: Vec<bool>,
    perms: Permutations,
}

impl AliceParities {
    pub fn new(bits: Vec<bool>, seed: u64, iterations: u32) -> Self {
        let perms = Permutations::new(bits.len(), seed, iterations);
        Self { bits, perms }
    }

    pub fn answer(&self, queries: &[ParityQuery]) -> Result<Vec<bool>> {
        queries
            .iter()
            .map(|q| {
                if q.iteration as usize >= self.perms.fwd.len() || q.start >= q.end || q.end as usize > self.bits.len() {
                    return Err(Error::Protocol(format!("invalid parity query {q:?}")));
                }
                Ok(self.perms.parity(&self.bits, q.iteration as usize, q.start, q.end))
            })
            .collect()
    }

    pub fn hash(&self, seed: u64, hash_bits: u32) -> u64 {
        verify_hash(&self.bits, seed, hash_bits)
    }
}

/// Bob's view of Alice.
pub trait ParityOracle {
    /// Agrees the shuffle seed and geometry of a new instance.
    fn begin(&mut self, instance: u64, n_bits: usize, k1: usize, iterations: u32, seed: u64) -> Result<()>;
    /// One round trip: Alice's parities for a batch of ranges.
    fn parities(&mut self, instance: u64, queries: &[ParityQuery]) -> Result<Vec<bool>>;
    /// Alice's verification hash of her block.
    fn verify(&mut self, instance: u64, seed: u64, hash_bits: u32) -> Result<u64>;
}

/// In-process oracle over Alice's block.
pub struct LocalOracle<'a> {
    alice: &'a [bool],
    state: Option<AliceParities>,
}

impl<'a> LocalOracle<'a> {
    pub fn new(alice: &'a [bool]) -> Self {
        Self { alice, state: None }
    }

    fn state(&self) -> Result<&AliceParities> {
        self.state.as_ref().ok_or_else(|| Error::Protocol("instance not started".into()))
    }
}

impl ParityOracle for LocalOracle<'_> {
    fn begin(&mut self, _instance: u64, n_bits: usize, _k1: usize, iterations: u32, seed: u64) -> Result<()> {
        if n_bits != self.alice.len() {
            return Err(Error::Argument("blocks differ in length".into()));
        }
        self.state = Some(AliceParities::new(self.alice.to_vec(), seed, iterations));
        Ok(())
    }

    fn parities(&mut self, _instance: u64, queries: &[ParityQuery]) -> Result<Vec<bool>> {
        self.state()?.answer(queries)
    }

    fn verify(&mut self, _instance: u64, seed: u64, hash_bits: u32) -> Result<u64> {
        Ok(self.state()?.hash(seed, hash_bits))
    }
}

/// Oracle that talks to a remote [`CascadeResponder`] over a channel.
pub struct ChannelOracle<'a> {
    channel: &'a Channel,
    pub timeout: Duration,
    hash_bits: u32,
}

impl<'a> ChannelOracle<'a> {
    pub fn new(channel: &'a Channel) -> Self {
        Self { channel, timeout: Duration::from_secs(30), hash_bits: 64 }
    }

    fn expect(&self, instance: u64) -> Result<Message> {
        let m = self.channel.recv_message(self.timeout)?;
        match &m {
            Message::ParityResp { instance: i, .. } | Message::Verify { instance: i, .. } if *i == instance => Ok(m),
            other => Err(Error::Protocol(format!("unexpected reply {other:?}"))),
        }
    }
}

impl ParityOracle for ChannelOracle<'_> {
    fn begin(&mut self, instance: u64, n_bits: usize, k1: usize, iterations: u32, seed: u64) -> Result<()> {
        self.channel.send_message(&Message::ShuffleSeed {
            instance,
            n_bits: n_bits as u32,
            k1: k1 as u32,
            iterations: iterations as u8,
            seed,
        })?;
        Ok(())
    }

    fn parities(&mut self, instance: u64, queries: &[ParityQuery]) -> Result<Vec<bool>> {
        self.channel.send_message(&Message::ParityReq { instance, queries: queries.to_vec() })?;
        match self.expect(instance)? {
            Message::ParityResp { bits, .. } if bits.len() == queries.len() => Ok(bits),
            other => Err(Error::Protocol(format!("parity reply of wrong shape: {other:?}"))),
        }
    }

    fn verify(&mut self, instance: u64, seed: u64, hash_bits: u32) -> Result<u64> {
        self.hash_bits = hash_bits;
        self.channel.send_message(&Message::Verify { instance, seed, hash: None })?;
        match self.expect(instance)? {
            Message::Verify { hash: Some(h), .. } => Ok(h),
            other => Err(Error::Protocol(format!("verify reply of wrong shape: {other:?}"))),
        }
    }
}

/// Alice's message handler for any number of concurrent instances.
#[derive(Debug, Default)]
pub struct CascadeResponder {
    blocks: HashMap<u64, Vec<bool>>,
    active: HashMap<u64, AliceParities>,
    pub hash_bits: u32,
}

impl CascadeResponder {
    pub fn new() -> Self {
        Self { hash_bits: 64, ..Default::default() }
    }

    /// Makes Alice's copy of a block available under an instance id.
    pub fn register(&mut self, instance: u64, bits: Vec<bool>) {
        self.blocks.insert(instance, bits);
    }

    /// Forgets an instance, returning Alice's bits.
    pub fn finish(&mut self, instance: u64) -> Option<Vec<bool>> {
        self.active.remove(&instance);
        self.blocks.remove(&instance)
    }

    /// Handles one Cascade message; returns the reply, or `Ok(None)` for
    /// messages that need none. Non-Cascade messages are a protocol error.
    pub fn handle(&mut self, msg: &Message) -> Result<Option<Message>> {
        match msg {
            Message::ShuffleSeed { instance, n_bits, iterations, seed, .. } => {
                let bits = self
                    .blocks
                    .get(instance)
                    .ok_or_else(|| Error::Protocol(format!("unknown instance {instance}")))?;
                if bits.len() != *n_bits as usize {
                    return Err(Error::Protocol(format!("instance {instance}: length mismatch")));
                }
                self.active.insert(*instance, AliceParities::new(bits.clone(), *seed, *iterations as u32));
                Ok(None)
            }
            Message::ParityReq { instance, queries } => {
                let st = self.active.get(instance).ok_or_else(|| Error::Protocol(format!("instance {instance} not started")))?;
                Ok(Some(Message::ParityResp { instance: *instance, bits: st.answer(queries)? }))
            }
            Message::Verify { instance, seed, hash: None } => {
                let st = self.active.get(instance).ok_or_else(|| Error::Protocol(format!("instance {instance} not started")))?;
                Ok(Some(Message::Verify { instance: *instance, seed: *seed, hash: Some(st.hash(*seed, self.hash_bits)) }))
            }
            other => Err(Error::Protocol(format!("not a cascade request: {other:?}"))),
        }
    }
}

/// Runs Alice's responder until Bob sends a `SHUTDOWN` control message.
pub fn serve_cascade(channel: &Channel, responder: &mut CascadeResponder, timeout: Duration) -> Result<()> {
    loop {
        match channel.recv_message(timeout)? {
            Message::Control { kind: control::SHUTDOWN, .. } => return Ok(()),
            m => {
                if let Some(reply) = responder.handle(&m)? {
                    channel.send_message(&reply)?;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bisection {
    iteration: usize,
    block: usize,
    lo: u32,
    hi: u32,
}

/// Keeps the half whose parities disagree.
fn narrow(x: &mut Bisection, alice_half: bool, perms: &Permutations, bits: &[bool]) {
    let mid = split(x.lo, x.hi);
    if alice_half != perms.parity(bits, x.iteration, x.lo, mid) {
        x.hi = mid;
    } else {
        x.lo = mid;
    }
}

/// Bob's side of one Cascade run against any oracle.
pub fn reconcile(
    bob: &[bool],
    qber_estimate: f64,
    cfg: &CascadeConfig,
    instance: u64,
    seed: u64,
    oracle: &mut dyn ParityOracle,
) -> Result<ReconciledBlock> {
    cfg.validate()?;
    let n = bob.len();
    let iters = cfg.iterations as usize;
    let k1 = cfg.k1_for(qber_estimate);
    oracle.begin(instance, n, k1, cfg.iterations, seed)?;
    let perms = Permutations::new(n, seed, cfg.iterations);
    let mut bits = bob.to_vec();
    let size: Vec<usize> = (0..iters).map(|i| k1.saturating_mul(1 << i).min(n).max(1)).collect();
    let nblocks: Vec<usize> = size.iter().map(|&s| n.div_ceil(s)).collect();
    let range = |it: usize, b: usize| ((b * size[it]) as u32, ((b + 1) * size[it]).min(n) as u32);

    let mut alice_par: Vec<Vec<bool>> = vec![Vec::new(); iters];
    let mut bob_par: Vec<Vec<bool>> = vec![Vec::new(); iters];
    let mut busy: Vec<Vec<bool>> = nblocks.iter().map(|&m| vec![false; m]).collect();
    let mut leaked = vec![0u64; iters];
    let mut rounds = 0u32;
    let mut round_log = vec![0u32; iters];
    let mut corrections = 0u32;
    let mut active: Vec<Bisection> = Vec::new();
    let mut known: HashMap<(usize, u32, u32), bool> = HashMap::new();

    let run_iters = if n == 0 { 0 } else { iters };
    for it in 0..run_iters {
        let top: Vec<ParityQuery> = (0..nblocks[it])
            .map(|b| {
                let (start, end) = range(it, b);
                ParityQuery { iteration: it as u8, start, end }
            })
            .collect();
        alice_par[it] = oracle.parities(instance, &top)?;
        if alice_par[it].len() != top.len() {
            return Err(Error::Protocol("short parity reply".into()));
        }
        for (q, &p) in top.iter().zip(&alice_par[it]) {
            known.insert((it, q.start, q.end), p);
        }
        rounds += 1;
        round_log[it] += 1;
        leaked[it] += top.len() as u64;
        bob_par[it] = top.iter().map(|q| perms.parity(&bits, it, q.start, q.end)).collect();
        for b in 0..nblocks[it] {
            if alice_par[it][b] != bob_par[it][b] {
                let (lo, hi) = range(it, b);
                busy[it][b] = true;
                active.push(Bisection { iteration: it, block: b, lo, hi });
            }
        }

        while !active.is_empty() {
            if rounds >= cfg.max_rounds {
                return Err(Error::Protocol(format!("instance {instance}: exceeded {} rounds", cfg.max_rounds)));
            }
            // Parities Alice already disclosed are reused rather than asked again.
            for x in active.iter_mut() {
                while x.hi - x.lo > 1 {
                    let mid = split(x.lo, x.hi);
                    let Some(&alice_half) = known.get(&(x.iteration, x.lo, mid)) else { break };
                    narrow(x, alice_half, &perms, &bits);
                }
            }
            let queries: Vec<ParityQuery> = active
                .iter()
                .filter(|x| x.hi - x.lo > 1)
                .map(|x| ParityQuery { iteration: x.iteration as u8, start: x.lo, end: split(x.lo, x.hi) })
                .collect();
            if !queries.is_empty() {
                rounds += 1;
                round_log[it] += 1;
                leaked[it] += queries.len() as u64;
                let mut answers = oracle.parities(instance, &queries)?.into_iter();
                for x in active.iter_mut().filter(|x| x.hi - x.lo > 1) {
                    let alice_half = answers.next().ok_or_else(|| Error::Protocol("short parity reply".into()))?;
                    known.insert((x.iteration, x.lo, split(x.lo, x.hi)), alice_half);
                    narrow(x, alice_half, &perms, &bits);
                }
            }
            let found: Vec<u32> = active
                .iter()
                .filter(|x| x.hi - x.lo == 1)
                .map(|x| perms.fwd[x.iteration][x.lo as usize])
                .collect();
            let mut flipped: Vec<u32> = Vec::with_capacity(found.len());
            for idx in found {
                if !flipped.contains(&idx) {
                    flipped.push(idx);
                }
            }
            for &idx in &flipped {
                bits[idx as usize] ^= true;
                corrections += 1;
                for j in 0..=it {
                    let b = perms.inv[j][idx as usize] as usize / size[j];
                    bob_par[j][b] ^= true;
                }
            }
            // Drop finished bisections and those whose range a flip just changed.
            active.retain(|x| {
                let keep = x.hi - x.lo > 1
                    && !flipped.iter().any(|&idx| {
                        let p = perms.inv[x.iteration][idx as usize];
                        p >= x.lo && p < x.hi
                    });
                if !keep {
                    busy[x.iteration][x.block] = false;
                }
                keep
            });
            for &idx in &flipped {
                for j in 0..=it {
                    let b = perms.inv[j][idx as usize] as usize / size[j];
                    if !busy[j][b] && alice_par[j][b] != bob_par[j][b] {
                        let (lo, hi) = range(j, b);
                        busy[j][b] = true;
                        active.push(Bisection { iteration: j, block: b, lo, hi });
                    }
                }
            }
        }
    }

    let hash_seed = seed ^ 0x7665_7269_6679;
    let theirs = oracle.verify(instance, hash_seed, cfg.hash_bits)?;
    let residual_verified = theirs == verify_hash(&bits, hash_seed, cfg.hash_bits);
    Ok(ReconciledBlock {
        instance,
        bits,
        leaked_bits: leaked.iter().sum(),
        leaked_per_iteration: leaked,
        hash_bits: cfg.hash_bits,
        residual_verified,
        rounds,
        rounds_per_iteration: round_log,
        corrections,
        k1,
    })
}

/// Reconciles Bob's block against Alice's in process.
pub fn cascade_reconcile(
    alice: &[bool],
    bob: &[bool],
    qber_estimate: f64,
    cfg: &CascadeConfig,
    instance: u64,
    seed: u64,
) -> Result<ReconciledBlock> {
    if alice.len() != bob.len() {
        return Err(Error::Argument("blocks differ in length".into()));
    }
    reconcile(bob, qber_estimate, cfg, instance, seed, &mut LocalOracle::new(alice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linksim::rng_stream;
    use rand::Rng;

    fn fixed(k1: usize) -> CascadeConfig {
        CascadeConfig { k1: Some(k1), ..Default::default() }
    }

    #[test]
    fn k1_rule_and_clamp() {
        let c = CascadeConfig::default();
        assert_eq!(c.k1_for(0.043), 17);
        assert_eq!(c.k1_for(0.5), 8);
        assert_eq!(c.k1_for(1e-9), 1 << 14);
        assert_eq!(c.k1_for(0.0), 1 << 14);
    }

    #[test]
    fn identical_blocks_need_no_corrections() {
        let mut rng = rng_stream(1, 0);
        let a: Vec<bool> = (0..1024).map(|_| rng.random()).collect();
        let r = cascade_reconcile(&a, &a, 0.01, &CascadeConfig::default(), 0, 5).unwrap();
        assert_eq!(r.corrections, 0);
        assert!(r.residual_verified);
        // k1 = 73: 15, 8, 4 and 2 top-level blocks.
        assert_eq!(r.leaked_per_iteration, vec![15, 8, 4, 2]);
        assert_eq!(r.rounds, 4);
    }

    #[test]
    fn single_error_in_8_bits_with_k1_4() {
        for pos in 0..8 {
            let a = vec![false, true, true, false, true, false, false, true];
            let mut b = a.clone();
            b[pos] ^= true;
            let r = cascade_reconcile(&a, &b, 0.1, &fixed(4), 0, 3).unwrap();
            assert_eq!(r.bits, a);
            assert!(r.residual_verified);
            assert_eq!(r.corrections, 1);
            assert_eq!(r.leaked_per_iteration, vec![4, 1, 1, 1]);
        }
    }

    #[test]
    fn exhaustive_8_bit_weight_two() {
        for k1 in [2usize, 4] {
            for alice in 0u32..256 {
                let a: Vec<bool> = (0..8).map(|i| alice >> i & 1 == 1).collect();
                for e in 0u32..256 {
                    if e.count_ones() > 2 {
                        continue;
                    }
                    let b: Vec<bool> = (0..8).map(|i| a[i] ^ (e >> i & 1 == 1)).collect();
                    let r = cascade_reconcile(&a, &b, 0.1, &fixed(k1), e as u64, alice as u64).unwrap();
                    if r.residual_verified {
                        assert_eq!(r.bits, a, "k1={k1} alice={alice:08b} e={e:08b}");
                    }
                }
            }
        }
    }

    #[test]
    fn rounds_respect_interactivity_bound() {
        let mut rng = rng_stream(4, 0);
        let cfg = CascadeConfig::default();
        for t in 0..20 {
            let a: Vec<bool> = (0..10_000).map(|_| rng.random()).collect();
            let b: Vec<bool> = a.iter().map(|&x| x ^ rng.random_bool(0.043)).collect();
            let r = cascade_reconcile(&a, &b, 0.043, &cfg, t, t).unwrap();
            assert!(r.residual_verified);
            assert_eq!(r.bits, a);
            // Deepest possible bisection in a 10 kbit block.
            let depth = 10_000usize.next_power_of_two().trailing_zeros();
            assert!(r.rounds <= cfg.iterations * (1 + depth), "rounds {} depth {depth}", r.rounds);
        }
    }
}
