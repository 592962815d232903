use super::frame::MsgType;
use crate::model::Basis;
use crate::{Error, Result};

/// One parity query over a half-open range of permuted positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParityQuery {
    pub iteration: u8,
    pub start: u32,
    pub end: u32,
}

/// Control sub-messages carried in `CONTROL` frames.
pub mod control {
    pub const RESUME: u8 = 1;
    pub const SHUTDOWN: u8 = 2;
    pub const DISCARD: u8 = 3;
    pub const RELOCK: u8 = 4;
}

/// Typed payloads. Several variants share a frame type and are told apart by
/// a leading kind byte.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Alice's detection times and bases for one batch.
    BasisAnnounce { batch: u64, times_ps: Vec<i64>, bases: Vec<Basis> },
    /// Bob's reply: indices into Alice's batch kept after basis sifting, plus
    /// the indices of X-basis coincidences (both subsets of one list).
    SiftAnnounce { batch: u64, kept: Vec<u32> },
    /// Disclosed sample positions and Alice's bits at them. `kind` 0 is the Z
    /// error-estimation sample, 1 is the X-basis test outcomes.
    SampleDisclose { block: u64, kind: u8, indices: Vec<u32>, bits: Vec<bool> },
    ShuffleSeed { instance: u64, n_bits: u32, k1: u32, iterations: u8, seed: u64 },
    ParityReq { instance: u64, queries: Vec<ParityQuery> },
    ParityResp { instance: u64, bits: Vec<bool> },
    /// Verification exchange; a request has `hash == None`.
    Verify { instance: u64, seed: u64, hash: Option<u64> },
    PaSeed { block: u64, key_len: u32, out_len: u32, seed: u64 },
    PaAck { block: u64, out_len: u32 },
    Telemetry { json: String },
    Control { kind: u8, value: u64 },
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("payload list under 2^32"));
    }
    fn bits(&mut self, bits: &[bool]) {
        self.len(bits.len());
        for chunk in bits.chunks(8) {
            self.u8(chunk.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)));
        }
    }
    fn u32s(&mut self, v: &[u32]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.u32(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Protocol("payload truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, elem_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_bytes) > self.buf.len() - self.pos {
            return Err(Error::Protocol("list length exceeds payload".into()));
        }
        Ok(n)
    }
    fn bits(&mut self) -> Result<Vec<bool>> {
        let n = self.u32()? as usize;
        let bytes = self.take(n.div_ceil(8))?;
        Ok((0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
    fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len(4)?;
        (0..n).map(|_| self.u32()).collect()
    }
    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol("trailing payload bytes".into()));
        }
        Ok(())
    }
}

fn basis_runs(bases: &[Basis]) -> Vec<u32> {
    // Alternating run lengths starting with Z.
    let mut runs = Vec::new();
    let mut cur = Basis::Z;
    let mut n = 0u32;
    for &b in bases {
        if b == cur {
            n += 1;
        } else {
            runs.push(n);
            cur = b;
            n = 1;
        }
    }
    runs.push(n);
    runs
}

fn expand_runs(runs: &[u32], total: usize) -> Result<Vec<Basis>> {
    let mut out = Vec::with_capacity(total);
    for (i, &r) in runs.iter().enumerate() {
        let b = if i % 2 == 0 { Basis::Z } else { Basis::X };
        if out.len() + r as usize > total {
            return Err(Error::Protocol("basis runs exceed tag count".into()));
        }
        out.extend(std::iter::repeat_n(b, r as usize));
    }
    if out.len() != total {
        return Err(Error::Protocol("basis runs do not cover tags".into()));
    }
    Ok(out)
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::BasisAnnounce { .. } | Message::SiftAnnounce { .. } => MsgType::BasisAnnounce,
            Message::SampleDisclose { .. } => MsgType::SampleDisclose,
            Message::ShuffleSeed { .. } => MsgType::ShuffleSeed,
            Message::ParityReq { .. } => MsgType::ParityReq,
            Message::ParityResp { .. } => MsgType::ParityResp,
            Message::Verify { .. } => MsgType::Verify,
            Message::PaSeed { .. } => MsgType::PaSeed,
            Message::PaAck { .. } => MsgType::PaAck,
            Message::Telemetry { .. } => MsgType::Telemetry,
            Message::Control { .. } => MsgType::Control,
        }
    }

    /// Number of parity bits disclosed by this message.
    pub fn parity_bits(&self) -> u64 {
        match self {
            Message::ParityResp { bits, .. } => bits.len() as u64,
            _ => 0,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        match self {
            Message::BasisAnnounce { batch, times_ps, bases } => {
                w.u8(0);
                w.u64(*batch);
                w.len(times_ps.len());
                let mut prev = 0i64;
                for &t in times_ps {
                    w.i64(t - prev);
                    prev = t;
                }
                let runs = basis_runs(bases);
                w.u32s(&runs);
            }
            Message::SiftAnnounce { batch, kept } => {
                w.u8(1);
                w.u64(*batch);
                w.u32s(kept);
            }
            Message::SampleDisclose { block, kind, indices, bits } => {
                w.u64(*block);
                w.u8(*kind);
                w.u32s(indices);
                w.bits(bits);
            }
            Message::ShuffleSeed { instance, n_bits, k1, iterations, seed } => {
                w.u64(*instance);
                w.u32(*n_bits);
                w.u32(*k1);
                w.u8(*iterations);
                w.u64(*seed);
            }
            Message::ParityReq { instance, queries } => {
                w.u64(*instance);
                w.len(queries.len());
                for q in queries {
                    w.u8(q.iteration);
                    w.u32(q.start);
                    w.u32(q.end);
                }
            }
            Message::ParityResp { instance, bits } => {
                w.u64(*instance);
                w.bits(bits);
            }
            Message::Verify { instance, seed, hash } => {
                w.u64(*instance);
                w.u64(*seed);
                match hash {
                    Some(h) => {
                        w.u8(1);
                        w.u64(*h);
                    }
                    None => w.u8(0),
                }
            }
            Message::PaSeed { block, key_len, out_len, seed } => {
                w.u64(*block);
                w.u32(*key_len);
                w.u32(*out_len);
                w.u64(*seed);
            }
            Message::PaAck { block, out_len } => {
                w.u64(*block);
                w.u32(*out_len);
            }
            Message::Telemetry { json } => {
                w.len(json.len());
                w.0.extend_from_slice(json.as_bytes());
            }
            Message::Control { kind, value } => {
                w.u8(*kind);
                w.u64(*value);
            }
        }
        w.0
    }

    pub fn decode(t: MsgType, payload: &[u8]) -> Result<Message> {
        let mut r = Reader { buf: payload, pos: 0 };
        let msg = match t {
            MsgType::BasisAnnounce => match r.u8()? {
                0 => {
                    let batch = r.u64()?;
                    let n = r.len(8)?;
                    let mut times_ps = Vec::with_capacity(n);
                    let mut prev = 0i64;
                    for _ in 0..n {
                        prev += r.i64()?;
                        times_ps.push(prev);
                    }
                    let runs = r.u32s()?;
                    let bases = expand_runs(&runs, n)?;
                    Message::BasisAnnounce { batch, times_ps, bases }
                }
                1 => Message::SiftAnnounce { batch: r.u64()?, kept: r.u32s()? },
                k => return Err(Error::Protocol(format!("unknown announce kind {k}"))),
            },
            MsgType::SampleDisclose => {
                let block = r.u64()?;
                let kind = r.u8()?;
                let indices = r.u32s()?;
                let bits = r.bits()?;
                if bits.len() != indices.len() {
                    return Err(Error::Protocol("disclosed bits and indices differ in length".into()));
                }
                Message::SampleDisclose { block, kind, indices, bits }
            }
            MsgType::ShuffleSeed => Message::ShuffleSeed {
                instance: r.u64()?,
                n_bits: r.u32()?,
                k1: r.u32()?,
                iterations: r.u8()?,
                seed: r.u64()?,
            },
            MsgType::ParityReq => {
                let instance = r.u64()?;
                let n = r.len(9)?;
                let queries = (0..n)
                    .map(|_| Ok(ParityQuery { iteration: r.u8()?, start: r.u32()?, end: r.u32()? }))
                    .collect::<Result<Vec<_>>>()?;
                Message::ParityReq { instance, queries }
            }
            MsgType::ParityResp => Message::ParityResp { instance: r.u64()?, bits: r.bits()? },
            MsgType::Verify => {
                let instance = r.u64()?;
                let seed = r.u64()?;
                let hash = match r.u8()? {
                    0 => None,
                    1 => Some(r.u64()?),
                    k => return Err(Error::Protocol(format!("bad verify flag {k}"))),
                };
                Message::Verify { instance, seed, hash }
            }
            MsgType::PaSeed => Message::PaSeed { block: r.u64()?, key_len: r.u32()?, out_len: r.u32()?, seed: r.u64()? },
            MsgType::PaAck => Message::PaAck { block: r.u64()?, out_len: r.u32()? },
            MsgType::Telemetry => {
                let n = r.len(1)?;
                let json = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Protocol(e.to_string()))?;
                Message::Telemetry { json }
            }
            MsgType::Control => Message::Control { kind: r.u8()?, value: r.u64()? },
        };
        r.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Message> {
        vec![
            Message::BasisAnnounce {
                batch: 3,
                times_ps: vec![5, 900, 1_000_000, 1_000_001],
                bases: vec![Basis::X, Basis::X, Basis::Z, Basis::X],
            },
            Message::BasisAnnounce { batch: 0, times_ps: vec![], bases: vec![] },
            Message::SiftAnnounce { batch: 3, kept: vec![0, 2] },
            Message::SampleDisclose { block: 1, kind: 0, indices: vec![4, 9, 11], bits: vec![true, false, true] },
            Message::ShuffleSeed { instance: 9, n_bits: 10_000, k1: 17, iterations: 4, seed: 77 },
            Message::ParityReq { instance: 9, queries: vec![ParityQuery { iteration: 2, start: 0, end: 64 }] },
            Message::ParityResp { instance: 9, bits: vec![true; 13] },
            Message::Verify { instance: 9, seed: 5, hash: None },
            Message::Verify { instance: 9, seed: 5, hash: Some(u64::MAX) },
            Message::PaSeed { block: 2, key_len: 100, out_len: 40, seed: 1 },
            Message::PaAck { block: 2, out_len: 40 },
            Message::Telemetry { json: "{\"qber_z\":0.04}".into() },
            Message::Control { kind: control::RESUME, value: 12 },
        ]
    }

    #[test]
    fn every_message_round_trips() {
        for m in samples() {
            let bytes = m.encode();
            assert_eq!(Message::decode(m.msg_type(), &bytes).unwrap(), m);
        }
    }

    #[test]
    fn truncated_payloads_are_rejected() {
        for m in samples() {
            let bytes = m.encode();
            if !bytes.is_empty() {
                assert!(Message::decode(m.msg_type(), &bytes[..bytes.len() - 1]).is_err());
            }
        }
    }
}
