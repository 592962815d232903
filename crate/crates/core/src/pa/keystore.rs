use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::Station;
use crate::{Error, Result};

pub const KEYSTORE_MAGIC: &[u8; 8] = b"QKDKEYS\0";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Where a key came from and the numbers its length was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct KeyProvenance {
    pub block_ids: Vec<u64>,
    pub n_z: u64,
    pub n_x: u64,
    pub e_x: f64,
    pub qber_z: f64,
    pub leak_ec: u64,
    pub verify_hash_bits: u32,
    pub sample_bits: u64,
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Budget `n_z(1 − h2(e_x + ν)) − leak_ec − penalties` before flooring.
    pub budget_bits: f64,
    pub wall_time_s: f64,
}

impl KeyProvenance {
    /// SHA-256 of the JSON serialization.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("provenance serializes");
        Sha256::digest(&json).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub bits: Vec<bool>,
    pub epoch: u64,
    pub provenance: KeyProvenance,
}

impl SecretKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Length never exceeds the secrecy budget it was derived from.
    pub fn ledger_ok(&self) -> bool {
        self.bits.len() as f64 <= self.provenance.budget_bits.max(0.0)
    }
}

/// Append-only per-station key file: a 16-byte header, then records of
/// `u64 epoch, u32 bit length, key bytes, 32-byte provenance digest`.
pub struct KeyStore {
    file: File,
    path: PathBuf,
    pub station: Station,
    pub keys_written: u64,
    pub bits_written: u64,
}

impl KeyStore {
    /// Opens `path` for appending, writing a header if the file is new.
    pub fn open(path: impl AsRef<Path>, station: Station) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let exists = path.exists() && std::fs::metadata(&path)?.len() > 0;
        if exists {
            let (s, _) = read_keystore(&path)?;
            if s != station {
                return Err(Error::Argument(format!("{} belongs to {s:?}", path.display())));
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if !exists {
            let mut h = [0u8; HEADER_LEN];
            h[0..8].copy_from_slice(KEYSTORE_MAGIC);
            h[8..12].copy_from_slice(&VERSION.to_le_bytes());
            h[12] = station.code();
            file.write_all(&h)?;
        }
        Ok(Self { file, path, station, keys_written: 0, bits_written: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, key: &SecretKey) -> Result<()> {
        let mut rec = Vec::with_capacity(12 + key.len().div_ceil(8) + 32);
        rec.extend_from_slice(&key.epoch.to_le_bytes());
        rec.extend_from_slice(&(key.len() as u32).to_le_bytes());
        for chunk in key.bits.chunks(8) {
            rec.push(chunk.iter().enumerate().fold(0u8, |a, (i, &b)| a | ((b as u8) << i)));
        }
        rec.extend_from_slice(&key.provenance.digest());
        self.file.write_all(&rec)?;
        self.file.flush()?;
        self.keys_written += 1;
        self.bits_written += key.len() as u64;
        Ok(())
    }
}

/// Stored record: `(epoch, bits, provenance digest)`.
pub type StoredKey = (u64, Vec<bool>, [u8; 32]);

pub fn read_keystore(path: impl AsRef<Path>) -> Result<(Station, Vec<StoredKey>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    if &h[0..8] != KEYSTORE_MAGIC {
        return Err(Error::Protocol("not a key-store file".into()));
    }
    if u32::from_le_bytes(h[8..12].try_into().expect("4 bytes")) != VERSION {
        return Err(Error::Protocol("unsupported key-store version".into()));
    }
    let station = Station::from_code(h[12]).ok_or_else(|| Error::Protocol("bad station code".into()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let mut keys = Vec::new();
    let mut pos = 0;
    while pos < body.len() {
        let short = || Error::Protocol("truncated key record".into());
        let head = body.get(pos..pos + 12).ok_or_else(short)?;
        let epoch = u64::from_le_bytes(head[0..8].try_into().expect("8 bytes"));
        let len = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
        let nbytes = len.div_ceil(8);
        let bytes = body.get(pos + 12..pos + 12 + nbytes).ok_or_else(short)?;
        let digest: [u8; 32] = body
            .get(pos + 12 + nbytes..pos + 44 + nbytes)
            .ok_or_else(short)?
            .try_into()
            .expect("32 bytes");
        let bits = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        keys.push((epoch, bits, digest));
        pos += 44 + nbytes;
    }
    Ok((station, keys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alice.keys");
        let key = |epoch, n: usize| SecretKey {
            bits: (0..n).map(|i| i % 3 == 0).collect(),
            epoch,
            provenance: KeyProvenance { block_ids: vec![epoch], budget_bits: n as f64, ..Default::default() },
        };
        {
            let mut ks = KeyStore::open(&path, Station::Alice).unwrap();
            ks.append(&key(1, 13)).unwrap();
        }
        let mut ks = KeyStore::open(&path, Station::Alice).unwrap();
        ks.append(&key(2, 64)).unwrap();
        assert!(KeyStore::open(&path, Station::Bob).is_err());
        let (station, keys) = read_keystore(&path).unwrap();
        assert_eq!(station, Station::Alice);
        assert_eq!(keys.len(), 2);
        assert_eq!(keys[0].1, key(1, 13).bits);
        assert_eq!(keys[1].0, 2);
        assert_eq!(keys[1].2, key(2, 64).provenance.digest());
    }
}
