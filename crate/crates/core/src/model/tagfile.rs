//! Binary time-tag files: a 32-byte header followed by 16-byte little-endian
//! records (`u64 t_ps, u16 channel, u8 station, u8 flags, 4 reserved`).

use std::io::{Read, Write};

use super::tag::{Station, TimeTag};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QKDTAGS\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 16;

pub fn encode_record(tag: &TimeTag) -> [u8; RECORD_LEN] {
    let mut r = [0u8; RECORD_LEN];
    r[0..8].copy_from_slice(&tag.t.to_le_bytes());
    r[8..10].copy_from_slice(&tag.channel.to_le_bytes());
    r[10] = tag.station.code();
    r
}

pub fn decode_record(r: &[u8; RECORD_LEN]) -> Result<TimeTag> {
    let station = Station::from_code(r[10]).ok_or_else(|| Error::Protocol(format!("bad station code {}", r[10])))?;
    Ok(TimeTag {
        t: u64::from_le_bytes(r[0..8].try_into().expect("8 bytes")),
        channel: u16::from_le_bytes([r[8], r[9]]),
        station,
    })
}

pub fn write_header<W: Write>(w: &mut W) -> Result<()> {
    let mut h = [0u8; HEADER_LEN];
    h[0..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&VERSION.to_le_bytes());
    w.write_all(&h)?;
    Ok(())
}

/// Writes a complete file: header plus records.
pub fn write_tags<W: Write>(w: &mut W, tags: &[TimeTag]) -> Result<()> {
    write_header(w)?;
    append_tags(w, tags)
}

/// Appends records to a file whose header has already been written.
pub fn append_tags<W: Write>(w: &mut W, tags: &[TimeTag]) -> Result<()> {
    let mut buf = Vec::with_capacity(tags.len() * RECORD_LEN);
    for t in tags {
        buf.extend_from_slice(&encode_record(t));
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tags<R: Read>(r: &mut R) -> Result<Vec<TimeTag>> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    if &h[0..8] != MAGIC {
        return Err(Error::Protocol("not a time-tag file".into()));
    }
    let version = u32::from_le_bytes(h[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Protocol(format!("unsupported tag file version {version}")));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Protocol("truncated tag record".into()));
    }
    body.chunks_exact(RECORD_LEN)
        .map(|c| decode_record(c.try_into().expect("record length")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let tags = vec![
            TimeTag { t: 0, channel: 0, station: Station::Alice },
            TimeTag { t: u64::MAX, channel: 3, station: Station::Bob },
            TimeTag { t: 123_456_789, channel: 65535, station: Station::Alice },
        ];
        let mut buf = Vec::new();
        write_tags(&mut buf, &tags).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 3 * RECORD_LEN);
        assert_eq!(read_tags(&mut buf.as_slice()).unwrap(), tags);
        buf[0] = b'X';
        assert!(read_tags(&mut buf.as_slice()).is_err());
    }
}
