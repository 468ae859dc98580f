//! On-disk formats: bitmap dumps, hex bit strings, enrollment records and
//! the server database sidecar.

use std::fmt::Write as _;
use std::io::{Read, Write};

use epuf_core::keygen::{Challenge, SecretKey, CHALLENGE_LEN, WINDOW_BITS};
use epuf_core::protocol::{CrpRecord, DeviceHandle, Id, ServerDb, ServerDbRow, ID_LEN};
use epuf_core::{BitString, Bitmap};

use crate::error::{Error, Result};

pub const BITMAP_MAGIC: &[u8; 8] = b"EPUFBMAP";

pub fn write_bitmap(out: &mut impl Write, bitmap: &Bitmap) -> Result<()> {
    let mut header = [0u8; 16];
    header[..8].copy_from_slice(BITMAP_MAGIC);
    header[8..12].copy_from_slice(&(bitmap.rows() as u32).to_be_bytes());
    header[12..].copy_from_slice(&(bitmap.cols() as u32).to_be_bytes());
    out.write_all(&header)
        .and_then(|_| out.write_all(bitmap.data()))
        .map_err(Error::io("writing bitmap"))
}

pub fn read_bitmap(input: &mut impl Read) -> Result<Bitmap> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(Error::io("reading bitmap header"))?;
    if &header[..8] != BITMAP_MAGIC {
        return Err(Error::Format("bad bitmap magic".into()));
    }
    let rows = u32::from_be_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_be_bytes(header[12..].try_into().unwrap()) as usize;
    let mut data = vec![0u8; rows * cols];
    input.read_exact(&mut data).map_err(Error::io("reading bitmap body"))?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra).map_err(Error::io("reading bitmap body"))? != 0 {
        return Err(Error::Format("trailing bytes after bitmap".into()));
    }
    Ok(Bitmap::new(rows, cols, data)?)
}

/// Hex of the length-prefixed encoding.
pub fn bits_to_hex(bits: &BitString) -> String {
    hex::encode(bits.to_prefixed_bytes())
}

pub fn bits_from_hex(text: &str) -> Result<BitString> {
    let bytes = hex::decode(text.trim()).map_err(|e| Error::Format(format!("bad hex: {e}")))?;
    let (bits, used) = BitString::from_prefixed_bytes(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format("trailing bytes after bit string".into()));
    }
    Ok(bits)
}

fn hex_array<const N: usize>(text: &str, what: &str) -> Result<[u8; N]> {
    let bytes = hex::decode(text).map_err(|e| Error::Format(format!("bad {what} hex: {e}")))?;
    bytes
        .try_into()
        .map_err(|_| Error::Format(format!("{what} must be {N} bytes")))
}

/// CRPs enrolled for one device of the population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrolledDevice {
    pub index: usize,
    pub crps: Vec<CrpRecord>,
}

/// Enrollment records grouped under `@device <index>` headers. Each record
/// line is `challenge hs key frac_bits`, with the helper stream in its
/// length-prefixed encoding.
pub fn write_enrollment(devices: &[EnrolledDevice]) -> String {
    let mut s = String::from("# challenge helper_stream key frac_bits\n");
    for dev in devices {
        let _ = writeln!(s, "@device {}", dev.index);
        for crp in &dev.crps {
            let hs = BitString::from_packed(crp.hs.to_vec(), WINDOW_BITS).expect("256-bit field");
            let frac = crp.challenge[16];
            let _ = writeln!(
                s,
                "{} {} {} {}",
                hex::encode(crp.challenge),
                bits_to_hex(&hs),
                hex::encode(crp.key.as_bytes()),
                frac
            );
        }
    }
    s
}

pub fn parse_enrollment(text: &str) -> Result<Vec<EnrolledDevice>> {
    let mut devices: Vec<EnrolledDevice> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |msg: String| Error::Format(format!("enrollment line {}: {msg}", n + 1));
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("@device") {
            let index = rest.trim().parse().map_err(|_| at("bad device index".into()))?;
            devices.push(EnrolledDevice { index, crps: vec![] });
            continue;
        }
        let dev = devices.last_mut().ok_or_else(|| at("record before @device".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [ch, hs, key, frac] = fields[..] else {
            return Err(at("expected 4 fields".into()));
        };
        let challenge: [u8; CHALLENGE_LEN] = hex_array(ch, "challenge").map_err(|e| at(e.to_string()))?;
        let decoded = Challenge::decode(&challenge).map_err(|e| at(e.to_string()))?;
        let frac: u8 = frac.parse().map_err(|_| at("bad frac_bits".into()))?;
        if frac != decoded.frac_bits {
            return Err(at("frac_bits disagrees with challenge".into()));
        }
        let hs = bits_from_hex(hs).map_err(|e| at(e.to_string()))?;
        if hs.len() != WINDOW_BITS {
            return Err(at(format!("helper stream must be {WINDOW_BITS} bits")));
        }
        dev.crps.push(CrpRecord {
            challenge,
            key: SecretKey(hex_array(key, "key").map_err(|e| at(e.to_string()))?),
            hs: hs.as_packed().try_into().unwrap(),
        });
    }
    Ok(devices)
}

/// One sidecar line: `device id cursor`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SidecarEntry {
    pub index: usize,
    pub id: Id,
    pub cursor: usize,
}

pub fn write_sidecar(entries: &[SidecarEntry]) -> String {
    let mut s = String::from("# device id cursor\n");
    for e in entries {
        let _ = writeln!(s, "{} {} {}", e.index, hex::encode(e.id), e.cursor);
    }
    s
}

pub fn parse_sidecar(text: &str) -> Result<Vec<SidecarEntry>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |msg: &str| Error::Format(format!("sidecar line {}: {msg}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [index, id, cursor] = fields[..] else {
            return Err(at("expected 3 fields"));
        };
        out.push(SidecarEntry {
            index: index.parse().map_err(|_| at("bad device index"))?,
            id: hex_array::<ID_LEN>(id, "id").map_err(|_| at("bad id"))?,
            cursor: cursor.parse().map_err(|_| at("bad cursor"))?,
        });
    }
    Ok(out)
}

/// Rebuilds a server database. Rows are restored in enrollment order, so
/// device `k` of the file gets handle `k`.
pub fn load_server_db(devices: &[EnrolledDevice], sidecar: &[SidecarEntry]) -> Result<ServerDb> {
    let mut db = ServerDb::new();
    for dev in devices {
        let entry = sidecar
            .iter()
            .find(|e| e.index == dev.index)
            .ok_or_else(|| Error::Format(format!("no sidecar entry for device {}", dev.index)))?;
        if entry.cursor > dev.crps.len() {
            return Err(Error::Format(format!(
                "cursor beyond CRP list for device {}",
                dev.index
            )));
        }
        db.restore(ServerDbRow {
            handle: DeviceHandle(0),
            current_id: entry.id,
            crps: dev.crps.clone(),
            cursor: entry.cursor,
        });
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitmap_roundtrip_and_header() {
        let bm = Bitmap::new(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let mut buf = Vec::new();
        write_bitmap(&mut buf, &bm).unwrap();
        assert_eq!(&buf[..16], b"EPUFBMAP\0\0\0\x02\0\0\0\x03");
        assert_eq!(read_bitmap(&mut buf.as_slice()).unwrap(), bm);
        buf[0] = b'X';
        assert!(read_bitmap(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bits_hex() {
        let b = BitString::parse("101").unwrap();
        assert_eq!(bits_to_hex(&b), "00000003a0");
        assert_eq!(bits_from_hex("00000003a0").unwrap(), b);
        assert!(bits_from_hex("00000003a1").is_err());
        assert!(bits_from_hex("00000003a000").is_err());
    }

    #[test]
    fn enrollment_and_sidecar_roundtrip() {
        let mut challenge = [0u8; 32];
        challenge[16] = 5;
        let crp = CrpRecord {
            challenge,
            key: SecretKey([7; 32]),
            hs: [0xf0; 32],
        };
        let devs = vec![
            EnrolledDevice {
                index: 0,
                crps: vec![crp, crp],
            },
            EnrolledDevice { index: 3, crps: vec![] },
        ];
        let text = write_enrollment(&devs);
        assert_eq!(parse_enrollment(&text).unwrap(), devs);

        let side = vec![
            SidecarEntry {
                index: 0,
                id: [1; 16],
                cursor: 1,
            },
            SidecarEntry {
                index: 3,
                id: [2; 16],
                cursor: 0,
            },
        ];
        assert_eq!(parse_sidecar(&write_sidecar(&side)).unwrap(), side);

        let db = load_server_db(&devs, &side).unwrap();
        assert_eq!(db.rows().len(), 2);
        assert_eq!(db.lookup(&[1; 16]), Some(DeviceHandle(0)));
        assert_eq!(db.rows()[0].cursor, 1);
    }

    #[test]
    fn enrollment_rejects_inconsistent_frac_bits() {
        let mut challenge = [0u8; 32];
        challenge[16] = 5;
        let devs = vec![EnrolledDevice {
            index: 0,
            crps: vec![CrpRecord {
                challenge,
                key: SecretKey([0; 32]),
                hs: [0; 32],
            }],
        }];
        let text = write_enrollment(&devs);
        let bad = text.trim_end().strip_suffix('5').unwrap().to_string() + "6\n";
        assert!(parse_enrollment(&bad).is_err());
        assert!(parse_enrollment("abcd 1 2 3\n").is_err());
    }
}
