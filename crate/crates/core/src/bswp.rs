//! BSWP v1: a small self-describing binary container for one sweep.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BSWP"
//! 4       2     version (u16 LE) = 1
//! 6       2     frame count T (u16 LE)
//! 8       2     height H (u16 LE)
//! 10      2     width W (u16 LE)
//! 12      1     dtype (0 = u8 grayscale)
//! 13      4     mm_per_pixel (f32 LE)
//! 17      1     tag code (0..5 = C1, C2, C3, L1, M, R1)
//! 18      2     patient_id byte length L (u16 LE)
//! 20      L     patient_id (UTF-8)
//! 20+L    T*H*W pixel payload, frame-major then row-major
//! ```
//!
//! A decoded sweep has `canonical_len` set to its frame count.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sweep::{Frame, Sweep, SweepTag};

pub const MAGIC: [u8; 4] = *b"BSWP";
pub const VERSION: u16 = 1;
pub const DTYPE_U8: u8 = 0;
const FIXED_HEADER_LEN: usize = 20;

pub fn encode(sweep: &Sweep) -> Result<Vec<u8>> {
    let to_u16 = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u16 range")))
    };
    let t = to_u16(sweep.len(), "frame count")?;
    let h = to_u16(sweep.height(), "height")?;
    let w = to_u16(sweep.width(), "width")?;
    let pid = sweep.patient_id.as_bytes();
    let pid_len = to_u16(pid.len(), "patient_id length")?;

    let payload = sweep.len() * sweep.height() * sweep.width();
    let mut buf = Vec::with_capacity(FIXED_HEADER_LEN + pid.len() + payload);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    buf.extend_from_slice(&w.to_le_bytes());
    buf.push(DTYPE_U8);
    buf.extend_from_slice(&sweep.mm_per_pixel.to_le_bytes());
    buf.push(sweep.sweep_tag.ordinal() as u8);
    buf.extend_from_slice(&pid_len.to_le_bytes());
    buf.extend_from_slice(pid);
    for frame in sweep.frames() {
        buf.extend_from_slice(frame.pixels());
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::MalformedHeader {
                offset: self.pos,
                reason: format!(
                    "file ends before {field} ({} of {n} bytes available)",
                    self.bytes.len().saturating_sub(self.pos)
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self, field: &str) -> Result<f32> {
        let b = self.take(4, field)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Sweep> {
    let mut cur = Cursor { bytes, pos: 0 };
    let malformed = |offset: usize, reason: String| Error::MalformedHeader { offset, reason };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(malformed(0, format!("bad magic {magic:02x?}, expected \"BSWP\"")));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(malformed(4, format!("unsupported version {version}")));
    }
    let t = cur.u16("frame count")? as usize;
    let h = cur.u16("height")? as usize;
    let w = cur.u16("width")? as usize;
    if t == 0 || h == 0 || w == 0 {
        return Err(malformed(6, format!("zero dimension T={t} H={h} W={w}")));
    }
    let dtype = cur.u8("dtype")?;
    if dtype != DTYPE_U8 {
        return Err(malformed(12, format!("unsupported dtype code {dtype}")));
    }
    let mm = cur.f32("mm_per_pixel")?;
    if !(mm > 0.0 && mm.is_finite()) {
        return Err(malformed(13, format!("non-positive mm_per_pixel {mm}")));
    }
    let tag_code = cur.u8("tag")?;
    let tag = SweepTag::from_ordinal(tag_code as usize)
        .ok_or_else(|| malformed(17, format!("unknown tag code {tag_code}")))?;
    let pid_len = cur.u16("patient_id length")? as usize;
    let pid_offset = cur.pos;
    let pid = std::str::from_utf8(cur.take(pid_len, "patient_id")?)
        .map_err(|e| malformed(pid_offset, format!("patient_id is not UTF-8: {e}")))?
        .to_owned();

    let frame_len = h * w;
    let expected = t * frame_len;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            offset: bytes.len(),
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(malformed(
            cur.pos + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let frames = payload
        .chunks_exact(frame_len)
        .map(|px| Frame::new(h, w, px.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut sweep = Sweep::new(frames, tag, pid, mm)?;
    sweep.canonical_len = t;
    Ok(sweep)
}

pub fn write_sweep(sweep: &Sweep, path: &Path) -> Result<()> {
    let bytes = encode(sweep)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_sweep(path: &Path) -> Result<Sweep> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
