//! Little-endian binary formats shared with external tooling.
//!
//! `EVT1`: 16-byte header (magic, `u16` width, `u16` height, `u64` count),
//! then 16-byte records (`u64` t, `u16` x, `u16` y, `i8` p, 3 zero bytes).
//!
//! `VOX1`: 10-byte header (magic, `u16` bins, `u16` height, `u16` width),
//! then `f32` values with bins outermost.

use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity, VoxelGrid};
use crate::scalar::Scalar;

pub const EVT_MAGIC: [u8; 4] = *b"EVT1";
pub const VOX_MAGIC: [u8; 4] = *b"VOX1";
pub const EVT_HEADER_LEN: usize = 16;
pub const EVT_RECORD_LEN: usize = 16;
pub const VOX_HEADER_LEN: usize = 10;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::decode(
                self.bytes.len() as u64,
                format!("truncated input: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        if self.take(4)? != expected {
            return Err(Error::decode(0, format!("bad magic, expected {:?}", String::from_utf8_lossy(&expected))));
        }
        Ok(())
    }
}

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(EVT_HEADER_LEN + EVT_RECORD_LEN * stream.len());
    out.extend_from_slice(&EVT_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p.sign() as u8);
        out.extend_from_slice(&[0; 3]);
    }
    out
}

/// Decodes and validates an `EVT1` buffer; errors carry the byte offset.
pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(EVT_MAGIC)?;
    let width = r.u16()?;
    let height = r.u16()?;
    let count = r.u64()?;
    let expected = (count as u128) * EVT_RECORD_LEN as u128 + EVT_HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        let offset = bytes.len().min(expected.min(u64::MAX as u128) as usize) as u64;
        return Err(Error::decode(
            offset,
            format!("header declares {count} events ({expected} bytes), buffer has {}", bytes.len()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut last_t = 0;
    for i in 0..count as usize {
        let base = (EVT_HEADER_LEN + i * EVT_RECORD_LEN) as u64;
        let t = r.u64()?;
        let x = r.u16()?;
        let y = r.u16()?;
        let rest = r.take(4)?;
        let p = Polarity::from_sign(rest[0] as i8)
            .ok_or_else(|| Error::decode(base + 12, format!("invalid polarity {}", rest[0] as i8)))?;
        if rest[1..] != [0, 0, 0] {
            return Err(Error::decode(base + 13, "non-zero padding"));
        }
        if x >= width || y >= height {
            return Err(Error::decode(base + 8, format!("event ({x}, {y}) outside {width}x{height}")));
        }
        if t < last_t {
            return Err(Error::decode(base, "timestamps are not sorted"));
        }
        last_t = t;
        events.push(Event::new(x, y, t, p));
    }
    Ok(EventStream::from_parts_unchecked(width, height, events))
}

/// Encodes a grid, converting values to `f32`.
pub fn encode_voxel<T: Scalar>(grid: &VoxelGrid<T>) -> Result<Vec<u8>> {
    let dims = [grid.bins(), grid.height(), grid.width()];
    if dims.iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::validation("voxel grid dimensions must fit in 16 bits"));
    }
    let mut out = Vec::with_capacity(VOX_HEADER_LEN + 4 * grid.values().len());
    out.extend_from_slice(&VOX_MAGIC);
    for d in dims {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for v in grid.values() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_voxel(bytes: &[u8]) -> Result<VoxelGrid<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(VOX_MAGIC)?;
    let bins = r.u16()? as usize;
    let height = r.u16()? as usize;
    let width = r.u16()? as usize;
    let n = bins * height * width;
    if bytes.len() != VOX_HEADER_LEN + 4 * n {
        return Err(Error::decode(
            bytes.len().min(VOX_HEADER_LEN + 4 * n) as u64,
            format!("header declares {n} values, buffer has {} bytes", bytes.len()),
        ));
    }
    let values = bytes[VOX_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VoxelGrid::from_values(bins, height, width, values)
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    std::fs::write(path, encode_events(stream)).map_err(|e| Error::io(path, e))
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    decode_events(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_voxel<T: Scalar>(path: &Path, grid: &VoxelGrid<T>) -> Result<()> {
    std::fs::write(path, encode_voxel(grid)?).map_err(|e| Error::io(path, e))
}

pub fn read_voxel(path: &Path) -> Result<VoxelGrid<f32>> {
    decode_voxel(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventStream {
        EventStream::new(
            4,
            3,
            vec![
                Event::new(0, 0, 1, Polarity::Positive),
                Event::new(3, 2, 1, Polarity::Negative),
                Event::new(1, 1, 900, Polarity::Positive),
            ],
        )
        .unwrap()
    }

    #[test]
    fn event_layout_is_fixed() {
        let b = encode_events(&sample());
        assert_eq!(b.len(), 16 + 3 * 16);
        assert_eq!(&b[..4], b"EVT1");
        assert_eq!(&b[4..8], &[4, 0, 3, 0]);
        assert_eq!(b[8], 3);
        // second record: t=1, x=3, y=2, p=-1
        assert_eq!(&b[32..48], &[1, 0, 0, 0, 0, 0, 0, 0, 3, 0, 2, 0, 0xff, 0, 0, 0]);
    }

    #[test]
    fn decode_errors_report_offsets() {
        let good = encode_events(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_events(&bad), Err(Error::Decode { offset: 0, .. })));
        let mut bad = good.clone();
        bad[16 + 12] = 0;
        assert!(matches!(decode_events(&bad), Err(Error::Decode { offset: 28, .. })));
        let mut bad = good.clone();
        bad[16 + 8] = 9;
        assert!(matches!(decode_events(&bad), Err(Error::Decode { offset: 24, .. })));
        assert!(matches!(decode_events(&good[..40]), Err(Error::Decode { .. })));
        assert!(decode_events(&good[..10]).is_err());
    }

    #[test]
    fn voxel_layout_is_fixed() {
        let g = VoxelGrid::from_values(2, 1, 2, vec![1.0f32, -0.5, 0.25, 0.0]).unwrap();
        let b = encode_voxel(&g).unwrap();
        assert_eq!(&b[..10], &[b'V', b'O', b'X', b'1', 2, 0, 1, 0, 2, 0]);
        assert_eq!(&b[10..14], &1.0f32.to_le_bytes());
        assert_eq!(decode_voxel(&b).unwrap(), g);
        assert!(decode_voxel(&b[..13]).is_err());
    }
}
