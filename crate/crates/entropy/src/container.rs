//! Serialized compressed image.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic "ILLM" | version u8 | orig_width u32 | orig_height u32 | model_id u64
//! | stream_count u8 | { length u32 | payload } * stream_count
//! ```
//!
//! The byte length of the serialized container is the measured bitrate.

use crate::error::{EntropyError, Result};

pub const MAGIC: [u8; 4] = *b"ILLM";
pub const CONTAINER_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 8 + 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitstreamContainer {
    pub version: u8,
    pub orig_width: u32,
    pub orig_height: u32,
    pub model_id: u64,
    pub streams: Vec<Vec<u8>>,
}

impl BitstreamContainer {
    pub fn new(streams: Vec<Vec<u8>>, width: u32, height: u32, model_id: u64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(EntropyError::InvalidDimensions(width, height));
        }
        if streams.len() > u8::MAX as usize {
            return Err(EntropyError::TooManyStreams(streams.len()));
        }
        Ok(Self {
            version: CONTAINER_VERSION,
            orig_width: width,
            orig_height: height,
            model_id,
            streams,
        })
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + self.streams.iter().map(|s| 4 + s.len()).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.orig_width.to_le_bytes());
        out.extend_from_slice(&self.orig_height.to_le_bytes());
        out.extend_from_slice(&self.model_id.to_le_bytes());
        out.push(self.streams.len() as u8);
        for s in &self.streams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        out
    }

    /// Bits per pixel of the serialized container over the original image area.
    pub fn bpp(&self) -> f64 {
        bits_per_pixel(self.serialized_len(), self.orig_width, self.orig_height)
    }
}

pub fn bits_per_pixel(byte_len: usize, width: u32, height: u32) -> f64 {
    8.0 * byte_len as f64 / (width as f64 * height as f64)
}

pub fn serialize_container(
    streams: &[Vec<u8>],
    width: u32,
    height: u32,
    model_id: u64,
) -> Result<Vec<u8>> {
    Ok(BitstreamContainer::new(streams.to_vec(), width, height, model_id)?.to_bytes())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(EntropyError::Truncated)?;
        let s = self.data.get(self.pos..end).ok_or(EntropyError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn parse_container(bytes: &[u8]) -> Result<BitstreamContainer> {
    let mut r = Reader { data: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(EntropyError::BadMagic(magic));
    }
    let version = r.u8()?;
    if version != CONTAINER_VERSION {
        return Err(EntropyError::UnsupportedVersion(version));
    }
    let orig_width = r.u32()?;
    let orig_height = r.u32()?;
    if orig_width == 0 || orig_height == 0 {
        return Err(EntropyError::InvalidDimensions(orig_width, orig_height));
    }
    let model_id = r.u64()?;
    let count = r.u8()? as usize;
    let mut streams = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        streams.push(r.take(len)?.to_vec());
    }
    if r.pos != bytes.len() {
        return Err(EntropyError::TrailingData(bytes.len() - r.pos));
    }
    Ok(BitstreamContainer {
        version,
        orig_width,
        orig_height,
        model_id,
        streams,
    })
}
