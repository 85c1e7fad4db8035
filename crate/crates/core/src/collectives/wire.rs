//! Binary message format exchanged between simulated nodes.
//!
//! ```text
//! offset  size  field
//! 0       1     exponent bits
//! 1       1     mantissa bits
//! 2       2     scale exponent, i16 little-endian
//! 4       8     element count, u64 little-endian
//! 12      ..    packed payload, ceil(count * width / 8) bytes
//! ```

use crate::softfloat::{decode, encode, packed_len, FloatFormat, PackedBuffer};

use super::CollectiveError;

pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub scale_exp: i16,
    pub payload: PackedBuffer,
}

impl WireMessage {
    pub fn new(
        values: &[f32],
        format: FloatFormat,
        scale_exp: i16,
    ) -> Result<Self, CollectiveError> {
        Ok(WireMessage {
            scale_exp,
            payload: encode(values, format)?,
        })
    }

    /// Header-only message carrying exponent metadata.
    pub fn metadata(format: FloatFormat, scale_exp: i16) -> Self {
        WireMessage {
            scale_exp,
            payload: encode(&[], format).expect("empty payload always encodes"),
        }
    }

    pub fn format(&self) -> FloatFormat {
        self.payload.format()
    }

    pub fn values(&self) -> Vec<f32> {
        decode(&self.payload)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.bytes().len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let f = self.payload.format();
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(f.exp_bits());
        out.push(f.man_bits());
        out.extend_from_slice(&self.scale_exp.to_le_bytes());
        out.extend_from_slice(&(self.payload.count() as u64).to_le_bytes());
        out.extend_from_slice(self.payload.bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CollectiveError> {
        if bytes.len() < HEADER_LEN {
            return Err(CollectiveError::Wire(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let format = FloatFormat::new(bytes[0], bytes[1])?;
        let scale_exp = i16::from_le_bytes([bytes[2], bytes[3]]);
        let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8-byte slice"));
        let count = usize::try_from(count)
            .map_err(|_| CollectiveError::Wire(format!("count {count} too large")))?;
        let expected = count
            .checked_mul(format.width() as usize)
            .map(|_| packed_len(format, count))
            .ok_or_else(|| CollectiveError::Wire(format!("count {count} too large")))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != expected {
            return Err(CollectiveError::Wire(format!(
                "payload holds {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let payload = PackedBuffer::from_parts(format, count, body.to_vec())?;
        Ok(WireMessage { scale_exp, payload })
    }
}
