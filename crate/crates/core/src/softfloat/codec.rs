//! Bit-packed wire encoding of format values.
//!
//! Each element is `sign | exponent | mantissa`, every field MSB-first, and
//! elements are concatenated MSB-first into the byte stream. The last byte is
//! zero-padded.

use super::cast::{bracket, is_representable};
use super::{FloatFormat, SoftFloatError};

/// Packed encodings of `count` values of one format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBuffer {
    format: FloatFormat,
    count: usize,
    bytes: Vec<u8>,
}

impl PackedBuffer {
    /// Rebuilds a buffer received from elsewhere, checking its length.
    pub fn from_parts(
        format: FloatFormat,
        count: usize,
        bytes: Vec<u8>,
    ) -> Result<Self, SoftFloatError> {
        let expected = packed_len(format, count);
        if bytes.len() != expected {
            return Err(SoftFloatError::BufferLength {
                expected,
                actual: bytes.len(),
            });
        }
        Ok(PackedBuffer {
            format,
            count,
            bytes,
        })
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Payload size before padding.
    pub fn bit_len(&self) -> usize {
        self.count * self.format.width() as usize
    }
}

/// Bytes needed to hold `count` packed values.
pub fn packed_len(format: FloatFormat, count: usize) -> usize {
    (count * format.width() as usize).div_ceil(8)
}

/// Encoding of one value, right-aligned in a `u32`.
pub fn to_bits(x: f32, format: FloatFormat) -> Result<u32, SoftFloatError> {
    let m = format.man_bits() as u32;
    let e = format.exp_bits() as u32;
    if x.is_nan() {
        if m == 0 {
            return Err(SoftFloatError::NanNotRepresentable { format });
        }
        return Ok((format.exp_field_max() << m) | (1 << (m - 1)));
    }
    let sign = (x.is_sign_negative() as u32) << (e + m);
    if x.is_infinite() {
        return Ok(sign | (format.exp_field_max() << m));
    }
    if x == 0.0 {
        return Ok(sign);
    }
    if !is_representable(x, format) {
        return Err(SoftFloatError::NotRepresentable { value: x, format });
    }
    let (index, fraction) = bracket(x.abs() as f64, format);
    debug_assert_eq!(fraction, 0.0);
    Ok(sign | index as u32)
}

/// Value of a right-aligned encoding. Any NaN pattern decodes to the canonical NaN.
pub fn from_bits(bits: u32, format: FloatFormat) -> f32 {
    let m = format.man_bits() as u32;
    let e = format.exp_bits() as u32;
    let negative = (bits >> (e + m)) & 1 == 1;
    let magnitude = bits & ((1u32 << (e + m)) - 1);
    let field = magnitude >> m;
    let value = if field == format.exp_field_max() {
        if magnitude & format.man_mask() != 0 {
            return f32::NAN;
        }
        f32::INFINITY
    } else {
        format.magnitude_value(magnitude as u64) as f32
    };
    if negative {
        -value
    } else {
        value
    }
}

pub fn encode(values: &[f32], format: FloatFormat) -> Result<PackedBuffer, SoftFloatError> {
    let width = format.width();
    let mut writer = BitWriter::with_capacity(packed_len(format, values.len()));
    for &v in values {
        writer.push(to_bits(v, format)?, width);
    }
    Ok(PackedBuffer {
        format,
        count: values.len(),
        bytes: writer.finish(),
    })
}

pub fn decode(buf: &PackedBuffer) -> Vec<f32> {
    let width = buf.format.width();
    let mut reader = BitReader::new(&buf.bytes);
    (0..buf.count)
        .map(|_| from_bits(reader.pull(width), buf.format))
        .collect()
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    pending: u32,
}

impl BitWriter {
    fn with_capacity(n: usize) -> Self {
        BitWriter {
            bytes: Vec::with_capacity(n),
            acc: 0,
            pending: 0,
        }
    }

    fn push(&mut self, value: u32, width: u32) {
        self.acc = (self.acc << width) | value as u64;
        self.pending += width;
        while self.pending >= 8 {
            self.pending -= 8;
            self.bytes.push((self.acc >> self.pending) as u8);
        }
        self.acc &= (1u64 << self.pending) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.pending > 0 {
            self.bytes.push((self.acc << (8 - self.pending)) as u8);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    next: usize,
    acc: u64,
    available: u32,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader {
            bytes,
            next: 0,
            acc: 0,
            available: 0,
        }
    }

    fn pull(&mut self, width: u32) -> u32 {
        while self.available < width {
            self.acc = (self.acc << 8) | self.bytes[self.next] as u64;
            self.next += 1;
            self.available += 8;
        }
        self.available -= width;
        let value = (self.acc >> self.available) as u32 & (((1u64 << width) - 1) as u32);
        self.acc &= (1u64 << self.available) - 1;
        value
    }
}
