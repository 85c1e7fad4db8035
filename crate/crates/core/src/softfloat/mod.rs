//! Emulation of customized low-precision floating-point formats.
//!
//! Values are carried as binary32 scalars that are exactly representable in
//! the target format; every format here embeds into binary32. The packed
//! codec is used only at the wire boundary.

mod cast;
mod codec;
mod format;

use thiserror::Error;

pub use cast::{
    cast_down, cast_down_at, cast_up, is_representable, round_to_format, QuantizedValue,
    RoundingMode,
};
pub use codec::{decode, encode, from_bits, packed_len, to_bits, PackedBuffer};
pub use format::FloatFormat;

pub(crate) use cast::round_wide;
pub(crate) use format::pow2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoftFloatError {
    #[error(
        "invalid format ({exp_bits},{man_bits}): need 1..=8 exponent bits and 0..=23 mantissa bits"
    )]
    InvalidFormat { exp_bits: u8, man_bits: u8 },
    #[error("cannot parse format {0:?}, expected E,M")]
    Parse(String),
    #[error("NaN has no encoding in {format}: format has no mantissa bits")]
    NanNotRepresentable { format: FloatFormat },
    #[error("{value} is not representable in {format}")]
    NotRepresentable { value: f32, format: FloatFormat },
    #[error("packed buffer holds {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
}

/// `(min positive subnormal, upper_bound_exp)` of `format`.
pub fn derive_range(format: FloatFormat) -> (f32, i32) {
    format.range()
}

/// Rounds every element of `values` in place. Element `i` uses stochastic
/// stream `base_index + i`.
pub fn round_slice(values: &mut [f32], format: FloatFormat, mode: RoundingMode, base_index: u64) {
    for (i, v) in values.iter_mut().enumerate() {
        *v = round_to_format(*v, format, mode, base_index.wrapping_add(i as u64));
    }
}
