use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::format::{floor_log2, pow2};
use super::{FloatFormat, SoftFloatError};

/// How a binary32 value is rounded into a narrower format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    /// Round to nearest; ties go to the even encoding.
    #[default]
    NearestEven,
    /// Round up with probability equal to the fractional distance from the
    /// lower neighbor. Draws come from ChaCha8 keyed by `seed` with the
    /// element index as stream, so results do not depend on evaluation order.
    Stochastic { seed: u64 },
}

/// A binary32 value exactly representable in `format`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedValue {
    value: f32,
    format: FloatFormat,
}

impl QuantizedValue {
    /// Wraps `value` if it is exactly representable in `format`.
    pub fn new(value: f32, format: FloatFormat) -> Result<Self, SoftFloatError> {
        if !is_representable(value, format) {
            return Err(SoftFloatError::NotRepresentable { value, format });
        }
        Ok(QuantizedValue { value, format })
    }

    pub fn value(self) -> f32 {
        self.value
    }

    pub fn format(self) -> FloatFormat {
        self.format
    }
}

/// Casts `x` into `format`, using stream 0 for stochastic rounding.
pub fn cast_down(
    x: f32,
    format: FloatFormat,
    mode: RoundingMode,
) -> Result<QuantizedValue, SoftFloatError> {
    cast_down_at(x, format, mode, 0)
}

/// Casts `x` into `format`. `index` selects the stochastic-rounding stream.
///
/// Fails only for NaN into a format without mantissa bits, where NaN has no
/// encoding distinct from infinity.
pub fn cast_down_at(
    x: f32,
    format: FloatFormat,
    mode: RoundingMode,
    index: u64,
) -> Result<QuantizedValue, SoftFloatError> {
    if x.is_nan() && format.man_bits() == 0 {
        return Err(SoftFloatError::NanNotRepresentable { format });
    }
    Ok(QuantizedValue {
        value: round_to_format(x, format, mode, index),
        format,
    })
}

/// Stored values are exact, so widening back is the identity.
pub fn cast_up(q: QuantizedValue) -> f32 {
    q.value
}

/// Rounds `x` to the nearest value of `format` under `mode`.
///
/// NaN maps to the canonical NaN, infinities and signed zeros pass through.
/// Results at or past the infinity encoding become signed infinity; results
/// below half the smallest subnormal become signed zero.
pub fn round_to_format(x: f32, format: FloatFormat, mode: RoundingMode, index: u64) -> f32 {
    round_wide(x as f64, format, mode, index)
}

/// Same as [`round_to_format`] for a binary64 operand holding the exact (or
/// at least 2p+2 bit accurate) result of an operation on format values.
pub(crate) fn round_wide(x: f64, format: FloatFormat, mode: RoundingMode, index: u64) -> f32 {
    if x.is_nan() {
        return f32::NAN;
    }
    if x.is_infinite() || x == 0.0 {
        return x as f32;
    }
    let magnitude = round_magnitude(x.abs(), format, mode, index);
    if x.is_sign_negative() {
        -magnitude
    } else {
        magnitude
    }
}

/// Rounds a positive finite magnitude. `a` must carry at most 53 significant bits.
pub(crate) fn round_magnitude(a: f64, format: FloatFormat, mode: RoundingMode, index: u64) -> f32 {
    let inf = format.inf_index();
    if a >= format.magnitude_value(inf) {
        return f32::INFINITY;
    }
    let (lower, fraction) = bracket(a, format);
    let up = match mode {
        RoundingMode::NearestEven => fraction > 0.5 || (fraction == 0.5 && lower & 1 == 1),
        RoundingMode::Stochastic { seed } => {
            fraction > 0.0 && stochastic_uniform(seed, index) < fraction
        }
    };
    let k = lower + up as u64;
    if k >= inf {
        f32::INFINITY
    } else {
        format.magnitude_value(k) as f32
    }
}

/// Splits a positive magnitude below the infinity threshold into the index
/// of the representable value at or below it and the fractional position
/// toward the next index.
pub(crate) fn bracket(a: f64, format: FloatFormat) -> (u64, f64) {
    let m = format.man_bits() as i32;
    let emin = format.min_normal_exp();
    let e = floor_log2(a).max(emin);
    // Spacing of representable values within binade e is 2^(e - m); the
    // quotient is exact since only the exponent changes.
    let q = a * pow2(m - e);
    let whole = q.floor();
    let lower = (((e - emin) as u64) << m) + whole as u64;
    (lower, q - whole)
}

pub fn is_representable(x: f32, format: FloatFormat) -> bool {
    if x.is_nan() {
        return format.man_bits() > 0;
    }
    round_to_format(x, format, RoundingMode::NearestEven, 0).to_bits() == x.to_bits()
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub(crate) fn stochastic_uniform(seed: u64, index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (rng.next_u64() >> 11) as f64 * pow2(-53)
}
