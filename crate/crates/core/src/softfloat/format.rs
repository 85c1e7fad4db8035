use std::fmt;
use std::str::FromStr;

use super::SoftFloatError;

/// A sign/exponent/mantissa floating-point layout no wider than binary32.
///
/// Encodings follow IEEE 754 conventions: biased exponent, implicit leading
/// bit for normals, subnormals at exponent field zero, and the all-ones
/// exponent field reserved for infinities and NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    exp_bits: u8,
    man_bits: u8,
}

impl FloatFormat {
    pub const FP32: FloatFormat = FloatFormat {
        exp_bits: 8,
        man_bits: 23,
    };
    pub const FP16: FloatFormat = FloatFormat {
        exp_bits: 5,
        man_bits: 10,
    };
    pub const BF16: FloatFormat = FloatFormat {
        exp_bits: 8,
        man_bits: 7,
    };
    /// 16-bit layout with a 6-bit exponent used for hybrid FP8 training.
    pub const FP16_E6M9: FloatFormat = FloatFormat {
        exp_bits: 6,
        man_bits: 9,
    };
    pub const FP8_E5M2: FloatFormat = FloatFormat {
        exp_bits: 5,
        man_bits: 2,
    };
    pub const FP8_E4M3: FloatFormat = FloatFormat {
        exp_bits: 4,
        man_bits: 3,
    };
    pub const FP4_E3M0: FloatFormat = FloatFormat {
        exp_bits: 3,
        man_bits: 0,
    };

    pub const MAX_EXP_BITS: u8 = 8;
    pub const MAX_MAN_BITS: u8 = 23;

    pub fn new(exp_bits: u8, man_bits: u8) -> Result<Self, SoftFloatError> {
        if !(1..=Self::MAX_EXP_BITS).contains(&exp_bits) || man_bits > Self::MAX_MAN_BITS {
            return Err(SoftFloatError::InvalidFormat { exp_bits, man_bits });
        }
        Ok(FloatFormat { exp_bits, man_bits })
    }

    /// Every valid format, narrowest first.
    pub fn all() -> impl Iterator<Item = FloatFormat> {
        (1..=Self::MAX_EXP_BITS).flat_map(|e| {
            (0..=Self::MAX_MAN_BITS).map(move |m| FloatFormat {
                exp_bits: e,
                man_bits: m,
            })
        })
    }

    pub fn exp_bits(self) -> u8 {
        self.exp_bits
    }

    pub fn man_bits(self) -> u8 {
        self.man_bits
    }

    /// Total encoding width including the sign bit.
    pub fn width(self) -> u32 {
        1 + self.exp_bits as u32 + self.man_bits as u32
    }

    pub fn bias(self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    /// Largest unbiased exponent of a normal number; equal to the bias.
    pub fn upper_bound_exp(self) -> i32 {
        self.bias()
    }

    /// Unbiased exponent of the smallest normal number.
    pub fn min_normal_exp(self) -> i32 {
        1 - self.bias()
    }

    /// Exponent of the smallest positive subnormal, `1 - bias - man_bits`.
    pub fn min_subnormal_exp(self) -> i32 {
        self.min_normal_exp() - self.man_bits as i32
    }

    pub fn min_positive(self) -> f32 {
        pow2(self.min_subnormal_exp()) as f32
    }

    pub fn min_normal(self) -> f32 {
        pow2(self.min_normal_exp()) as f32
    }

    pub fn max_finite(self) -> f32 {
        // The largest finite encoding sits directly below the infinity encoding.
        self.magnitude_value(self.inf_index() - 1) as f32
    }

    /// `(min positive subnormal, upper_bound_exp)`: the `[2^a, 2^b]` range notation.
    pub fn range(self) -> (f32, i32) {
        (self.min_positive(), self.upper_bound_exp())
    }

    pub(crate) fn exp_field_max(self) -> u32 {
        (1u32 << self.exp_bits) - 1
    }

    pub(crate) fn man_mask(self) -> u32 {
        (1u32 << self.man_bits) - 1
    }

    /// Magnitude index of +Inf; finite magnitudes occupy `0..inf_index()`.
    pub(crate) fn inf_index(self) -> u64 {
        (self.exp_field_max() as u64) << self.man_bits
    }

    /// Value of a non-negative magnitude index. The infinity index maps to
    /// `2^(bias + 1)`, the value the next binade would start at.
    pub(crate) fn magnitude_value(self, index: u64) -> f64 {
        let m = self.man_bits as u32;
        let field = (index >> m) as i32;
        let mantissa = index & self.man_mask() as u64;
        if field == 0 {
            mantissa as f64 * pow2(self.min_subnormal_exp())
        } else {
            ((1u64 << m) + mantissa) as f64 * pow2(field - self.bias() - m as i32)
        }
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.exp_bits, self.man_bits)
    }
}

/// Parses `E,M`, optionally wrapped in parentheses.
impl FromStr for FloatFormat {
    type Err = SoftFloatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SoftFloatError::Parse(s.to_string());
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (e, m) = inner.split_once(',').ok_or_else(bad)?;
        let e: u8 = e.trim().parse().map_err(|_| bad())?;
        let m: u8 = m.trim().parse().map_err(|_| bad())?;
        FloatFormat::new(e, m)
    }
}

/// Exact `2^exp` for exponents inside the binary64 normal range.
pub(crate) fn pow2(exp: i32) -> f64 {
    assert!(
        (-1022..=1023).contains(&exp),
        "2^{exp} outside binary64 normal range"
    );
    f64::from_bits(((exp + 1023) as u64) << 52)
}

/// `floor(log2(a))` for a positive normal binary64.
pub(crate) fn floor_log2(a: f64) -> i32 {
    debug_assert!(a.is_normal() && a > 0.0);
    ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023
}
