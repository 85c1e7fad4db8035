//! Auto-precision scaling: per-bucket exponent discovery, power-of-two
//! scaling-factor selection, scale/unscale, and the constant loss-scaling
//! baseline.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::softfloat::{round_to_format, FloatFormat, RoundingMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApsError {
    #[error("tensor {name:?}: element {index} is NaN")]
    NanElement { name: String, index: usize },
    #[error("element {index} is not finite ({value})")]
    NonFinite { index: usize, value: f32 },
    #[error("tensor {name:?}: shape {shape:?} holds {expected} elements, got {actual}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error(
        "tensor {name:?}: element {index} ({value}) overflows binary32 when scaled by 2^{exp}"
    )]
    ScaleOverflow {
        name: String,
        index: usize,
        value: f32,
        exp: i32,
    },
    #[error("exponent metadata {0} does not fit in 16 bits")]
    MetadataRange(i32),
    #[error("bucket {bucket:?}: {reason}")]
    Bucket { bucket: String, reason: String },
}

/// Flat gradient of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    name: String,
    values: Vec<f32>,
    shape: Vec<usize>,
}

impl GradientTensor {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f32>,
        shape: Vec<usize>,
    ) -> Result<Self, ApsError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(ApsError::ShapeMismatch {
                name,
                shape,
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| v.is_nan()) {
            return Err(ApsError::NanElement { name, index });
        }
        Ok(GradientTensor {
            name,
            values,
            shape,
        })
    }

    /// Output of a reduction, which may hold NaN when opposite infinities
    /// meet under a policy that lets partial sums overflow.
    pub(crate) fn reduced(name: impl Into<String>, values: Vec<f32>) -> Self {
        let len = values.len();
        GradientTensor {
            name: name.into(),
            values,
            shape: vec![len],
        }
    }

    /// One-dimensional tensor.
    pub fn flat(name: impl Into<String>, values: Vec<f32>) -> Result<Self, ApsError> {
        let len = values.len();
        Self::new(name, values, vec![len])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// `ceil(log2(n))` for `n >= 1`.
pub fn ceil_log2(n: usize) -> i32 {
    assert!(n >= 1, "ceil_log2 of zero");
    (usize::BITS - (n - 1).leading_zeros()) as i32
}

/// `ceil(log2(|x|))` of a finite nonzero binary32, read off its bit pattern.
pub fn ceil_log2_abs(x: f32) -> i32 {
    debug_assert!(x.is_finite() && x != 0.0);
    let bits = x.to_bits() & 0x7fff_ffff;
    let field = (bits >> 23) as i32;
    let mantissa = bits & 0x7f_ffff;
    if field == 0 {
        // Subnormal: value = mantissa * 2^-149.
        let floor = 31 - mantissa.leading_zeros() as i32;
        floor - 149 + (!mantissa.is_power_of_two()) as i32
    } else {
        field - 127 + (mantissa != 0) as i32
    }
}

/// Maximum of `ceil(log2|x|)` over nonzero elements; `None` when all are zero.
pub fn find_max_exp(values: &[f32]) -> Result<Option<i32>, ApsError> {
    let mut max = None;
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(ApsError::NonFinite { index, value });
        }
        if value != 0.0 {
            let e = ceil_log2_abs(value);
            max = Some(max.map_or(e, |m: i32| m.max(e)));
        }
    }
    Ok(max)
}

/// Per-node exponent metadata: the local max exponent plus `ceil(log2 N)`,
/// an upper bound on `ceil(log2(N * |g|))`. Carried as 16 bits on the wire.
pub fn exponent_metadata(local_max_exp: i32, n_nodes: usize) -> Result<i16, ApsError> {
    let e = local_max_exp + ceil_log2(n_nodes);
    i16::try_from(e).map_err(|_| ApsError::MetadataRange(e))
}

/// `upper_bound_exp - (max_exp + ceil(log2 N))`. With the MAX-reduced
/// `max_exp`, scaling by `2^result` keeps any N-term sum of scaled
/// magnitudes at or below `2^upper_bound_exp`.
pub fn scaling_exponent(format: FloatFormat, max_exp: i32, n_nodes: usize) -> i32 {
    format.upper_bound_exp() - (max_exp + ceil_log2(n_nodes))
}

/// Scaling exponent from MAX-reduced metadata. All-zero buckets are not scaled.
pub fn scaling_exponent_from_metadata(format: FloatFormat, global_metadata: Option<i16>) -> i32 {
    global_metadata.map_or(0, |m| format.upper_bound_exp() - m as i32)
}

/// `x * 2^k` in binary32, exact unless the result leaves the normal range.
pub fn mul_pow2(x: f32, k: i32) -> f32 {
    // Any nonzero binary32 times 2^600 overflows, times 2^-600 underflows.
    let k = k.clamp(-600, 600);
    (x as f64 * crate::softfloat::pow2(k)) as f32
}

pub fn scale_values(name: &str, values: &[f32], exp: i32) -> Result<Vec<f32>, ApsError> {
    values
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            let scaled = mul_pow2(value, exp);
            if scaled.is_infinite() && value.is_finite() {
                Err(ApsError::ScaleOverflow {
                    name: name.to_string(),
                    index,
                    value,
                    exp,
                })
            } else {
                Ok(scaled)
            }
        })
        .collect()
}

/// Multiplies every element by `2^exp`.
pub fn scale(t: &GradientTensor, exp: i32) -> Result<GradientTensor, ApsError> {
    let values = scale_values(&t.name, &t.values, exp)?;
    Ok(GradientTensor {
        name: t.name.clone(),
        values,
        shape: t.shape.clone(),
    })
}

/// Divides every element by `2^exp`.
pub fn unscale(t: &GradientTensor, exp: i32) -> Result<GradientTensor, ApsError> {
    scale(t, -exp)
}

/// Elements lost to a cast under round-to-nearest-even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Census {
    /// Nonzero elements that round to zero.
    pub underflow: usize,
    /// Finite elements that round to infinity.
    pub overflow: usize,
}

impl std::ops::AddAssign for Census {
    fn add_assign(&mut self, rhs: Census) {
        self.underflow += rhs.underflow;
        self.overflow += rhs.overflow;
    }
}

pub fn census(values: &[f32], format: FloatFormat) -> Census {
    let mut c = Census::default();
    for &x in values {
        if !x.is_finite() {
            continue;
        }
        let q = round_to_format(x, format, RoundingMode::NearestEven, 0);
        if x != 0.0 && q == 0.0 {
            c.underflow += 1;
        } else if q.is_infinite() {
            c.overflow += 1;
        }
    }
    c
}

/// How a bucket's scaling exponent is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingPolicy {
    /// Largest power of two that cannot overflow the N-node sum.
    Aps,
    /// One hand-picked `2^factor_exp` for every bucket.
    ConstantLossScale {
        factor_exp: i32,
    },
    NoScale,
}

impl fmt::Display for ScalingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalingPolicy::Aps => f.write_str("aps"),
            ScalingPolicy::ConstantLossScale { factor_exp } => write!(f, "loss-scale:{factor_exp}"),
            ScalingPolicy::NoScale => f.write_str("none"),
        }
    }
}

impl std::str::FromStr for ScalingPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "aps" => Ok(ScalingPolicy::Aps),
            "none" => Ok(ScalingPolicy::NoScale),
            other => other
                .strip_prefix("loss-scale:")
                .and_then(|k| k.trim().parse().ok())
                .map(|factor_exp| ScalingPolicy::ConstantLossScale { factor_exp })
                .ok_or_else(|| {
                    format!("unknown policy {other:?}, expected aps, none or loss-scale:EXP")
                }),
        }
    }
}

/// Consecutive layers synchronized as one tensor with one scaling exponent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub name: String,
    pub layers: Vec<String>,
    /// Overrides the cluster's element format, e.g. (8,23) for a final classifier.
    pub format: Option<FloatFormat>,
}

impl Bucket {
    pub fn new(name: impl Into<String>, layers: Vec<String>) -> Self {
        Bucket {
            name: name.into(),
            layers,
            format: None,
        }
    }

    pub fn with_format(mut self, format: FloatFormat) -> Self {
        self.format = Some(format);
        self
    }

    /// Position of this bucket's layers in `model`, which must be a contiguous run in order.
    pub fn resolve(&self, model: &[&str]) -> Result<Range<usize>, ApsError> {
        let err = |reason: String| ApsError::Bucket {
            bucket: self.name.clone(),
            reason,
        };
        let first = self.layers.first().ok_or_else(|| err("no layers".into()))?;
        let start = model
            .iter()
            .position(|l| l == first)
            .ok_or_else(|| err(format!("unknown layer {first:?}")))?;
        let end = start + self.layers.len();
        if end > model.len()
            || model[start..end]
                .iter()
                .zip(&self.layers)
                .any(|(a, b)| a != b)
        {
            return Err(err("layers are not consecutive in model order".into()));
        }
        Ok(start..end)
    }
}
