//! Summation and matrix multiply with a configurable accumulator format.
//!
//! Accumulation order is strictly left to right by index. Every arithmetic
//! result is rounded into the accumulator format before it is used again.

use thiserror::Error;

use crate::softfloat::{round_to_format, round_wide, FloatFormat, RoundingMode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccumulateError {
    #[error("cannot multiply {a_rows}x{a_cols} by {b_rows}x{b_cols}")]
    DimensionMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("matrix data holds {actual} elements, expected {expected}")]
    DataLength { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumFormat {
    /// Native binary32 arithmetic.
    Binary32,
    Custom(FloatFormat),
}

impl AccumFormat {
    pub fn as_format(self) -> FloatFormat {
        match self {
            AccumFormat::Binary32 => FloatFormat::FP32,
            AccumFormat::Custom(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumStrategy {
    #[default]
    Sequential,
    Kahan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccumulatorConfig {
    pub format: AccumFormat,
    pub strategy: AccumStrategy,
    /// Applies to custom formats; binary32 always rounds to nearest even.
    pub rounding: RoundingMode,
}

impl AccumulatorConfig {
    pub fn new(format: AccumFormat, strategy: AccumStrategy) -> Self {
        AccumulatorConfig {
            format,
            strategy,
            rounding: RoundingMode::NearestEven,
        }
    }

    pub fn binary32() -> Self {
        Self::new(AccumFormat::Binary32, AccumStrategy::Sequential)
    }

    pub fn sequential(format: FloatFormat) -> Self {
        Self::new(AccumFormat::Custom(format), AccumStrategy::Sequential)
    }

    pub fn kahan(format: FloatFormat) -> Self {
        Self::new(AccumFormat::Custom(format), AccumStrategy::Kahan)
    }

    pub fn with_rounding(mut self, rounding: RoundingMode) -> Self {
        self.rounding = rounding;
        self
    }
}

/// Arithmetic rounded into the accumulator format. Each operation consumes
/// one stochastic-rounding stream index.
#[derive(Debug, Clone)]
pub(crate) struct Arith {
    format: AccumFormat,
    rounding: RoundingMode,
    next_index: u64,
}

impl Arith {
    pub(crate) fn new(cfg: &AccumulatorConfig, base_index: u64) -> Self {
        Arith {
            format: cfg.format,
            rounding: cfg.rounding,
            next_index: base_index,
        }
    }

    fn tick(&mut self) -> u64 {
        let i = self.next_index;
        self.next_index = self.next_index.wrapping_add(1);
        i
    }

    // Sums and products of two binary32 values are carried in binary64,
    // which is wide enough that rounding it again to <= 24 bits is exact
    // rounding of the true result.
    pub(crate) fn add(&mut self, a: f32, b: f32) -> f32 {
        match self.format {
            AccumFormat::Binary32 => a + b,
            AccumFormat::Custom(f) => {
                let i = self.tick();
                round_wide(a as f64 + b as f64, f, self.rounding, i)
            }
        }
    }

    pub(crate) fn sub(&mut self, a: f32, b: f32) -> f32 {
        self.add(a, -b)
    }

    pub(crate) fn mul(&mut self, a: f32, b: f32) -> f32 {
        match self.format {
            AccumFormat::Binary32 => a * b,
            AccumFormat::Custom(f) => {
                let i = self.tick();
                round_wide(a as f64 * b as f64, f, self.rounding, i)
            }
        }
    }

    pub(crate) fn sum(
        &mut self,
        values: impl IntoIterator<Item = f32>,
        strategy: AccumStrategy,
    ) -> f32 {
        match strategy {
            AccumStrategy::Sequential => values.into_iter().fold(0.0, |acc, x| self.add(acc, x)),
            AccumStrategy::Kahan => {
                let mut sum = 0.0f32;
                let mut compensation = 0.0f32;
                for x in values {
                    let y = self.sub(x, compensation);
                    let t = self.add(sum, y);
                    let lost = self.sub(t, sum);
                    compensation = self.sub(lost, y);
                    sum = t;
                }
                sum
            }
        }
    }
}

/// Sums `values` left to right under `cfg`. The empty sum is `+0.0`.
pub fn reduce_sum(values: &[f32], cfg: &AccumulatorConfig) -> f32 {
    reduce_sum_at(values, cfg, 0)
}

/// [`reduce_sum`] with stochastic-rounding streams starting at `base_index`.
pub fn reduce_sum_at(values: &[f32], cfg: &AccumulatorConfig, base_index: u64) -> f32 {
    Arith::new(cfg, base_index).sum(values.iter().copied(), cfg.strategy)
}

/// Dense row-major binary32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, AccumulateError> {
        if data.len() != rows * cols {
            return Err(AccumulateError::DataLength {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn map(&self, mut f: impl FnMut(usize, f32) -> f32) -> Matrix {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| f(i, x))
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Low-precision matrix product.
///
/// Inputs are first rounded to `elem_format`; every product is rounded to
/// the accumulator format and each dot product is accumulated per `cfg`
/// in increasing inner index.
pub fn gemm(
    a: &Matrix,
    b: &Matrix,
    elem_format: FloatFormat,
    cfg: &AccumulatorConfig,
) -> Result<Matrix, AccumulateError> {
    if a.cols != b.rows {
        return Err(AccumulateError::DimensionMismatch {
            a_rows: a.rows,
            a_cols: a.cols,
            b_rows: b.rows,
            b_cols: b.cols,
        });
    }
    let a_len = a.data.len() as u64;
    let qa = a.map(|i, x| round_to_format(x, elem_format, cfg.rounding, i as u64));
    let qb = b.map(|i, x| round_to_format(x, elem_format, cfg.rounding, a_len + i as u64));

    let n = a.cols;
    // Each output cell gets a disjoint block of stochastic streams.
    let per_cell = 4 * n as u64 + 1;
    let base = a_len + b.data.len() as u64;
    let mut out = Vec::with_capacity(a.rows * b.cols);
    for r in 0..a.rows {
        for c in 0..b.cols {
            let cell = (r * b.cols + c) as u64;
            let mut arith = Arith::new(cfg, base + cell * per_cell);
            let products: Vec<f32> = (0..n)
                .map(|k| arith.mul(qa.get(r, k), qb.get(k, c)))
                .collect();
            out.push(arith.sum(products, cfg.strategy));
        }
    }
    Ok(Matrix {
        rows: a.rows,
        cols: b.cols,
        data: out,
    })
}
