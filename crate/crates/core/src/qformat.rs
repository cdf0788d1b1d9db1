//! Fixed-point representation and the float<->fixed conversion pair used at
//! the host/device boundary.
//!
//! A [`QFormat`] encodes reals as signed integers: raw value `q` stands for
//! `q * 2^-frac_bits`. Device tensors are 8-bit; accumulators inside the
//! simulated device are wider and never represented as [`QTensor`]s.

use thiserror::Error;

/// Maximum device tensor width. Accumulators are wider (see `accelsim`).
pub const MAX_TENSOR_BITS: u32 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("calibration input is empty")]
    EmptyInput,
    #[error("calibration input contains a non-finite value")]
    NonFinite,
    #[error("magnitude {0} cannot be represented in {1} bits at any fractional precision")]
    OutOfRange(f64, u32),
    #[error("invalid format: total_bits={total_bits}, frac_bits={frac_bits}")]
    BadFormat { total_bits: u32, frac_bits: u32 },
    #[error("shape {shape:?} does not match {len} data elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("raw value {0} outside representable range of {1}")]
    RawOutOfRange(i32, QFormat),
}

/// Signed fixed-point format: raw integer `q` represents `q * 2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
}

impl QFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, QuantError> {
        if total_bits == 0 || total_bits > MAX_TENSOR_BITS || frac_bits >= total_bits {
            return Err(QuantError::BadFormat { total_bits, frac_bits });
        }
        Ok(Self { total_bits, frac_bits })
    }

    /// Smallest representable raw value.
    pub fn raw_min(&self) -> i32 {
        -(1 << (self.total_bits - 1))
    }

    /// Largest representable raw value.
    pub fn raw_max(&self) -> i32 {
        (1 << (self.total_bits - 1)) - 1
    }

    /// Real-value scale of one raw unit, `2^-frac_bits`.
    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    /// Map one real value onto the raw grid: round half away from zero,
    /// then saturate. Saturation is defined behavior, not an error.
    pub fn quantize_value(&self, x: f64) -> i32 {
        let scaled = x * (self.frac_bits as f64).exp2();
        let rounded = scaled.round(); // f64::round is round-half-away-from-zero
        if rounded <= self.raw_min() as f64 {
            self.raw_min()
        } else if rounded >= self.raw_max() as f64 {
            self.raw_max()
        } else {
            rounded as i32
        }
    }

    /// Real value of one raw integer. Exact: raw has at most 8 significant
    /// bits and the scale is a power of two.
    pub fn dequantize_value(&self, raw: i32) -> f64 {
        raw as f64 * self.step()
    }
}

impl std::fmt::Display for QFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q{}.{}", self.total_bits as i64 - self.frac_bits as i64, self.frac_bits)
    }
}

/// Dense float tensor, row-major over `shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl FloatTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, QuantError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(QuantError::ShapeMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute value, 0.0 for an all-zero tensor.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Integer tensor in a declared fixed-point format; the currency of the
/// simulated device. Raw values always lie inside the format's range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub format: QFormat,
}

impl QTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i8>, format: QFormat) -> Result<Self, QuantError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(QuantError::ShapeMismatch { shape, len: data.len() });
        }
        for &v in &data {
            if (v as i32) < format.raw_min() || (v as i32) > format.raw_max() {
                return Err(QuantError::RawOutOfRange(v as i32, format));
            }
        }
        Ok(Self { shape, data, format })
    }

    pub fn zeros(shape: Vec<usize>, format: QFormat) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0; n], format }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Modeled device transfer size: one byte per element.
    pub fn transfer_bytes(&self) -> u64 {
        self.data.len() as u64
    }
}

/// Pick the format with the most fractional bits that still represents the
/// input's peak magnitude without saturating. An all-zero input gets the
/// finest precision available.
pub fn calibrate_format(values: &FloatTensor, total_bits: u32) -> Result<QFormat, QuantError> {
    if values.is_empty() {
        return Err(QuantError::EmptyInput);
    }
    if !values.is_finite() {
        return Err(QuantError::NonFinite);
    }
    let max_abs = values.max_abs();
    if max_abs == 0.0 {
        return QFormat::new(total_bits, total_bits - 1);
    }
    for frac in (0..total_bits).rev() {
        let fmt = QFormat::new(total_bits, frac)?;
        if (max_abs * (frac as f64).exp2()).round() <= fmt.raw_max() as f64 {
            return Ok(fmt);
        }
    }
    Err(QuantError::OutOfRange(max_abs, total_bits))
}

/// Float -> fixed point (device direction): round half away from zero and
/// saturate to the format range.
pub fn quantize(x: &FloatTensor, fmt: QFormat) -> QTensor {
    let data = x.data.iter().map(|&v| fmt.quantize_value(v) as i8).collect();
    QTensor { shape: x.shape.clone(), data, format: fmt }
}

/// Fixed point -> float (host direction). Exact for every representable raw
/// value.
pub fn dequantize(q: &QTensor) -> FloatTensor {
    let data = q.data.iter().map(|&v| q.format.dequantize_value(v as i32)).collect();
    FloatTensor { shape: q.shape.clone(), data }
}
