//! Signed binary fixed-point codec and the plaintext fixed-point oracle.
//!
//! A value with format `(f, W)` is a signed `W`-bit integer `raw` read as
//! `raw / 2^f`. Encoding rounds half away from zero; every rescale after a
//! multiplication floors toward negative infinity. The functions at the
//! bottom of this module are the integer reference semantics that circuit
//! witnesses must reproduce bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldScalar, MODULUS_BITS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("invalid fixed-point format {frac_bits}:{width}")]
    InvalidFormat { frac_bits: u32, width: u32 },
    #[error("value {value} is outside the representable range of format {format}")]
    OutOfRange { value: f64, format: FixedPointFormat },
    #[error("fixed-point overflow in {op}")]
    Overflow { op: &'static str },
    #[error("operands use different formats ({0} vs {1})")]
    FormatMismatch(FixedPointFormat, FixedPointFormat),
    #[error("cannot parse fixed-point format '{0}', expected f:W")]
    Parse(String),
}

/// Fractional bits and total signed width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FixedPointFormat {
    frac_bits: u32,
    width: u32,
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self { frac_bits: 16, width: 48 }
    }
}

impl FixedPointFormat {
    /// Widest raw value we accept; raw values live in an `i64`.
    pub const MAX_WIDTH: u32 = 62;

    pub fn new(frac_bits: u32, width: u32) -> Result<Self, FixedPointError> {
        let fmt = Self { frac_bits, width };
        if frac_bits == 0 || frac_bits >= width || width > Self::MAX_WIDTH {
            return Err(FixedPointError::InvalidFormat { frac_bits, width });
        }
        // Wide products of two raw values must leave room in the field and in
        // the i128 witness arithmetic for at least a small inner dimension.
        if !fmt.fits_inner_dim(1) {
            return Err(FixedPointError::InvalidFormat { frac_bits, width });
        }
        Ok(fmt)
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    /// Whether an inner product of length `n` can be accumulated before a
    /// single rescale without wrapping.
    pub fn fits_inner_dim(&self, n: usize) -> bool {
        let log_n = ceil_log2(n.max(1) as u128);
        let wide = 2 * self.width + log_n + 2;
        self.width + self.frac_bits + log_n + 2 < MODULUS_BITS && wide < 127
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.width - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.width - 1)) - 1
    }

    pub fn contains_raw(&self, raw: i128) -> bool {
        raw >= self.min_raw() as i128 && raw <= self.max_raw() as i128
    }

    pub fn one_raw(&self) -> i64 {
        1i64 << self.frac_bits
    }

    /// Size of one unit in the last place.
    pub fn ulp(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.frac_bits, self.width)
    }
}

impl FromStr for FixedPointFormat {
    type Err = FixedPointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (f, w) = s
            .split_once(':')
            .ok_or_else(|| FixedPointError::Parse(s.to_string()))?;
        let f = f.trim().parse().map_err(|_| FixedPointError::Parse(s.to_string()))?;
        let w = w.trim().parse().map_err(|_| FixedPointError::Parse(s.to_string()))?;
        Self::new(f, w)
    }
}

impl TryFrom<String> for FixedPointFormat {
    type Error = FixedPointError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FixedPointFormat> for String {
    fn from(f: FixedPointFormat) -> Self {
        f.to_string()
    }
}

pub(crate) fn ceil_log2(n: u128) -> u32 {
    if n <= 1 {
        0
    } else {
        128 - (n - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointValue {
    raw: i64,
    format: FixedPointFormat,
}

impl FixedPointValue {
    pub fn from_raw(raw: i64, format: FixedPointFormat) -> Result<Self, FixedPointError> {
        if !format.contains_raw(raw as i128) {
            return Err(FixedPointError::Overflow { op: "from_raw" });
        }
        Ok(Self { raw, format })
    }

    pub fn raw(&self) -> i64 {
        self.raw
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn to_field(&self) -> FieldScalar {
        FieldScalar::from_i128(self.raw as i128)
    }

    /// Inverse of [`Self::to_field`]; `None` if the element is not a raw
    /// value of this format.
    pub fn from_field(x: FieldScalar, format: FixedPointFormat) -> Option<Self> {
        let raw = x.to_i128()?;
        format.contains_raw(raw).then_some(Self { raw: raw as i64, format })
    }
}

/// Rounds `x * 2^f` half away from zero.
pub fn encode(x: f64, format: FixedPointFormat) -> Result<FixedPointValue, FixedPointError> {
    let bound = ((format.width - 1 - format.frac_bits) as f64).exp2();
    if !x.is_finite() || x.abs() >= bound {
        return Err(FixedPointError::OutOfRange { value: x, format });
    }
    let scaled = (x * (format.frac_bits as f64).exp2()).round();
    let raw = scaled as i64;
    if !format.contains_raw(raw as i128) {
        return Err(FixedPointError::OutOfRange { value: x, format });
    }
    Ok(FixedPointValue { raw, format })
}

pub fn decode(v: FixedPointValue) -> f64 {
    v.raw as f64 / (v.format.frac_bits as f64).exp2()
}

pub fn decode_raw(raw: i128, format: FixedPointFormat) -> f64 {
    raw as f64 / (format.frac_bits as f64).exp2()
}

fn same_format(a: &FixedPointValue, b: &FixedPointValue) -> Result<FixedPointFormat, FixedPointError> {
    if a.format != b.format {
        return Err(FixedPointError::FormatMismatch(a.format, b.format));
    }
    Ok(a.format)
}

pub fn fxp_add(a: FixedPointValue, b: FixedPointValue) -> Result<FixedPointValue, FixedPointError> {
    let format = same_format(&a, &b)?;
    let raw = a.raw as i128 + b.raw as i128;
    if !format.contains_raw(raw) {
        return Err(FixedPointError::Overflow { op: "add" });
    }
    Ok(FixedPointValue { raw: raw as i64, format })
}

/// `floor(a.raw * b.raw / 2^f)`.
pub fn fxp_mul_rescale(
    a: FixedPointValue,
    b: FixedPointValue,
) -> Result<FixedPointValue, FixedPointError> {
    let format = same_format(&a, &b)?;
    let raw = floor_shift(a.raw as i128 * b.raw as i128, format.frac_bits);
    if !format.contains_raw(raw) {
        return Err(FixedPointError::Overflow { op: "mul_rescale" });
    }
    Ok(FixedPointValue { raw: raw as i64, format })
}

/// Division by `2^shift` rounding toward negative infinity.
pub fn floor_shift(v: i128, shift: u32) -> i128 {
    v >> shift
}

/// Inner product of raw vectors followed by one rescale, plus an optional
/// bias already in the output scale.
pub fn dot_rescale(
    a: &[i64],
    b: &[i64],
    bias: Option<i64>,
    format: FixedPointFormat,
) -> Result<i64, FixedPointError> {
    assert_eq!(a.len(), b.len(), "dot_rescale length mismatch");
    let mut acc: i128 = 0;
    for (&x, &y) in a.iter().zip(b) {
        acc = acc
            .checked_add(x as i128 * y as i128)
            .ok_or(FixedPointError::Overflow { op: "dot" })?;
    }
    if let Some(bias) = bias {
        acc += (bias as i128) << format.frac_bits;
    }
    let raw = floor_shift(acc, format.frac_bits);
    if !format.contains_raw(raw) {
        return Err(FixedPointError::Overflow { op: "dot_rescale" });
    }
    Ok(raw as i64)
}

pub fn relu_raw(raw: i64) -> i64 {
    raw.max(0)
}

/// `encode(1 / k)`, the constant multiplier used for averaging.
pub fn reciprocal_raw(k: usize, format: FixedPointFormat) -> Result<i64, FixedPointError> {
    Ok(encode(1.0 / k as f64, format)?.raw)
}

/// Column means of `rows`, computed as one multiply by `encode(1/k)` of each
/// column sum and a single rescale.
pub fn average_raw(rows: &[Vec<i64>], format: FixedPointFormat) -> Result<Vec<i64>, FixedPointError> {
    let k = rows.len();
    assert!(k > 0, "average of an empty batch");
    let recip = reciprocal_raw(k, format)? as i128;
    let m = rows[0].len();
    (0..m)
        .map(|j| {
            let sum: i128 = rows.iter().map(|r| r[j] as i128).sum();
            let raw = floor_shift(sum * recip, format.frac_bits);
            if format.contains_raw(raw) {
                Ok(raw as i64)
            } else {
                Err(FixedPointError::Overflow { op: "average" })
            }
        })
        .collect()
}

/// Coefficients of the degree-9 odd Chebyshev approximation of the logistic
/// sigmoid: `c0 + c1 x + c3 x^3 + c5 x^5 + c7 x^7 + c9 x^9`, listed as
/// `[c0, c1, c3, c5, c7, c9]`.
pub const SIGMOID_COEFFS: [f64; 6] = [
    0.5,
    0.2159198015,
    -0.0082176259,
    0.0001825597,
    -0.0000018848,
    0.0000000072,
];

/// Extra fractional bits carried by the Horner accumulator. The higher
/// coefficients are far below one ulp at typical formats.
pub const SIGMOID_EXTRA_FRAC_BITS: u32 = 24;

/// Extra integer headroom for the Horner accumulator.
pub const SIGMOID_EXTRA_WIDTH: u32 = 24;

/// Scale and width of the Horner accumulator for `format`.
pub fn sigmoid_accumulator(format: FixedPointFormat) -> (u32, u32) {
    (
        format.frac_bits + SIGMOID_EXTRA_FRAC_BITS,
        format.width + SIGMOID_EXTRA_WIDTH,
    )
}

/// `[c1, c3, c5, c7, c9]` rounded at the accumulator scale.
pub fn sigmoid_coeffs_raw(format: FixedPointFormat) -> [i128; 5] {
    let (acc_frac, _) = sigmoid_accumulator(format);
    let scale = (acc_frac as f64).exp2();
    let mut out = [0i128; 5];
    for (o, c) in out.iter_mut().zip(&SIGMOID_COEFFS[1..]) {
        *o = (c * scale).round() as i128;
    }
    out
}

/// The polynomial in `f64`.
pub fn sigmoid_poly(x: f64) -> f64 {
    let t = x * x;
    let c = &SIGMOID_COEFFS;
    c[0] + x * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
}

fn in_width(v: i128, width: u32) -> bool {
    let half = 1i128 << (width - 1);
    v >= -half && v < half
}

/// Fixed-point evaluation of the sigmoid polynomial in odd Horner form:
///
/// ```text
/// t  = floor(x*x / 2^f)
/// h  = c9
/// h  = floor(h*t / 2^f) + c7, then c5, c3, c1     (scale f + 24)
/// y  = floor((h*x + 0.5 * 2^(f+24+f)) / 2^(f+24))  (scale f)
/// ```
pub fn sigmoid_raw(x: i64, format: FixedPointFormat) -> Result<i64, FixedPointError> {
    let f = format.frac_bits;
    let (acc_frac, acc_width) = sigmoid_accumulator(format);
    let [c1, c3, c5, c7, c9] = sigmoid_coeffs_raw(format);
    let x = x as i128;
    let t = floor_shift(x * x, f);
    if !in_width(t, format.width) {
        return Err(FixedPointError::Overflow { op: "sigmoid" });
    }
    let mut h = c9;
    for c in [c7, c5, c3, c1] {
        h = floor_shift(h * t, f) + c;
        if !in_width(h, acc_width) {
            return Err(FixedPointError::Overflow { op: "sigmoid" });
        }
    }
    let half = 1i128 << (f - 1 + acc_frac);
    let y = floor_shift(h * x + half, acc_frac);
    if !format.contains_raw(y) {
        return Err(FixedPointError::Overflow { op: "sigmoid" });
    }
    Ok(y as i64)
}

/// `1` iff `raw >= encode(beta)`.
pub fn hard_threshold_raw(raw: i64, beta: f64, format: FixedPointFormat) -> Result<bool, FixedPointError> {
    Ok(raw >= encode(beta, format)?.raw)
}

/// Largest mismatch count accepted at target bit error rate `theta` over
/// `bits` bits, `floor(theta * bits)`.
pub fn ber_threshold(theta: f64, bits: usize) -> usize {
    // Guard against products such as 0.29 * 100 = 28.999999999999996.
    (theta * bits as f64 + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q16() -> FixedPointFormat {
        FixedPointFormat::default()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(1.0, q16()).unwrap().raw(), 65536);
        assert_eq!(encode(0.0, q16()).unwrap().raw(), 0);
        // round(0.2159198015 * 65536) = round(14150.72...) = 14151
        assert_eq!(encode(0.2159198015, q16()).unwrap().raw(), 14151);
        assert_eq!(encode(-0.5 / 65536.0, q16()).unwrap().raw(), -1);
        assert_eq!(encode(0.5 / 65536.0, q16()).unwrap().raw(), 1);
    }

    #[test]
    fn encode_out_of_range() {
        let fmt = q16();
        let bound = 2f64.powi(31);
        assert!(matches!(encode(bound, fmt), Err(FixedPointError::OutOfRange { .. })));
        assert!(matches!(encode(-bound, fmt), Err(FixedPointError::OutOfRange { .. })));
        assert!(encode(f64::NAN, fmt).is_err());
        assert!(encode(bound - 1.0, fmt).is_ok());
    }

    #[test]
    fn decode_examples() {
        let fmt = q16();
        let v = |raw| FixedPointValue::from_raw(raw, fmt).unwrap();
        assert_eq!(decode(v(65536)), 1.0);
        assert_eq!(decode(v(-32768)), -0.5);
        assert_eq!(decode(v(14151)), 14151.0 / 65536.0);
        assert!((decode(v(14151)) - 0.215927124).abs() < 1e-9);
    }

    #[test]
    fn mul_rescale_examples() {
        let fmt = q16();
        let half = encode(0.5, fmt).unwrap();
        assert_eq!(fxp_mul_rescale(half, half).unwrap().raw(), 16384);
        let x = encode(0.3, fmt).unwrap();
        assert_eq!(x.raw(), 19661);
        // floor(19661^2 / 65536) = floor(5898.33...)
        assert_eq!(fxp_mul_rescale(x, x).unwrap().raw(), 5898);
        let nx = encode(-0.3, fmt).unwrap();
        assert_eq!(fxp_mul_rescale(nx, x).unwrap().raw(), -5899);
        let one = encode(1.0, fmt).unwrap();
        assert_eq!(fxp_mul_rescale(one, x).unwrap(), x);
    }

    #[test]
    fn mul_rescale_overflow_and_mismatch() {
        let fmt = q16();
        let big = encode(60000.0, fmt).unwrap();
        assert_eq!(
            fxp_mul_rescale(big, big),
            Err(FixedPointError::Overflow { op: "mul_rescale" })
        );
        let other = FixedPointFormat::new(8, 32).unwrap();
        let a = encode(1.0, other).unwrap();
        assert!(matches!(fxp_add(a, big), Err(FixedPointError::FormatMismatch(..))));
    }

    #[test]
    fn format_parsing_and_validation() {
        assert_eq!("16:48".parse::<FixedPointFormat>().unwrap(), q16());
        assert!("16".parse::<FixedPointFormat>().is_err());
        assert!(FixedPointFormat::new(0, 48).is_err());
        assert!(FixedPointFormat::new(48, 48).is_err());
        assert!(FixedPointFormat::new(16, 63).is_err());
        assert!(q16().fits_inner_dim(1 << 20));
        assert!(!q16().fits_inner_dim(1 << 30));
    }

    #[test]
    fn sigmoid_fixed_point_basics() {
        let fmt = q16();
        assert_eq!(sigmoid_raw(0, fmt).unwrap(), 32768);
        // degree-9 polynomial at 1 in exact arithmetic: 0.7078828577
        assert!((sigmoid_poly(1.0) - 0.7078828577).abs() < 1e-12);
        let y = sigmoid_raw(65536, fmt).unwrap();
        assert!((decode_raw(y as i128, fmt) - 0.7078828577).abs() < 3.0 * fmt.ulp());
        // accumulator overflows long before i128 does
        assert!(sigmoid_raw(encode(1000.0, fmt).unwrap().raw(), fmt).is_err());
    }

    #[test]
    fn average_and_threshold_helpers() {
        let fmt = q16();
        let one = fmt.one_raw();
        let rows = vec![vec![one, 0, 0], vec![0, one, 0]];
        assert_eq!(average_raw(&rows, fmt).unwrap(), vec![one / 2, one / 2, 0]);
        assert_eq!(ber_threshold(0.1, 32), 3);
        assert_eq!(ber_threshold(0.29, 100), 29);
        assert_eq!(ber_threshold(0.0, 32), 0);
        assert!(hard_threshold_raw(one / 2, 0.5, fmt).unwrap());
        assert!(!hard_threshold_raw(one / 2 - 1, 0.5, fmt).unwrap());
    }

    proptest! {
        #[test]
        fn add_is_exact(x in -1.0e4f64..1.0e4, y in -1.0e4f64..1.0e4) {
            let fmt = q16();
            let (a, b) = (encode(x, fmt).unwrap(), encode(y, fmt).unwrap());
            prop_assert_eq!(decode(fxp_add(a, b).unwrap()), decode(a) + decode(b));
        }

        #[test]
        fn mul_error_bound(x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let fmt = q16();
            let u = fmt.ulp();
            let got = decode(fxp_mul_rescale(encode(x, fmt).unwrap(), encode(y, fmt).unwrap()).unwrap());
            let bound = u + x.abs() * u / 2.0 + y.abs() * u / 2.0 + u * u;
            prop_assert!((got - x * y).abs() <= bound, "{} vs {}", got, x * y);
        }

        #[test]
        fn encode_decode_within_half_ulp(x in -1.0e6f64..1.0e6) {
            let fmt = q16();
            let v = encode(x, fmt).unwrap();
            prop_assert!((decode(v) - x).abs() <= fmt.ulp() / 2.0);
            prop_assert_eq!(encode(x, fmt).unwrap(), v);
        }

        #[test]
        fn field_embedding_round_trips(raw in -(1i64 << 47)..(1i64 << 47)) {
            let fmt = q16();
            let v = FixedPointValue::from_raw(raw, fmt).unwrap();
            prop_assert_eq!(FixedPointValue::from_field(v.to_field(), fmt), Some(v));
        }
    }
}
