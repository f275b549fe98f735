//! Uniform affine quantization, `q = clamp(round(x / S) - z)` and
//! `x' = S * (q + z)`.
//!
//! The zero point is *subtracted* when quantizing. This is the opposite sign
//! of the more common `round(x / S) + z` convention, so dequantization adds it
//! back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{IntTensor, Tensor};

/// Bit widths the planner chooses between.
pub const PLAN_BITS: [u8; 2] = [4, 8];

/// Marker width meaning "leave this tensor at full precision".
pub const FULL_PRECISION: u8 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bits: u8,
    pub symmetric: bool,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32, bits: u8, symmetric: bool) -> Result<Self> {
        let p = Self {
            scale,
            zero_point,
            bits,
            symmetric,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits) {
            return Err(Error::InvalidArgument(format!(
                "bit width {} outside 2..=16",
                self.bits
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if self.symmetric && self.zero_point != 0 {
            return Err(Error::InvalidArgument(
                "symmetric quantization requires zero point 0".into(),
            ));
        }
        Ok(())
    }

    pub fn qmin(&self) -> i32 {
        qrange(self.bits).0
    }

    pub fn qmax(&self) -> i32 {
        qrange(self.bits).1
    }

    /// Real interval that maps into the integer range without saturating.
    pub fn representable_range(&self) -> (f64, f64) {
        let z = self.zero_point as f64;
        (
            self.scale * (self.qmin() as f64 + z),
            self.scale * (self.qmax() as f64 + z),
        )
    }

    #[inline]
    pub fn quantize_value(&self, x: f64) -> i32 {
        let q = (x / self.scale).round() - self.zero_point as f64;
        q.clamp(self.qmin() as f64, self.qmax() as f64) as i32
    }

    #[inline]
    pub fn dequantize_value(&self, q: i32) -> f64 {
        self.scale * (q as f64 + self.zero_point as f64)
    }

    #[inline]
    pub fn fake_quant_value(&self, x: f64) -> f64 {
        self.dequantize_value(self.quantize_value(x))
    }
}

/// Signed integer range `[-2^(b-1), 2^(b-1) - 1]`.
pub fn qrange(bits: u8) -> (i32, i32) {
    let half = 1i32 << (bits - 1);
    (-half, half - 1)
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot calibrate an empty tensor".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("values contain NaN or infinity".into()));
    }
    Ok(())
}

/// Min-max calibration.
///
/// Symmetric: `S = max(|min|, |max|) / (2^(b-1) - 1)`, `z = 0`.
/// Asymmetric: `S = (max - min) / (2^b - 1)` with `z` chosen so `min` lands
/// on the bottom of the integer range. A degenerate range uses `S = 1`.
pub fn calibrate_minmax(values: &[f64], bits: u8, symmetric: bool) -> Result<QuantParams> {
    check_values(values)?;
    if !(2..=16).contains(&bits) {
        return Err(Error::InvalidArgument(format!("bit width {bits} outside 2..=16")));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (qmin, qmax) = qrange(bits);
    if symmetric {
        let amax = lo.abs().max(hi.abs());
        let scale = if amax > 0.0 { amax / qmax as f64 } else { 1.0 };
        return QuantParams::new(scale, 0, bits, true);
    }
    if hi == lo {
        // constant tensor: unit scale, constant maps to integer 0
        return QuantParams::new(1.0, lo.round() as i32, bits, false);
    }
    let scale = (hi - lo) / ((1u32 << bits) - 1) as f64;
    let zero_point = (lo / scale).round() as i64 - qmin as i64;
    let zero_point = i32::try_from(zero_point)
        .map_err(|_| Error::InvalidArgument("zero point overflows i32".into()))?;
    QuantParams::new(scale, zero_point, bits, false)
}

pub fn quantize(values: &Tensor, params: &QuantParams) -> Result<IntTensor> {
    params.validate()?;
    if !values.all_finite() {
        return Err(Error::InvalidArgument("cannot quantize non-finite values".into()));
    }
    IntTensor::new(
        values.shape().to_vec(),
        values.data().iter().map(|&x| params.quantize_value(x)).collect(),
    )
}

pub fn dequantize(values: &IntTensor, params: &QuantParams) -> Tensor {
    Tensor::new(
        values.shape().to_vec(),
        values.data().iter().map(|&q| params.dequantize_value(q)).collect(),
    )
    .expect("shape preserved")
}

/// `dequantize(quantize(x))` without materialising the integer tensor.
pub fn fake_quantize(values: &Tensor, params: &QuantParams) -> Tensor {
    values.map(|x| params.fake_quant_value(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn symmetric_unit_range_at_8_bits() {
        let p = calibrate_minmax(&[-1.0, 0.3, 1.0], 8, true).unwrap();
        assert_relative_eq!(p.scale, 1.0 / 127.0);
        assert_eq!(p.zero_point, 0);
    }

    #[test]
    fn asymmetric_scale_for_0_to_2_55() {
        let p = calibrate_minmax(&[0.0, 1.0, 2.55], 8, false).unwrap();
        assert_relative_eq!(p.scale, 0.01, epsilon = 1e-15);
        // min 0 maps to -128
        assert_eq!(p.quantize_value(0.0), -128);
        assert_eq!(p.zero_point, 128);
    }

    #[test]
    fn constant_tensor_uses_unit_scale() {
        let values = vec![0.7; 5];
        let p = calibrate_minmax(&values, 8, false).unwrap();
        assert_eq!(p.scale, 1.0);
        let t = Tensor::new(vec![5], values).unwrap();
        let q = quantize(&t, &p).unwrap();
        assert!(q.data().iter().all(|&v| v == 0));
        let back = dequantize(&q, &p);
        let first = back.data()[0];
        assert!(back.data().iter().all(|&v| v == first));
        assert!((first - 0.7).abs() <= p.scale / 2.0);
    }

    #[test]
    fn eq1_worked_examples() {
        let p = QuantParams::new(0.1, 0, 8, true).unwrap();
        assert_eq!(p.quantize_value(0.23), 2);
        assert_relative_eq!(p.dequantize_value(2), 0.2);
        let p4 = QuantParams::new(0.1, 0, 4, true).unwrap();
        assert_eq!(p4.quantize_value(1.0), 7);
    }

    #[test]
    fn rounds_half_away_from_zero() {
        let p = QuantParams::new(1.0, 0, 8, true).unwrap();
        assert_eq!(p.quantize_value(2.5), 3);
        assert_eq!(p.quantize_value(-2.5), -3);
    }

    #[test]
    fn invalid_inputs() {
        assert!(calibrate_minmax(&[], 8, true).is_err());
        assert!(calibrate_minmax(&[1.0, f64::NAN], 8, true).is_err());
        assert!(QuantParams::new(0.0, 0, 8, true).is_err());
        assert!(QuantParams::new(1.0, 3, 8, true).is_err());
        let t = Tensor::new(vec![1], vec![f64::INFINITY]).unwrap();
        assert!(quantize(&t, &QuantParams::new(1.0, 0, 8, true).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(
            values in proptest::collection::vec(-50.0f64..50.0, 2..64),
            symmetric in any::<bool>(),
            wide in any::<bool>(),
        ) {
            let bits = if wide { 8 } else { 4 };
            let p = calibrate_minmax(&values, bits, symmetric).unwrap();
            let (lo, hi) = p.representable_range();
            for &x in &values {
                if x >= lo && x <= hi {
                    prop_assert!((p.fake_quant_value(x) - x).abs() <= p.scale / 2.0 * (1.0 + 1e-12));
                }
            }
        }

        #[test]
        fn fake_quant_is_idempotent(
            values in proptest::collection::vec(-10.0f64..10.0, 1..64),
            symmetric in any::<bool>(),
        ) {
            let p = calibrate_minmax(&values, 4, symmetric).unwrap();
            let t = Tensor::new(vec![values.len()], values).unwrap();
            let once = fake_quantize(&t, &p);
            let twice = fake_quantize(&once, &p);
            prop_assert_eq!(once, twice);
        }
    }
}
