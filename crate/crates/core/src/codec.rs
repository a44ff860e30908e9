//! Bottleneck quantization: 8-bit affine, binary16 cast, and 32-bit
//! passthrough, plus wire-size accounting.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::wire;

/// Largest finite binary16 magnitude.
pub const F16_MAX: f32 = 65504.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Width {
    W8,
    W16,
    W32,
}

impl Width {
    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
        }
    }

    pub fn bytes_per_element(self) -> usize {
        self.bits() as usize / 8
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(Width::W8),
            16 => Ok(Width::W16),
            32 => Ok(Width::W32),
            other => Err(Error::Argument(format!(
                "element width must be 8, 16 or 32, got {other}"
            ))),
        }
    }
}

impl TryFrom<u32> for Width {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        Width::from_bits(bits)
    }
}

impl From<Width> for u32 {
    fn from(w: Width) -> u32 {
        w.bits()
    }
}

/// 8-bit scheme.
///
/// `Affine` carries a zero point so one-sided (post-ReLU) activations use the
/// whole code range. `Symmetric` uses a fixed zero point of 128, so the only
/// free parameter on the wire is the scale.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quant8Mode {
    #[default]
    Affine,
    Symmetric,
}

pub const SYMMETRIC_ZERO_POINT: i32 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Shape,
    pub width: Width,
    /// Dequantization step (width 8); 1.0 otherwise.
    pub scale: f32,
    /// Code that maps back to 0.0 (width 8); 0 otherwise.
    pub zero_point: i32,
    pub payload: Vec<u8>,
    /// Set by `quantize16` when some input exceeded the binary16 range.
    pub saturated: bool,
}

impl QuantizedTensor {
    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    /// Checks the payload length and the quantization parameters.
    pub fn validate(&self) -> Result<()> {
        let expected = self.numel() * self.width.bytes_per_element();
        if self.payload.len() != expected {
            return Err(Error::Codec(format!(
                "width {} tensor of shape {} needs {expected} payload bytes, found {}",
                self.width.bits(),
                self.shape,
                self.payload.len()
            )));
        }
        if self.width == Width::W8 {
            if !(self.scale.is_finite() && self.scale > 0.0) {
                return Err(Error::Codec(format!("invalid scale {}", self.scale)));
            }
            if !(0..=255).contains(&self.zero_point) {
                return Err(Error::Codec(format!(
                    "zero point {} outside [0, 255]",
                    self.zero_point
                )));
            }
        }
        Ok(())
    }
}

/// Affine 8-bit quantization.
pub fn quantize8(t: &Tensor) -> QuantizedTensor {
    quantize8_with(t, Quant8Mode::Affine)
}

pub fn quantize8_with(t: &Tensor, mode: Quant8Mode) -> QuantizedTensor {
    let (lo, hi) = t.min_max();
    let (scale, zero_point, payload) = if lo == hi {
        constant_codes(lo, t.numel(), mode)
    } else {
        match mode {
            Quant8Mode::Affine => affine_codes(t, lo, hi),
            Quant8Mode::Symmetric => symmetric_codes(t, lo, hi),
        }
    };
    QuantizedTensor {
        shape: t.shape().clone(),
        width: Width::W8,
        scale,
        zero_point,
        payload,
        saturated: false,
    }
}

// A constant c is encoded with step |c| and a code one step away from the
// zero point, so it dequantizes to exactly c.
fn constant_codes(c: f32, n: usize, mode: Quant8Mode) -> (f32, i32, Vec<u8>) {
    match mode {
        Quant8Mode::Affine if c == 0.0 => (1.0, 0, vec![0; n]),
        Quant8Mode::Affine if c > 0.0 => (c, 0, vec![1; n]),
        Quant8Mode::Affine => (-c, 1, vec![0; n]),
        Quant8Mode::Symmetric => {
            let z = SYMMETRIC_ZERO_POINT as u8;
            let code = if c > 0.0 {
                z + 1
            } else if c < 0.0 {
                z - 1
            } else {
                z
            };
            let scale = if c == 0.0 { 1.0 } else { c.abs() };
            (scale, SYMMETRIC_ZERO_POINT, vec![code; n])
        }
    }
}

fn positive_step(step: f64) -> f32 {
    // Ranges narrower than 255 subnormal steps would otherwise round to 0.
    (step as f32).max(f32::from_bits(1))
}

fn affine_codes(t: &Tensor, lo: f32, hi: f32) -> (f32, i32, Vec<u8>) {
    // The representable range always contains 0 so the zero point is a valid code.
    let lo = f64::from(lo.min(0.0));
    let hi = f64::from(hi.max(0.0));
    let scale = positive_step((hi - lo) / 255.0);
    let step = f64::from(scale);
    let zero_point = (-lo / step).round().clamp(0.0, 255.0);
    let payload = t
        .data()
        .iter()
        .map(|&x| ((f64::from(x) / step).round() + zero_point).clamp(0.0, 255.0) as u8)
        .collect();
    (scale, zero_point as i32, payload)
}

fn symmetric_codes(t: &Tensor, lo: f32, hi: f32) -> (f32, i32, Vec<u8>) {
    let amax = f64::from(lo.abs().max(hi.abs()));
    let scale = positive_step(amax / 127.0);
    let step = f64::from(scale);
    let z = f64::from(SYMMETRIC_ZERO_POINT);
    let payload = t
        .data()
        .iter()
        .map(|&x| ((f64::from(x) / step).round() + z).clamp(1.0, 255.0) as u8)
        .collect();
    (scale, SYMMETRIC_ZERO_POINT, payload)
}

/// Casts to binary16 (round to nearest, ties to even). Magnitudes above
/// 65504 are clamped and flagged.
pub fn quantize16(t: &Tensor) -> QuantizedTensor {
    let mut saturated = false;
    let payload = t
        .data()
        .iter()
        .flat_map(|&x| {
            let x = if x.abs() > F16_MAX {
                saturated = true;
                F16_MAX.copysign(x)
            } else {
                x
            };
            f16::from_f32(x).to_le_bytes()
        })
        .collect();
    QuantizedTensor {
        shape: t.shape().clone(),
        width: Width::W16,
        scale: 1.0,
        zero_point: 0,
        payload,
        saturated,
    }
}

pub fn passthrough32(t: &Tensor) -> QuantizedTensor {
    QuantizedTensor {
        shape: t.shape().clone(),
        width: Width::W32,
        scale: 1.0,
        zero_point: 0,
        payload: t.to_le_bytes(),
        saturated: false,
    }
}

pub fn quantize(t: &Tensor, width: Width) -> QuantizedTensor {
    match width {
        Width::W8 => quantize8(t),
        Width::W16 => quantize16(t),
        Width::W32 => passthrough32(t),
    }
}

pub fn dequantize(q: &QuantizedTensor) -> Result<Tensor> {
    q.validate()?;
    let data: Vec<f32> = match q.width {
        Width::W8 => {
            let step = f64::from(q.scale);
            let z = i64::from(q.zero_point);
            q.payload
                .iter()
                .map(|&c| (step * (i64::from(c) - z) as f64) as f32)
                .collect()
        }
        Width::W16 => q
            .payload
            .chunks_exact(2)
            .map(|b| f16::from_le_bytes([b[0], b[1]]).to_f32())
            .collect(),
        Width::W32 => q
            .payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    };
    Tensor::new(q.shape.clone(), data).map_err(|e| Error::Codec(e.to_string()))
}

/// Bytes a quantized tensor occupies as a wire frame, compared against a
/// reference payload such as the JPEG-encoded input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub payload_bytes: u64,
    pub header_bytes: u64,
    pub total_bytes: u64,
    pub ratio_vs_reference: f64,
}

/// Size of `q` as a framed message and its ratio to `reference_bytes`.
pub fn data_size(q: &QuantizedTensor, reference_bytes: u64) -> Result<SizeReport> {
    if reference_bytes == 0 {
        return Err(Error::Range("reference size must be positive".into()));
    }
    let payload_bytes = q.payload.len() as u64;
    let header_bytes = wire::header_len(q.shape.rank()) as u64;
    let total_bytes = payload_bytes + header_bytes;
    Ok(SizeReport {
        payload_bytes,
        header_bytes,
        total_bytes,
        ratio_vs_reference: total_bytes as f64 / reference_bytes as f64,
    })
}

pub fn ratio_vs(q: &QuantizedTensor, reference_bytes: u64) -> Result<f64> {
    Ok(data_size(q, reference_bytes)?.ratio_vs_reference)
}

/// Framed size of a tensor of `shape` at `width`, without quantizing it.
pub fn framed_size(shape: &Shape, width: Width) -> u64 {
    (wire::header_len(shape.rank()) + shape.numel() * width.bytes_per_element()) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_fill;
    use proptest::prelude::*;

    fn tensor(v: &[f32]) -> Tensor {
        Tensor::from_slice(Shape::new(vec![v.len()]).unwrap(), v).unwrap()
    }

    fn max_abs_err(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constants_round_trip_exactly() {
        for c in [5.0f32, -3.25, 0.0, 1e-30, -7e20] {
            for mode in [Quant8Mode::Affine, Quant8Mode::Symmetric] {
                let t = tensor(&[c, c, c]);
                let q = quantize8_with(&t, mode);
                q.validate().unwrap();
                assert_eq!(dequantize(&q).unwrap(), t, "c={c} mode={mode:?}");
            }
        }
    }

    #[test]
    fn byte_grid_is_exact() {
        let v: Vec<f32> = (0..=255).map(|i| i as f32).collect();
        let t = tensor(&v);
        let q = quantize8(&t);
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.zero_point, 0);
        assert_eq!(dequantize(&q).unwrap(), t);
    }

    #[test]
    fn one_sided_range_keeps_error_bound() {
        // All-positive input: the range is extended down to 0.
        let t = tensor(&[10.0, 10.5, 11.0]);
        let q = quantize8(&t);
        assert_eq!(q.zero_point, 0);
        let back = dequantize(&q).unwrap();
        assert!(max_abs_err(&t, &back) <= f64::from(q.scale) / 2.0 + 1e-6);
        let t = tensor(&[-4.0, -2.0, -1.0]);
        let q = quantize8(&t);
        assert_eq!(q.zero_point, 255);
        let back = dequantize(&q).unwrap();
        assert!(max_abs_err(&t, &back) <= f64::from(q.scale) / 2.0 + 1e-6);
    }

    #[test]
    fn binary16_cases() {
        let t = tensor(&[1.0, 0.5, -2.0]);
        let q = quantize16(&t);
        assert!(!q.saturated);
        assert_eq!(dequantize(&q).unwrap(), t);

        let x = 1.0 + 2f32.powi(-12);
        let back = dequantize(&quantize16(&tensor(&[x]))).unwrap().data()[0];
        // exactly halfway between 1 and 1 + 2^-10: ties to even mantissa
        assert_eq!(back, 1.0);
        assert!(f64::from((back - x).abs() / x) <= 2f64.powi(-11));

        let q = quantize16(&tensor(&[1e6, -1e6, 3.0]));
        assert!(q.saturated);
        assert_eq!(dequantize(&q).unwrap().data(), &[65504.0, -65504.0, 3.0]);
        assert_eq!(q.payload[..2], [0xff, 0x7b]);
    }

    #[test]
    fn passthrough_is_bit_identical() {
        let t = random_fill(Shape::new(vec![7, 3]).unwrap(), 9, -5.0, 5.0).unwrap();
        let back = dequantize(&passthrough32(&t)).unwrap();
        assert_eq!(back.to_le_bytes(), t.to_le_bytes());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = random_fill(Shape::new(vec![16]).unwrap(), 1, -1.0, 1.0).unwrap();
        for width in [Width::W8, Width::W16, Width::W32] {
            let mut q = quantize(&t, width);
            q.payload.pop();
            assert!(matches!(dequantize(&q), Err(Error::Codec(_))));
        }
        let mut q = quantize8(&t);
        q.zero_point = 300;
        assert!(matches!(dequantize(&q), Err(Error::Codec(_))));
        q.zero_point = 0;
        q.scale = 0.0;
        assert!(matches!(dequantize(&q), Err(Error::Codec(_))));
    }

    #[test]
    fn size_accounting() {
        let shape = Shape::new(vec![3, 223, 265]).unwrap();
        let t = Tensor::new(shape.clone(), vec![0.5; shape.numel()]).unwrap();
        let q8 = quantize8(&t);
        let q32 = passthrough32(&t);
        let r8 = data_size(&q8, 1000).unwrap();
        let r32 = data_size(&q32, 1000).unwrap();
        assert_eq!(r8.header_bytes, 35);
        assert_eq!(r8.total_bytes, r8.payload_bytes + r8.header_bytes);
        assert_eq!(r8.payload_bytes as f64 / r32.payload_bytes as f64, 0.25);
        assert_eq!(framed_size(&shape, Width::W8), r8.total_bytes);
        assert!(matches!(data_size(&q8, 0), Err(Error::Range(_))));

        // 177,285 codes against a 275,800-byte reference
        let r = ratio_vs(&q8, 275_800).unwrap();
        assert!((r - 0.643).abs() < 0.001, "{r}");
    }

    #[test]
    fn width_parsing() {
        assert_eq!(Width::from_bits(16).unwrap(), Width::W16);
        assert!(matches!(Width::from_bits(12), Err(Error::Argument(_))));
    }

    fn finite_vec() -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-1e4f32..1e4, 1..200)
    }

    proptest! {
        #[test]
        fn affine_error_within_half_step(v in finite_vec()) {
            let t = tensor(&v);
            let q = quantize8(&t);
            let back = dequantize(&q).unwrap();
            prop_assert!(max_abs_err(&t, &back) <= f64::from(q.scale) / 2.0 * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn symmetric_error_within_half_step(v in finite_vec()) {
            let t = tensor(&v);
            let q = quantize8_with(&t, Quant8Mode::Symmetric);
            let back = dequantize(&q).unwrap();
            prop_assert!(max_abs_err(&t, &back) <= f64::from(q.scale) / 2.0 * (1.0 + 1e-6) + 1e-6);
        }

        #[test]
        fn codes_are_monotone(v in finite_vec()) {
            let q = quantize8(&tensor(&v));
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] <= v[j] {
                        prop_assert!(q.payload[i] <= q.payload[j]);
                    }
                }
            }
        }

        #[test]
        fn sizes_are_ordered(n in 65usize..5000) {
            let shape = Shape::new(vec![n]).unwrap();
            let s8 = framed_size(&shape, Width::W8);
            let s16 = framed_size(&shape, Width::W16);
            let s32 = framed_size(&shape, Width::W32);
            prop_assert!(s8 < s16 && s16 < s32);
        }

        #[test]
        fn quantization_is_deterministic(v in finite_vec()) {
            let t = tensor(&v);
            prop_assert_eq!(quantize8(&t).payload, quantize8(&t).payload);
            prop_assert_eq!(quantize16(&t).payload, quantize16(&t).payload);
        }
    }
}
