//! Dense row-major `f32` tensors.
//!
//! Tensors are immutable once built and always hold finite values, so the
//! codec can rely on a finite min/max.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of extents, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::Shape("shape must have at least one dimension".into()));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("extent {i} of {dims:?} is zero")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("element count of {dims:?} overflows")))?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            shape: t.shape,
            data: t.data,
        }
    }
}

impl Tensor {
    /// Takes ownership of `values`; rejects a length mismatch or any NaN/Inf.
    pub fn new(shape: Shape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values supplied for shape {shape} ({} elements)",
                values.len(),
                shape.numel()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!(
                "non-finite value {} at index {i}",
                values[i]
            )));
        }
        Ok(Tensor { shape, data: values })
    }

    pub fn from_slice(shape: Shape, values: &[f32]) -> Result<Self> {
        Tensor::new(shape, values.to_vec())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Smallest and largest element.
    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Little-endian bytes of every element in row-major order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Elementwise `a - b`.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "cannot subtract {} from {}",
            b.shape, a.shape
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape.clone(), data)
}

/// Sum of squares, accumulated in `f64`.
pub fn sq_sum(a: &Tensor) -> f64 {
    a.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
}

/// Uniform values in `[lo, hi)` from a ChaCha8 stream keyed by `seed`.
pub fn random_fill(shape: Shape, seed: u64, lo: f32, hi: f32) -> Result<Tensor> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::Range(format!("need finite lo < hi, got [{lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.numel())
        .map(|_| rng.random_range(lo..hi))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn construct() {
        let t = Tensor::new(shape(&[2]), vec![1.0, 2.0]).unwrap();
        assert_eq!(t.numel(), 2);
        assert!(matches!(
            Tensor::new(shape(&[2, 3]), vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Tensor::new(shape(&[1]), vec![f32::NAN]),
            Err(Error::Value(_))
        ));
        assert!(matches!(
            Tensor::new(shape(&[1]), vec![f32::INFINITY]),
            Err(Error::Value(_))
        ));
    }

    #[test]
    fn shape_rules() {
        assert!(Shape::new(vec![]).is_err());
        assert!(Shape::new(vec![3, 0]).is_err());
        assert!(Shape::new(vec![usize::MAX, 2]).is_err());
        assert_eq!(shape(&[3, 223, 265]).numel(), 177_285);
    }

    #[test]
    fn subtraction() {
        let a = Tensor::new(shape(&[2]), vec![1.0, 2.0]).unwrap();
        assert_eq!(sub(&a, &a).unwrap().data(), &[0.0, 0.0]);
        let b = Tensor::new(shape(&[1]), vec![3.0]).unwrap();
        let c = Tensor::new(shape(&[1]), vec![1.0]).unwrap();
        assert_eq!(sub(&b, &c).unwrap().data(), &[2.0]);
        let d = Tensor::new(shape(&[3]), vec![0.0; 3]).unwrap();
        assert!(matches!(sub(&a, &d), Err(Error::Shape(_))));
    }

    #[test]
    fn squares() {
        assert_eq!(sq_sum(&Tensor::new(shape(&[3]), vec![0.0; 3]).unwrap()), 0.0);
        assert_eq!(sq_sum(&Tensor::new(shape(&[2]), vec![1.0, 2.0]).unwrap()), 5.0);
        assert_eq!(sq_sum(&Tensor::new(shape(&[1]), vec![-3.0]).unwrap()), 9.0);
    }

    #[test]
    fn random_fill_is_seeded() {
        let s = shape(&[4, 8]);
        let a = random_fill(s.clone(), 1, -1.0, 1.0).unwrap();
        let b = random_fill(s.clone(), 1, -1.0, 1.0).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        let c = random_fill(s.clone(), 2, -1.0, 1.0).unwrap();
        assert_ne!(a, c);
        assert!(a.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
        assert!(matches!(random_fill(s, 1, 1.0, 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn serde_rejects_bad_tensors() {
        let ok: Tensor = serde_json::from_str(r#"{"shape":[2],"data":[1.0,2.0]}"#).unwrap();
        assert_eq!(ok.numel(), 2);
        assert!(serde_json::from_str::<Tensor>(r#"{"shape":[3],"data":[1.0]}"#).is_err());
        assert!(serde_json::from_str::<Tensor>(r#"{"shape":[0],"data":[]}"#).is_err());
    }

    proptest! {
        #[test]
        fn self_difference_is_zero(v in prop::collection::vec(-1e3f32..1e3, 1..64)) {
            let t = Tensor::new(shape(&[v.len()]), v).unwrap();
            prop_assert_eq!(sq_sum(&sub(&t, &t).unwrap()), 0.0);
        }

        #[test]
        fn sq_sum_ignores_sign(v in prop::collection::vec(-1e3f32..1e3, 1..64)) {
            let neg: Vec<f32> = v.iter().map(|x| -x).collect();
            let a = Tensor::new(shape(&[v.len()]), v.clone()).unwrap();
            let b = Tensor::new(shape(&[v.len()]), neg).unwrap();
            prop_assert_eq!(sq_sum(&a), sq_sum(&b));
        }
    }
}
