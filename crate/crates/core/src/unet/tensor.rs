use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point element type of the network: `f32` for training and
/// inference, `f64` for gradient checks.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Default + Send + Sync + Debug + Serialize + DeserializeOwned + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense `(n, h, w, c)` tensor, channels fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension(format!(
                "tensor {:?} needs {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Stacks equally shaped `(h, w, c)` samples.
    pub fn stack(samples: &[Vec<T>], h: usize, w: usize, c: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(samples.len() * h * w * c);
        for s in samples {
            if s.len() != h * w * c {
                return Err(Error::Dimension("sample size differs from (h, w, c)".into()));
            }
            data.extend_from_slice(s);
        }
        Ok(Tensor4 {
            shape: [samples.len(), h, w, c],
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn h(&self) -> usize {
        self.shape[1]
    }
    pub fn w(&self) -> usize {
        self.shape[2]
    }
    pub fn c(&self) -> usize {
        self.shape[3]
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from(v).expect("float cast"))
                .collect(),
        }
    }
}
