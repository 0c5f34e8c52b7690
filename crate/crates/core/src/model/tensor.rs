use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::grid::{GridDims, ScalarField3D};

/// Floating-point element type of the network. Training runs in `f32`;
/// gradient checks run in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Sum
    + Send
    + Sync
    + Debug
    + 'static
{
    /// `self * a + b`, fused when the target has FMA.
    #[inline(always)]
    fn madd(self, a: Self, b: Self) -> Self {
        if cfg!(target_feature = "fma") {
            self.mul_add(a, b)
        } else {
            self * a + b
        }
    }

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Multi-channel volume: channel-major, then x-fastest spatial layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4D<T> {
    pub channels: usize,
    pub dims: GridDims,
    pub values: Vec<T>,
}

impl<T: Real> Tensor4D<T> {
    pub fn zeros(channels: usize, dims: GridDims) -> Self {
        Tensor4D {
            channels,
            dims,
            values: vec![T::zero(); channels * dims.len()],
        }
    }

    pub fn from_vec(channels: usize, dims: GridDims, values: Vec<T>) -> Result<Self> {
        let expected = channels * dims.checked_len()?;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Tensor4D {
            channels,
            dims,
            values,
        })
    }

    pub fn from_field(field: &ScalarField3D) -> Self {
        Tensor4D {
            channels: 1,
            dims: field.dims(),
            values: field.values().iter().map(|&v| T::of(v)).collect(),
        }
    }

    /// First channel as a double-precision field.
    pub fn to_field(&self) -> ScalarField3D {
        let n = self.dims.len();
        ScalarField3D::from_vec(
            self.dims,
            self.values[..n].iter().map(|v| v.as_f64()).collect(),
        )
        .expect("channel length matches dims")
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.dims.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.dims.len();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn cast<U: Real>(&self) -> Tensor4D<U> {
        Tensor4D {
            channels: self.channels,
            dims: self.dims,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}
