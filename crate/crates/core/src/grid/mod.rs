//! Dense 3D voxel fields, the discrete Fourier transform over them, and the
//! Patterson (circular autocorrelation) map.
//!
//! Coordinates are in pixel units: voxel `(i, j, k)` covers the half-open
//! cube `[i, i+1) x [j, j+1) x [k, k+1)`, so the center of an `N^3` box is
//! `(N/2, N/2, N/2)`. Values are stored with `x` varying fastest, then `y`,
//! then `z`.

mod fft;
pub mod pgrd;
mod vec3;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fft::{fft3, ifft3, Fft3};
pub use vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        let dims = GridDims { nx, ny, nz };
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidDims(dims.as_array()));
        }
        dims.checked_len()?;
        Ok(dims)
    }

    pub fn cubic(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn checked_len(&self) -> Result<usize> {
        self.nx
            .checked_mul(self.ny)
            .and_then(|v| v.checked_mul(self.nz))
            .ok_or(Error::DimensionOverflow(self.as_array()))
    }

    /// Voxel count. Dims built through [`GridDims::new`] never overflow.
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    /// Index of `(i, j, k)` after wrapping each axis periodically.
    #[inline]
    pub fn wrapped_index(&self, i: i64, j: i64, k: i64) -> usize {
        let i = i.rem_euclid(self.nx as i64) as usize;
        let j = j.rem_euclid(self.ny as i64) as usize;
        let k = k.rem_euclid(self.nz as i64) as usize;
        self.index(i, j, k)
    }

    /// Geometric center of the box in pixel units.
    pub fn center(&self) -> Vec3 {
        Vec3::new(
            self.nx as f64 / 2.0,
            self.ny as f64 / 2.0,
            self.nz as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3D {
    dims: GridDims,
    values: Vec<f64>,
}

impl ScalarField3D {
    pub fn zeros(dims: GridDims) -> Self {
        ScalarField3D {
            dims,
            values: vec![0.0; dims.len()],
        }
    }

    pub fn from_vec(dims: GridDims, values: Vec<f64>) -> Result<Self> {
        let expected = dims.checked_len()?;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(ScalarField3D { dims, values })
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.len());
        for k in 0..dims.nz {
            for j in 0..dims.ny {
                for i in 0..dims.nx {
                    values.push(f(i, j, k));
                }
            }
        }
        ScalarField3D { dims, values }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.dims.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.dims.index(i, j, k);
        self.values[idx] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &ScalarField3D) -> Result<()> {
        self.ensure_same_dims(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn ensure_same_dims(&self, other: &ScalarField3D) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.dims.as_array(),
                other.dims.as_array()
            )));
        }
        Ok(())
    }

    /// Largest elementwise difference relative to the larger of the two
    /// fields' peak magnitudes.
    pub fn max_relative_diff(&self, other: &ScalarField3D) -> f64 {
        let scale = self
            .values
            .iter()
            .chain(&other.values)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField3D {
    dims: GridDims,
    values: Vec<Complex64>,
}

impl ComplexField3D {
    pub fn zeros(dims: GridDims) -> Self {
        ComplexField3D {
            dims,
            values: vec![Complex64::new(0.0, 0.0); dims.len()],
        }
    }

    pub fn from_vec(dims: GridDims, values: Vec<Complex64>) -> Result<Self> {
        let expected = dims.checked_len()?;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(ComplexField3D { dims, values })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }
}

/// Circular autocorrelation of `density`, computed as the inverse transform
/// of its squared Fourier magnitudes.
///
/// Fails if the discarded imaginary part exceeds `1e-9` of the real peak,
/// which can only happen through a broken transform.
pub fn patterson(density: &ScalarField3D) -> Result<ScalarField3D> {
    Fft3::new(density.dims()).patterson(density)
}

/// Toroidal shift: the value at `v` moves to `v + by (mod dims)`.
pub fn circular_shift(field: &ScalarField3D, by: [i64; 3]) -> ScalarField3D {
    let d = field.dims();
    let mut out = ScalarField3D::zeros(d);
    for k in 0..d.nz {
        for j in 0..d.ny {
            for i in 0..d.nx {
                let dst = d.wrapped_index(i as i64 + by[0], j as i64 + by[1], k as i64 + by[2]);
                out.values[dst] = field.values[d.index(i, j, k)];
            }
        }
    }
    out
}

/// Point inversion through the grid origin: the value at `v` moves to
/// `-v (mod dims)`.
pub fn centro_invert_field(field: &ScalarField3D) -> ScalarField3D {
    let d = field.dims();
    let mut out = ScalarField3D::zeros(d);
    for k in 0..d.nz {
        for j in 0..d.ny {
            for i in 0..d.nx {
                let dst = d.wrapped_index(-(i as i64), -(j as i64), -(k as i64));
                out.values[dst] = field.values[d.index(i, j, k)];
            }
        }
    }
    out
}
