use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{ComplexField3D, GridDims, ScalarField3D};
use crate::error::{Error, Result};

/// Imaginary residual allowed when a Patterson map is taken back to real
/// space, relative to the real peak.
const PATTERSON_IMAG_TOL: f64 = 1e-9;

/// Planned separable 3D transform for one grid shape.
///
/// Forward is unnormalized; inverse carries the `1/(nx*ny*nz)` factor.
pub struct Fft3 {
    dims: GridDims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: GridDims) -> Self {
        let mut planner = FftPlanner::new();
        let plan = |planner: &mut FftPlanner<f64>, dir| {
            [
                planner.plan_fft(dims.nx, dir),
                planner.plan_fft(dims.ny, dir),
                planner.plan_fft(dims.nz, dir),
            ]
        };
        let forward = plan(&mut planner, FftDirection::Forward);
        let inverse = plan(&mut planner, FftDirection::Inverse);
        Fft3 {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn forward(&self, field: &ScalarField3D) -> Result<ComplexField3D> {
        self.check(field.dims())?;
        let mut data: Vec<Complex64> = field
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.transform(&mut data, &self.forward);
        ComplexField3D::from_vec(self.dims, data)
    }

    pub fn inverse(&self, field: &ComplexField3D) -> Result<ComplexField3D> {
        self.check(field.dims())?;
        let mut data = field.values().to_vec();
        self.inverse_in_place(&mut data);
        ComplexField3D::from_vec(self.dims, data)
    }

    /// Unnormalized forward transform of an x-fastest buffer, in place.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.dims.len());
        self.transform(data, &self.forward);
    }

    /// Normalized inverse transform of an x-fastest buffer, in place.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.dims.len());
        self.transform(data, &self.inverse);
        let norm = 1.0 / self.dims.len() as f64;
        data.iter_mut().for_each(|c| *c *= norm);
    }

    pub fn patterson(&self, density: &ScalarField3D) -> Result<ScalarField3D> {
        let mut spectrum = self.forward(density)?.into_values();
        for c in spectrum.iter_mut() {
            *c = Complex64::new(c.norm_sqr(), 0.0);
        }
        self.inverse_in_place(&mut spectrum);
        real_part_checked(self.dims, spectrum, PATTERSON_IMAG_TOL)
    }

    fn check(&self, dims: GridDims) -> Result<()> {
        if dims != self.dims {
            return Err(Error::Shape(format!(
                "transform planned for {:?}, field is {:?}",
                self.dims.as_array(),
                dims.as_array()
            )));
        }
        Ok(())
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let GridDims { nx, ny, nz } = self.dims;
        // x lines are contiguous
        plans[0].process(data);

        if ny > 1 {
            let mut lines = vec![Complex64::default(); data.len()];
            // gather: line index (i, k), element j
            for k in 0..nz {
                for j in 0..ny {
                    let src = nx * (j + ny * k);
                    for i in 0..nx {
                        lines[(i + nx * k) * ny + j] = data[src + i];
                    }
                }
            }
            plans[1].process(&mut lines);
            for k in 0..nz {
                for j in 0..ny {
                    let dst = nx * (j + ny * k);
                    for i in 0..nx {
                        data[dst + i] = lines[(i + nx * k) * ny + j];
                    }
                }
            }
        }

        if nz > 1 {
            let plane = nx * ny;
            let mut lines = vec![Complex64::default(); data.len()];
            for k in 0..nz {
                for p in 0..plane {
                    lines[p * nz + k] = data[p + plane * k];
                }
            }
            plans[2].process(&mut lines);
            for k in 0..nz {
                for p in 0..plane {
                    data[p + plane * k] = lines[p * nz + k];
                }
            }
        }
    }
}

fn real_part_checked(dims: GridDims, data: Vec<Complex64>, tol: f64) -> Result<ScalarField3D> {
    let max_re = data.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    let max_im = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    let limit = tol * max_re;
    if max_im > limit {
        return Err(Error::ImaginaryResidual {
            residual: max_im,
            limit,
        });
    }
    ScalarField3D::from_vec(dims, data.into_iter().map(|c| c.re).collect())
}

/// Unnormalized forward 3D DFT.
pub fn fft3(field: &ScalarField3D) -> Result<ComplexField3D> {
    Fft3::new(field.dims()).forward(field)
}

/// Inverse 3D DFT with the `1/N` normalization.
pub fn ifft3(field: &ComplexField3D) -> Result<ComplexField3D> {
    Fft3::new(field.dims()).inverse(field)
}
