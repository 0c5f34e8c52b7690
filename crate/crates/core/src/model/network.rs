use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{Activation, ArchSpec, LayerSpec};
use super::conv::{self, Geometry};
use super::tensor::{Real, Tensor4D};
use crate::error::{Error, Result};
use crate::grid::{GridDims, ScalarField3D};

/// Kernel `[out][in][k][k][k]` and bias `[out]` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvWeights<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        ConvWeights {
            in_channels,
            out_channels,
            kernel_size,
            kernel: vec![T::zero(); out_channels * in_channels * kernel_size.pow(3)],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel_size.pow(3)
    }

    pub fn kernel_shape(&self) -> [usize; 5] {
        let k = self.kernel_size;
        [self.out_channels, self.in_channels, k, k, k]
    }
}

/// One entry per convolution layer of the architecture, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T> {
    pub convs: Vec<ConvWeights<T>>,
}

impl<T: Real> NetworkWeights<T> {
    pub fn zeros(arch: &ArchSpec) -> Self {
        NetworkWeights {
            convs: arch
                .convs()
                .map(|(ic, oc, k, _)| ConvWeights::zeros(ic, oc, k))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.kernel.len() + c.bias.len()).sum()
    }

    pub fn matches(&self, arch: &ArchSpec) -> bool {
        self.convs.len() == arch.convs().count()
            && self.convs.iter().zip(arch.convs()).all(|(w, (ic, oc, k, _))| {
                w.in_channels == ic
                    && w.out_channels == oc
                    && w.kernel_size == k
                    && w.kernel.len() == oc * ic * k * k * k
                    && w.bias.len() == oc
            })
    }

    fn check(&self, arch: &ArchSpec) -> Result<()> {
        if !self.matches(arch) {
            return Err(Error::Shape(format!(
                "weights do not match architecture {}",
                arch.name
            )));
        }
        Ok(())
    }

    /// Every parameter, kernels before biases within each layer.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.convs.iter().flat_map(|c| c.kernel.iter().chain(&c.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.convs
            .iter_mut()
            .flat_map(|c| c.kernel.iter_mut().chain(c.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.params_mut().for_each(|a| *a *= s);
    }

    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            convs: self
                .convs
                .iter()
                .map(|c| ConvWeights {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel_size: c.kernel_size,
                    kernel: c.kernel.iter().map(|v| U::of(v.as_f64())).collect(),
                    bias: c.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// He-normal kernels, `N(0, sqrt(2 / fan_in))` with `fan_in = in * k^3`,
/// and zero biases.
pub fn init_weights<T: Real>(arch: &ArchSpec, seed: u64) -> NetworkWeights<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = NetworkWeights::zeros(arch);
    for c in &mut w.convs {
        let fan_in = (c.in_channels * c.taps()) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        c.kernel
            .iter_mut()
            .for_each(|v| *v = T::of(normal.sample(&mut rng)));
    }
    w
}

fn activate<T: Real>(values: &mut [T], act: Activation) {
    match act {
        Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(T::zero())),
        Activation::Tanh => values.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::None => {}
    }
}

/// Multiply `grad` in place by the activation derivative, expressed through
/// the activation output `y`.
fn activation_backward<T: Real>(grad: &mut [T], y: &[T], act: Activation) {
    match act {
        Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, &y)| {
            if y <= T::zero() {
                *g = T::zero();
            }
        }),
        Activation::Tanh => grad
            .iter_mut()
            .zip(y)
            .for_each(|(g, &y)| *g *= T::one() - y * y),
        Activation::None => {}
    }
}

fn conv_forward<T: Real>(x: &Tensor4D<T>, w: &ConvWeights<T>, act: Activation) -> Result<Tensor4D<T>> {
    if x.channels != w.in_channels {
        return Err(Error::Shape(format!(
            "convolution expects {} channels, got {}",
            w.in_channels, x.channels
        )));
    }
    let geom = Geometry::new(x.dims, w.kernel_size);
    let packed = conv::pack(&w.kernel, w.out_channels, w.in_channels, w.taps());
    let padded = geom.pad_input(&x.values, x.channels);
    let ext = conv::correlate(&geom, &padded, x.channels, &packed, w.out_channels, Some(&w.bias));
    let mut y = Tensor4D::zeros(w.out_channels, x.dims);
    geom.gather_ext(&ext, w.out_channels, &mut y.values);
    activate(&mut y.values, act);
    Ok(y)
}

fn check_input(arch: &ArchSpec, dims: GridDims) -> Result<()> {
    arch.validate()?;
    arch.check_input(dims)
}

/// Run the network and keep every intermediate activation: entry `i` is
/// the input of layer `i`, the last entry is the network output.
pub fn forward_trace<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    input: Tensor4D<T>,
) -> Result<Vec<Tensor4D<T>>> {
    check_input(arch, input.dims)?;
    weights.check(arch)?;
    let mut acts = Vec::with_capacity(arch.layers.len() + 1);
    acts.push(input);
    let mut convs = weights.convs.iter();
    for layer in &arch.layers {
        let x = acts.last().expect("input pushed");
        let y = match *layer {
            LayerSpec::Conv3d { activation, .. } => {
                conv_forward(x, convs.next().expect("checked count"), activation)?
            }
            LayerSpec::Maxpool2 => Tensor4D {
                channels: x.channels,
                dims: conv::half(x.dims),
                values: conv::maxpool_forward(&x.values, x.channels, x.dims)?,
            },
            LayerSpec::Upsample2 => Tensor4D {
                channels: x.channels,
                dims: conv::double(x.dims),
                values: conv::upsample_forward(&x.values, x.channels, x.dims),
            },
        };
        acts.push(y);
    }
    Ok(acts)
}

pub fn forward_tensor<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    input: Tensor4D<T>,
) -> Result<Tensor4D<T>> {
    Ok(forward_trace(arch, weights, input)?.pop().expect("non-empty trace"))
}

/// Forward pass on a single-channel volume.
pub fn forward<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    input: &ScalarField3D,
) -> Result<ScalarField3D> {
    Ok(forward_tensor(arch, weights, Tensor4D::from_field(input))?.to_field())
}

/// Mean squared error over all voxels.
pub fn mse<T: Real>(output: &[T], target: &[T]) -> f64 {
    let s: f64 = output
        .iter()
        .zip(target)
        .map(|(&o, &t)| {
            let d = (o - t).as_f64();
            d * d
        })
        .sum();
    s / output.len() as f64
}

/// Loss and parameter gradients for one example. The loss is
/// `loss_scale` times the voxelwise MSE.
pub fn backward_scaled<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    input: &ScalarField3D,
    target: &ScalarField3D,
    loss_scale: f64,
) -> Result<(f64, NetworkWeights<T>)> {
    if input.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "input dims {:?} differ from target dims {:?}",
            input.dims().as_array(),
            target.dims().as_array()
        )));
    }
    let tgt: Vec<T> = target.values().iter().map(|&v| T::of(v)).collect();
    loss_and_gradients(arch, weights, Tensor4D::from_field(input), &tgt, loss_scale)
}

pub(crate) fn loss_and_gradients<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    input: Tensor4D<T>,
    tgt: &[T],
    loss_scale: f64,
) -> Result<(f64, NetworkWeights<T>)> {
    let acts = forward_trace(arch, weights, input)?;
    let out = acts.last().expect("non-empty trace");
    if out.values.len() != tgt.len() {
        return Err(Error::LengthMismatch {
            expected: out.values.len(),
            actual: tgt.len(),
        });
    }
    let loss = loss_scale * mse(&out.values, tgt);

    let coef = T::of(2.0 * loss_scale / out.values.len() as f64);
    let mut grad: Vec<T> = out.values.iter().zip(tgt).map(|(&o, &t)| coef * (o - t)).collect();
    let mut grads = NetworkWeights::zeros(arch);
    let mut conv_idx = weights.convs.len();

    for (l, layer) in arch.layers.iter().enumerate().rev() {
        let x = &acts[l];
        let y = &acts[l + 1];
        match *layer {
            LayerSpec::Conv3d { activation, .. } => {
                conv_idx -= 1;
                let w = &weights.convs[conv_idx];
                activation_backward(&mut grad, &y.values, activation);
                let geom = Geometry::new(x.dims, w.kernel_size);
                let padded = geom.pad_input(&x.values, x.channels);
                let gext = geom.to_ext(&grad, w.out_channels);
                let gw = &mut grads.convs[conv_idx];
                gw.kernel = conv::kernel_gradient(&geom, &padded, x.channels, &gext, w.out_channels);
                let n = x.dims.len();
                for (o, b) in gw.bias.iter_mut().enumerate() {
                    *b = grad[o * n..(o + 1) * n].iter().copied().sum();
                }
                if l == 0 {
                    break;
                }
                let flipped = conv::pack_transposed(&w.kernel, w.out_channels, w.in_channels, w.taps());
                let gpad = geom.pad_input(&grad, w.out_channels);
                let ext = conv::correlate(&geom, &gpad, w.out_channels, &flipped, w.in_channels, None);
                let mut dx = vec![T::zero(); x.values.len()];
                geom.gather_ext(&ext, w.in_channels, &mut dx);
                grad = dx;
            }
            LayerSpec::Maxpool2 => {
                grad = conv::maxpool_backward(&x.values, &grad, x.channels, x.dims);
            }
            LayerSpec::Upsample2 => {
                grad = conv::upsample_backward(&grad, x.channels, x.dims);
            }
        }
    }
    Ok((loss, grads))
}

/// Voxelwise MSE and its gradient with respect to every parameter.
pub fn backward<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    input: &ScalarField3D,
    target: &ScalarField3D,
) -> Result<(f64, NetworkWeights<T>)> {
    backward_scaled(arch, weights, input, target, 1.0)
}

/// Forward pass only; alias kept for the inference path.
pub fn infer<T: Real>(
    arch: &ArchSpec,
    weights: &NetworkWeights<T>,
    patterson_input: &ScalarField3D,
) -> Result<ScalarField3D> {
    forward(arch, weights, patterson_input)
}
