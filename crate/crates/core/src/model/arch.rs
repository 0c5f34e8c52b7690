use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// "Same"-padded 3D cross-correlation with an odd cubic kernel.
    Conv3d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        activation: Activation,
    },
    /// 2x2x2 max pooling, stride 2.
    Maxpool2,
    /// Nearest-neighbor 2x upsampling along each axis.
    Upsample2,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: usize, activation: Activation) -> Self {
        LayerSpec::Conv3d {
            in_channels,
            out_channels,
            kernel_size,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Encoder/decoder with a single pooling level: two 5^3 convs, pool,
    /// `mid` 7^3 convs, upsample, a 5^3 conv and a 5^3 tanh head.
    pub fn pool_stack(name: &str, channels: usize, mid: usize) -> Self {
        use Activation::*;
        let mut layers = vec![
            LayerSpec::conv(1, channels, 5, Relu),
            LayerSpec::conv(channels, channels, 5, Relu),
            LayerSpec::Maxpool2,
        ];
        layers.extend((0..mid).map(|_| LayerSpec::conv(channels, channels, 7, Relu)));
        layers.extend([
            LayerSpec::Upsample2,
            LayerSpec::conv(channels, channels, 5, Relu),
            LayerSpec::conv(channels, 1, 5, Tanh),
        ]);
        ArchSpec {
            name: name.to_string(),
            layers,
        }
    }

    /// 20 channels, eight 7^3 convs in the pooled stage.
    pub fn paper() -> Self {
        Self::pool_stack("paper", 20, 8)
    }

    /// 8 channels, four 7^3 convs in the pooled stage.
    pub fn desk() -> Self {
        Self::pool_stack("desk", 8, 4)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn convs(&self) -> impl Iterator<Item = (usize, usize, usize, Activation)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv3d {
                in_channels,
                out_channels,
                kernel_size,
                activation,
            } => Some((in_channels, out_channels, kernel_size, activation)),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("architecture {}: {msg}", self.name)));
        let mut channels = 1;
        let mut depth = 0i64;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv3d {
                    in_channels,
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    if in_channels != channels {
                        return fail(format!(
                            "layer {i} expects {in_channels} channels, receives {channels}"
                        ));
                    }
                    if kernel_size % 2 == 0 {
                        return fail(format!("layer {i} kernel size {kernel_size} is even"));
                    }
                    if out_channels == 0 {
                        return fail(format!("layer {i} has no output channels"));
                    }
                    channels = out_channels;
                }
                LayerSpec::Maxpool2 => depth += 1,
                LayerSpec::Upsample2 => {
                    depth -= 1;
                    if depth < 0 {
                        return fail(format!("layer {i} upsamples above input resolution"));
                    }
                }
            }
        }
        if depth != 0 {
            return fail("pooling and upsampling do not balance".into());
        }
        if channels != 1 {
            return fail(format!("network ends with {channels} channels"));
        }
        if self.convs().next().is_none() {
            return fail("no convolution layers".into());
        }
        Ok(())
    }

    /// Spatial divisor the input dims must respect.
    pub fn required_divisor(&self) -> usize {
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for l in &self.layers {
            match l {
                LayerSpec::Maxpool2 => {
                    depth += 1;
                    max_depth = max_depth.max(depth);
                }
                LayerSpec::Upsample2 => depth = depth.saturating_sub(1),
                _ => {}
            }
        }
        1 << max_depth
    }

    pub fn check_input(&self, dims: GridDims) -> Result<()> {
        let d = self.required_divisor();
        if dims.as_array().iter().any(|n| n % d != 0) {
            return Err(Error::Shape(format!(
                "input dims {:?} not divisible by {d}",
                dims.as_array()
            )));
        }
        Ok(())
    }

    /// Kernel weights plus biases.
    pub fn param_count(&self) -> usize {
        self.convs()
            .map(|(ic, oc, k, _)| oc * ic * k * k * k + oc)
            .sum()
    }

    /// One-sided reach, in input voxels, of an output voxel: each conv adds
    /// its half-width `(k-1)/2` times the pooling factor it runs at.
    pub fn receptive_field(&self) -> usize {
        let mut factor = 1usize;
        let mut reach = 0usize;
        for l in &self.layers {
            match *l {
                LayerSpec::Conv3d { kernel_size, .. } => reach += factor * (kernel_size - 1) / 2,
                LayerSpec::Maxpool2 => factor *= 2,
                LayerSpec::Upsample2 => factor /= 2,
            }
        }
        reach
    }
}
