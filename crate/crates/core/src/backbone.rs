//! Symbolic shape, stride and parameter tracing for backbone stems.
//!
//! Three stems are modelled:
//!
//! * `resnet_original`: 7x7/2 conv to 64 channels, then 3x3/2 max-pool.
//! * `root_resnet`: three stacked 3x3 convs (the first at stride 1) to 64
//!   channels, then the 3x3/2 max-pool.
//! * `new_resnet`: 7x7/1 conv to 16 channels, a stride-1 basic residual block
//!   at 16 channels and a stride-2 basic residual block at 32 channels.
//!
//! Spatial sizes use "same" padding, `out = ceil(in / stride)`. Parameter
//! counts include conv weights only.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    MaxPool,
    /// Two 3x3 convs, plus a 1x1 projection when stride or width changes.
    ResidualBasicBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: u32,
    pub stride: u32,
    pub in_channels: u32,
    pub out_channels: u32,
}

impl LayerSpec {
    pub const fn conv(kernel: u32, stride: u32, in_channels: u32, out_channels: u32) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride,
            in_channels,
            out_channels,
        }
    }

    pub const fn max_pool(kernel: u32, stride: u32, channels: u32) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            kernel,
            stride,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub const fn basic_block(stride: u32, in_channels: u32, out_channels: u32) -> Self {
        LayerSpec {
            kind: LayerKind::ResidualBasicBlock,
            kernel: 3,
            stride,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Config(format!(
                "stride {} not in {{1, 2}}",
                self.stride
            )));
        }
        if self.kernel < 1 || self.in_channels < 1 || self.out_channels < 1 {
            return Err(Error::Config("kernel and channels must be >= 1".into()));
        }
        if self.kind == LayerKind::MaxPool && self.in_channels != self.out_channels {
            return Err(Error::Config("max-pool cannot change channel count".into()));
        }
        Ok(())
    }

    /// Plain convolutions this layer is made of.
    pub fn expand(&self) -> Vec<LayerSpec> {
        match self.kind {
            LayerKind::Conv | LayerKind::MaxPool => vec![*self],
            LayerKind::ResidualBasicBlock => {
                let mut convs = vec![
                    LayerSpec::conv(3, self.stride, self.in_channels, self.out_channels),
                    LayerSpec::conv(3, 1, self.out_channels, self.out_channels),
                ];
                if self.stride != 1 || self.in_channels != self.out_channels {
                    convs.push(LayerSpec::conv(
                        1,
                        self.stride,
                        self.in_channels,
                        self.out_channels,
                    ));
                }
                convs
            }
        }
    }

    pub fn param_count(&self) -> u64 {
        match self.kind {
            LayerKind::MaxPool => 0,
            LayerKind::Conv => {
                let k = self.kernel as u64;
                k * k * self.in_channels as u64 * self.out_channels as u64
            }
            LayerKind::ResidualBasicBlock => self.expand().iter().map(|l| l.param_count()).sum(),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::ResidualBasicBlock => "basic_block",
        };
        write!(
            f,
            "{kind} k{} s{} c{}->{}",
            self.kernel, self.stride, self.in_channels, self.out_channels
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StemName {
    ResnetOriginal,
    RootResnet,
    NewResnet,
}

impl StemName {
    pub const ALL: [StemName; 3] = [
        StemName::ResnetOriginal,
        StemName::RootResnet,
        StemName::NewResnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StemName::ResnetOriginal => "resnet_original",
            StemName::RootResnet => "root_resnet",
            StemName::NewResnet => "new_resnet",
        }
    }
}

impl fmt::Display for StemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        StemName::ALL
            .into_iter()
            .find(|n| n.as_str() == norm)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StemVariant {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl StemVariant {
    pub fn custom(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        if layers
            .windows(2)
            .any(|w| w[0].out_channels != w[1].in_channels)
        {
            return Err(Error::Config("channel counts do not chain".into()));
        }
        Ok(StemVariant {
            name: name.into(),
            layers,
        })
    }

    pub fn param_count(&self) -> u64 {
        param_count(self)
    }
}

pub fn build_stem(name: StemName) -> StemVariant {
    let layers = match name {
        StemName::ResnetOriginal => {
            vec![LayerSpec::conv(7, 2, 3, 64), LayerSpec::max_pool(3, 2, 64)]
        }
        StemName::RootResnet => vec![
            LayerSpec::conv(3, 1, 3, 64),
            LayerSpec::conv(3, 1, 64, 64),
            LayerSpec::conv(3, 1, 64, 64),
            LayerSpec::max_pool(3, 2, 64),
        ],
        StemName::NewResnet => vec![
            LayerSpec::conv(7, 1, 3, 16),
            LayerSpec::basic_block(1, 16, 16),
            LayerSpec::basic_block(2, 16, 32),
        ],
    };
    StemVariant {
        name: name.to_string(),
        layers,
    }
}

/// Look a stem up by its textual name.
pub fn build_stem_named(name: &str) -> Result<StemVariant> {
    Ok(build_stem(name.parse()?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    pub layer: LayerSpec,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub cumulative_stride: u32,
}

/// Output shape after every layer of the stem.
pub fn trace_shapes(stem: &StemVariant, input_h: u32, input_w: u32) -> Vec<ShapeTrace> {
    let (mut h, mut w, mut stride) = (input_h, input_w, 1u32);
    stem.layers
        .iter()
        .map(|&layer| {
            h = h.div_ceil(layer.stride);
            w = w.div_ceil(layer.stride);
            stride *= layer.stride;
            ShapeTrace {
                layer,
                height: h,
                width: w,
                channels: layer.out_channels,
                cumulative_stride: stride,
            }
        })
        .collect()
}

pub fn param_count(stem: &StemVariant) -> u64 {
    stem.layers.iter().map(LayerSpec::param_count).sum()
}
