use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEM_KERNEL: usize = 5;
pub const BODY_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub channels: usize,
    pub kernel: usize,
    /// Two convolutions with a skip connection instead of one convolution.
    pub residual: bool,
    pub batch_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub channels: usize,
}

/// Fully convolutional network: a stem convolution, a body of blocks, and
/// one pointwise output convolution per head, all reading the shared trunk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub dim: usize,
    pub input_channels: usize,
    pub stem_kernel: usize,
    pub stem_channels: usize,
    pub stem_batch_norm: bool,
    pub body: Vec<BlockSpec>,
    pub heads: Vec<HeadSpec>,
}

impl NetworkSpec {
    fn build(dim: usize, input_channels: usize, channels: usize, blocks: usize, residual: bool, heads: Vec<HeadSpec>) -> Self {
        Self {
            dim,
            input_channels,
            stem_kernel: STEM_KERNEL,
            stem_channels: channels,
            stem_batch_norm: true,
            body: (0..blocks)
                .map(|_| BlockSpec {
                    channels,
                    kernel: BODY_KERNEL,
                    residual,
                    batch_norm: true,
                })
                .collect(),
            heads,
        }
    }

    /// 64 residual blocks of 120 channels.
    pub fn reference_1d(input_channels: usize, heads: Vec<HeadSpec>) -> Self {
        Self::build(1, input_channels, 120, 64, true, heads)
    }

    /// 4 residual blocks of 16 channels.
    pub fn tiny_1d(input_channels: usize, heads: Vec<HeadSpec>) -> Self {
        Self::build(1, input_channels, 16, 4, true, heads)
    }

    /// 20 plain convolution layers (stem included) of 200 channels.
    pub fn reference_2d(input_channels: usize, heads: Vec<HeadSpec>) -> Self {
        Self::build(2, input_channels, 200, 19, false, heads)
    }

    /// 6 plain convolution layers (stem included) of 24 channels.
    pub fn tiny_2d(input_channels: usize, heads: Vec<HeadSpec>) -> Self {
        Self::build(2, input_channels, 24, 5, false, heads)
    }

    /// Named presets: `reference` or `tiny`, for the given dimension.
    pub fn preset(name: &str, dim: usize, input_channels: usize, heads: Vec<HeadSpec>) -> Result<Self> {
        match (name, dim) {
            ("reference", 1) => Ok(Self::reference_1d(input_channels, heads)),
            ("tiny", 1) => Ok(Self::tiny_1d(input_channels, heads)),
            ("reference", 2) => Ok(Self::reference_2d(input_channels, heads)),
            ("tiny", 2) => Ok(Self::tiny_2d(input_channels, heads)),
            _ => Err(Error::Config(format!("unknown network preset {name:?} for dimension {dim}"))),
        }
    }

    pub fn trunk_channels(&self) -> usize {
        self.body.last().map_or(self.stem_channels, |b| b.channels)
    }

    pub fn output_channels(&self) -> usize {
        self.heads.iter().map(|h| h.channels).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dimension must be 1 or 2, got {}", self.dim));
        }
        if self.input_channels == 0 || self.stem_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.stem_kernel != STEM_KERNEL {
            return bad(format!("stem kernel must be {STEM_KERNEL}, got {}", self.stem_kernel));
        }
        let mut c = self.stem_channels;
        for (i, b) in self.body.iter().enumerate() {
            if b.kernel != BODY_KERNEL {
                return bad(format!("block {i}: kernel must be {BODY_KERNEL}, got {}", b.kernel));
            }
            if b.channels == 0 {
                return bad(format!("block {i}: zero channels"));
            }
            if b.residual && b.channels != c {
                return bad(format!(
                    "block {i}: residual block maps {c} to {} channels",
                    b.channels
                ));
            }
            c = b.channels;
        }
        if self.heads.is_empty() {
            return bad("at least one head is required".into());
        }
        for (i, h) in self.heads.iter().enumerate() {
            if h.channels == 0 || h.name.is_empty() {
                return bad(format!("head {i} needs a name and at least one channel"));
            }
            if self.heads[..i].iter().any(|o| o.name == h.name) {
                return bad(format!("duplicate head name {:?}", h.name));
            }
        }
        Ok(())
    }
}
