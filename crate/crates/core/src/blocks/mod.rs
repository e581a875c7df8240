//! The spatial mixer, the wave-based channel mixer and the residual block
//! that chains them.

mod block;
mod cmixer;
mod smixer;
mod wave;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use block::{Block, BlockSpec};
pub use cmixer::CMixer;
pub use smixer::SMixer;
pub use wave::{modulate, WaveAggregate};

use crate::error::{Error, Result};

/// How the spatial convolutions of a stage mix channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvType {
    Full,
    Depthwise,
}

impl ConvType {
    /// Group count for a `channels → channels` convolution.
    pub fn groups(self, channels: usize) -> usize {
        match self {
            ConvType::Full => 1,
            ConvType::Depthwise => channels,
        }
    }
}

/// Low-frequency branch shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelVariant {
    /// Two stacked 3×3 convolutions with dilation 2.
    Stacked3,
    /// One 5×5 convolution with dilation 2.
    Single5,
}

macro_rules! keyword_enum {
    ($ty:ident, $what:literal, $($variant:ident => $s:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $s),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

keyword_enum!(ConvType, "conv type", Full => "full", Depthwise => "depthwise");
keyword_enum!(KernelVariant, "kernel variant", Stacked3 => "stacked3", Single5 => "single5");
