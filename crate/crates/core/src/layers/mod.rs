//! Squeeze-and-excitation, feature decomposition and the patch embeddings.

mod fd;
mod patch_embed;
mod se;

pub use fd::FeatureDecompose;
pub use patch_embed::{EmbedVariant, PatchEmbed};
pub use se::SqueezeExcite;
