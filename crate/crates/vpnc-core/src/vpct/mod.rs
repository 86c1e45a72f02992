//! Cross-viewport conditioning: causal masks and the attention module that
//! turns already-coded viewports into entropy-model context.

pub mod masks;
mod module;

pub use masks::{cross_allowed, cross_mask_tensor, intra_allowed, intra_mask_tensor, MASK_SENTINEL};
pub use module::{bind_vpct, register_vpct, vpct_forward, VpctParams};
