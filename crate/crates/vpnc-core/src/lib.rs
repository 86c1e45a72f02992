//! Viewport-based neural codec for 360-degree images.
//!
//! The pipeline slices an equirectangular panorama into tangent-plane
//! viewports, transforms each viewport with a learned analysis network,
//! and codes the quantized latents with a range coder driven by a
//! conditional Gaussian entropy model. A cross-viewport transformer can
//! condition each viewport's entropy parameters on the latents of the
//! viewports coded before it, which removes redundancy that a per-image
//! model cannot see.
//!
//! Module map:
//! - [`geometry`]: sphere/ERP/viewport coordinate transforms and plans
//! - [`tensor`]: minimal reverse-mode autodiff engine and optimizer
//! - [`codec`]: analysis/synthesis transforms and entropy models
//! - [`vpct`]: cross-viewport attention masks and transformer blocks
//! - [`coding`]: range coder, table quantization, bitstream container
//! - [`pipeline`]: end-to-end compress/decompress orchestration
//! - [`harness`]: metrics, synthetic data, training, RD sweeps

pub mod codec;
pub mod coding;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod pipeline;
pub mod tensor;
pub mod vpct;

pub use codec::{CodecModel, ModelConfig, ModelKind};
pub use error::{Error, Result};
pub use geometry::{ErpImage, ExtractionPlan, FieldOfView, ViewportCenter, ViewportImage};
pub use tensor::{Graph, ParamStore, Tensor, Var};
