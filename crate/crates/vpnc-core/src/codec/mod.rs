//! Learned transform-coding stack: analysis/synthesis transforms, entropy
//! models (static factorized, hyperprior, autoregressive context, causal
//! reference attention), and the cross-viewport conditioning module glue.

pub mod config;
pub mod context;
pub mod factorized;
pub mod gaussian;
pub mod model;
pub mod nn;
pub mod transforms;

pub use config::{lambda_index, ModelConfig, ModelKind, VpctConfig, LAMBDA_LADDER};
pub use factorized::MIN_LIKELIHOOD;
pub use gaussian::SIGMA_MIN;
pub use model::{CodecModel, EntropyInputs, FactorizedBranch, TrainForward};
