//! Entropy coding: range coder, quantized symbol distributions, and the
//! compressed-file container.
//!
//! Everything here is exact integer arithmetic; given identical frequency
//! tables, encode and decode are bit-exact inverses on every platform.

mod bitstream;
mod dist;
mod range;

pub use bitstream::{Bitstream, BitstreamHeader, ViewportPayload, LAMBDA_CUSTOM, MAGIC, VERSION};
pub use dist::{gaussian_box_prob, normal_cdf, CodingDistribution, SymbolChecksum, MAX_SYMBOL};
pub use range::{RangeDecoder, RangeEncoder, TOTAL};
