//! Shared fixtures for the codec benchmarks. The crate exists only for its
//! bench targets; see `benches/codec.rs`.

use vpnc_core::harness::synthetic_erp;
use vpnc_core::ErpImage;

/// Deterministic panorama sized for the benchmark viewport plan.
pub fn bench_erp() -> ErpImage {
    synthetic_erp(512, 256, 42)
}
