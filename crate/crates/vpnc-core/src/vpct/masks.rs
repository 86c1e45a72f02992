//! Causal attention masks for the cross-viewport entropy module.
//!
//! Latent positions are raster-ordered tokens. Within a viewport a query
//! may attend to keys at or before its own index; across viewports a query
//! additionally sees every token of all previously coded viewports. The
//! current viewport's token stream is shifted right by one position (a
//! learned start token leads), so "key index k equals query index q" never
//! exposes the symbol being predicted.

use crate::tensor::{Scalar, Tensor};

/// Additive mask value for disallowed entries. Large enough that the
/// softmax weight underflows to exactly 0.0 in both f32 and f64, which is
/// what makes coded positions bitwise independent of future buffer slots.
pub const MASK_SENTINEL: f64 = -1e9;

/// Self-attention visibility within one viewport's shifted stream.
pub fn intra_allowed(q: usize, k: usize) -> bool {
    k <= q
}

/// Visibility of memory token `k` from query `q` when `prev_viewports`
/// fully coded viewports precede the current one. Memory is the
/// concatenation [viewport 0 tokens, ..., current shifted stream], so the
/// current block starts at column prev_viewports * tokens_per_viewport.
pub fn cross_allowed(q: usize, k: usize, tokens_per_viewport: usize, prev_viewports: usize) -> bool {
    k <= q + prev_viewports * tokens_per_viewport
}

/// (n, n) additive mask over one viewport's stream.
pub fn intra_mask_tensor<S: Scalar>(n: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(n * n);
    for q in 0..n {
        for k in 0..n {
            data.push(S::from_f64(if intra_allowed(q, k) { 0.0 } else { MASK_SENTINEL }));
        }
    }
    Tensor::from_vec(vec![n, n], data)
}

/// (n, (prev + 1) * n) additive mask over the cross-viewport memory.
pub fn cross_mask_tensor<S: Scalar>(n: usize, prev_viewports: usize) -> Tensor<S> {
    let cols = (prev_viewports + 1) * n;
    let mut data = Vec::with_capacity(n * cols);
    for q in 0..n {
        for k in 0..cols {
            data.push(S::from_f64(if cross_allowed(q, k, n, prev_viewports) {
                0.0
            } else {
                MASK_SENTINEL
            }));
        }
    }
    Tensor::from_vec(vec![n, cols], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_with_no_memory_equals_intra() {
        for n in 1..12 {
            let a: Tensor<f64> = intra_mask_tensor(n);
            let b: Tensor<f64> = cross_mask_tensor(n, 0);
            assert_eq!(a, b, "n = {n}");
        }
    }

    #[test]
    fn every_row_keeps_at_least_one_key() {
        for n in 1..10 {
            for prev in 0..4 {
                for q in 0..n {
                    let any = (0..(prev + 1) * n).any(|k| cross_allowed(q, k, n, prev));
                    assert!(any, "empty row q={q} n={n} prev={prev}");
                }
            }
        }
    }

    #[test]
    fn frozen_small_cross_mask() {
        // n = 2, one previous viewport: memory columns are [p0, p1, c0, c1].
        // Query 0 sees both previous tokens and the start-of-stream slot c0;
        // query 1 sees everything.
        let m: Tensor<f64> = cross_mask_tensor(2, 1);
        let ok = 0.0;
        let no = MASK_SENTINEL;
        assert_eq!(m.data(), &[ok, ok, ok, no, ok, ok, ok, ok]);
    }

    #[test]
    fn diagonal_is_visible_intra() {
        for n in [1usize, 3, 7] {
            for q in 0..n {
                assert!(intra_allowed(q, q));
                if q + 1 < n {
                    assert!(!intra_allowed(q, q + 1));
                }
            }
        }
    }

    #[test]
    fn previous_viewports_are_fully_visible() {
        let (n, prev) = (4, 2);
        for q in 0..n {
            for k in 0..prev * n {
                assert!(cross_allowed(q, k, n, prev), "q={q} k={k}");
            }
        }
    }
}
