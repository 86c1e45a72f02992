//! Causal spatial conditioning within a viewport: a masked convolution
//! over already-decoded neighbors and a strictly-causal single-head
//! attention that lets each position query decoded positions directly.

use super::nn::{register_linear, LinearLayer, ParamBindings};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::vpct::MASK_SENTINEL;

/// Kernel footprint of the causal context convolution.
pub const CTX_KERNEL: usize = 5;

/// 5x5 raster-causal mask: rows above the center fully visible, the center
/// row visible strictly left of center, center and beyond excluded. At the
/// first latent position the convolution therefore reduces to its bias.
pub fn causal_conv_mask<S: Scalar>() -> Tensor<S> {
    let k = CTX_KERNEL;
    let c = k / 2;
    let mut data = Vec::with_capacity(k * k);
    for ky in 0..k {
        for kx in 0..k {
            let visible = ky < c || (ky == c && kx < c);
            data.push(S::from_f64(if visible { 1.0 } else { 0.0 }));
        }
    }
    Tensor::from_vec(vec![k, k], data)
}

pub fn register_context(store: &mut ParamStore, out_c: usize, in_c: usize, seed: u64) {
    // Fan-in counts only the 12 visible taps.
    store.register_uniform_fanin(
        "ctx.w",
        vec![out_c, in_c, CTX_KERNEL, CTX_KERNEL],
        in_c * (CTX_KERNEL * CTX_KERNEL / 2),
        seed,
    );
    store.register_zeros("ctx.b", vec![out_c]);
}

pub struct ContextLayer {
    w_masked: Var,
    b: Var,
}

impl ContextLayer {
    pub fn bind<S: Scalar>(b: &mut ParamBindings, g: &mut Graph<S>, store: &ParamStore) -> Self {
        let w = b.bind(g, store, "ctx.w");
        let mask = g.input(causal_conv_mask::<S>());
        let w_masked = g.mul(w, mask);
        let bias = b.bind(g, store, "ctx.b");
        ContextLayer { w_masked, b: bias }
    }

    /// (latent_channels, h, w) -> (context_channels, h, w).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, y_hat: Var) -> Var {
        g.conv2d(y_hat, self.w_masked, self.b, 1, CTX_KERNEL / 2)
    }
}

pub fn register_reference(
    store: &mut ParamStore,
    ctx_channels: usize,
    latent_channels: usize,
    ref_dim: usize,
    seed: u64,
) {
    register_linear(store, "ref.q", ctx_channels, ref_dim, seed);
    register_linear(store, "ref.k", latent_channels, ref_dim, seed);
    register_linear(store, "ref.v", latent_channels, ref_dim, seed);
    store.register_uniform("ref.default", vec![1, ref_dim], 0.1, seed);
}

/// Additive (n, n) mask allowing keys strictly before the query. Row 0 has
/// no legal key; its first entry is left open purely so the softmax stays
/// finite, and the blend column replaces that row with the learned default.
pub fn reference_mask<S: Scalar>(n: usize) -> (Tensor<S>, Tensor<S>) {
    let mut mask = Vec::with_capacity(n * n);
    for q in 0..n {
        for k in 0..n {
            let open = k < q || (q == 0 && k == 0);
            mask.push(S::from_f64(if open { 0.0 } else { MASK_SENTINEL }));
        }
    }
    let mut blend = Vec::with_capacity(n);
    for q in 0..n {
        blend.push(S::from_f64(if q == 0 { 0.0 } else { 1.0 }));
    }
    (Tensor::from_vec(vec![n, n], mask), Tensor::from_vec(vec![n, 1], blend))
}

pub struct ReferenceLayer {
    q: LinearLayer,
    k: LinearLayer,
    v: LinearLayer,
    default: Var,
}

impl ReferenceLayer {
    pub fn bind<S: Scalar>(b: &mut ParamBindings, g: &mut Graph<S>, store: &ParamStore) -> Self {
        ReferenceLayer {
            q: LinearLayer::bind(b, g, store, "ref.q"),
            k: LinearLayer::bind(b, g, store, "ref.k"),
            v: LinearLayer::bind(b, g, store, "ref.v"),
            default: b.bind(g, store, "ref.default"),
        }
    }

    /// ctx_tokens (n, ctx_channels), latent_tokens (n, latent_channels) ->
    /// (n, ref_dim). Queries come from the causal context feature, keys and
    /// values from the latents, restricted to strictly earlier positions.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ctx_tokens: Var,
        latent_tokens: Var,
    ) -> Var {
        let n = g.shape(ctx_tokens)[0];
        let dim = g.shape(self.default)[1] as f64;
        let (mask_t, blend_t) = reference_mask::<S>(n);
        let mask = g.input(mask_t);
        let blend = g.input(blend_t);
        let q = self.q.forward(g, ctx_tokens);
        let k = self.k.forward(g, latent_tokens);
        let v = self.v.forward(g, latent_tokens);
        let kt = g.permute(k, vec![1, 0]);
        let scores = g.matmul(q, kt);
        let scores = g.mul_scalar(scores, 1.0 / dim.sqrt());
        let scores = g.add(scores, mask);
        let attn = g.softmax_lastdim(scores);
        let gathered = g.matmul(attn, v);
        // Row 0 saw no decodable history; hand it the learned default.
        let kept = g.mul(gathered, blend);
        let one = g.add_scalar(blend, -1.0);
        let inv = g.mul_scalar(one, -1.0);
        let filler = g.mul(self.default, inv);
        g.add(kept, filler)
    }
}
