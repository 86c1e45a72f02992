//! Helpers that bind named stored parameters into a compute graph and
//! route gradients back by name after the reverse pass.

use crate::tensor::{Gradients, Graph, ParamStore, Scalar, Tensor, Var};
use std::collections::BTreeMap;

/// Records which graph variable each named parameter was bound to, so a
/// gradient pass can be turned back into a name -> tensor map for the
/// optimizer. Stored f32 weights are upcast exactly into the graph's
/// scalar type, which is what makes the f64 coding path reproducible.
#[derive(Default)]
pub struct ParamBindings {
    pairs: Vec<(String, Var)>,
}

impl ParamBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind<S: Scalar>(&mut self, g: &mut Graph<S>, store: &ParamStore, name: &str) -> Var {
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' missing from store"))
            .cast::<S>();
        let v = g.param(t);
        self.pairs.push((name.to_string(), v));
        v
    }

    /// Collects leaf gradients by parameter name; parameters the loss never
    /// touched are omitted.
    pub fn gradients<S: Scalar>(&self, grads: &Gradients<S>) -> BTreeMap<String, Tensor<f32>> {
        let mut out = BTreeMap::new();
        for (name, var) in &self.pairs {
            if let Some(gt) = grads.get(*var) {
                let prev = out.insert(name.clone(), gt.cast::<f32>());
                assert!(prev.is_none(), "parameter '{name}' bound twice in one graph");
            }
        }
        out
    }
}

/// Strided 5x5 convolution stage of the analysis transform.
pub struct ConvLayer {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn bind<S: Scalar>(
        bindings: &mut ParamBindings,
        g: &mut Graph<S>,
        store: &ParamStore,
        name: &str,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = bindings.bind(g, store, &format!("{name}.w"));
        let b = bindings.bind(g, store, &format!("{name}.b"));
        ConvLayer { w, b, stride, pad }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Var {
        g.conv2d(x, self.w, self.b, self.stride, self.pad)
    }
}

/// Transposed convolution stage; output padding is picked per call so the
/// upsampled size lands exactly on the mirror of the analysis chain.
pub struct ConvTLayer {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTLayer {
    pub fn bind<S: Scalar>(
        bindings: &mut ParamBindings,
        g: &mut Graph<S>,
        store: &ParamStore,
        name: &str,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = bindings.bind(g, store, &format!("{name}.w"));
        let b = bindings.bind(g, store, &format!("{name}.b"));
        ConvTLayer { w, b, stride, pad }
    }

    /// Upsamples to exactly `target` rows/cols.
    pub fn forward_to<S: Scalar>(&self, g: &mut Graph<S>, x: Var, target: (usize, usize)) -> Var {
        let xs = g.shape(x);
        let (ih, iw) = (xs[1], xs[2]);
        let ws = g.shape(self.w);
        let k = ws[2];
        let base_h = (ih - 1) * self.stride + k - 2 * self.pad;
        let base_w = (iw - 1) * self.stride + k - 2 * self.pad;
        assert!(
            target.0 >= base_h && target.0 - base_h < self.stride,
            "target height {} unreachable from input {ih} (base {base_h}, stride {})",
            target.0,
            self.stride
        );
        assert!(
            target.1 >= base_w && target.1 - base_w < self.stride,
            "target width {} unreachable from input {iw} (base {base_w}, stride {})",
            target.1,
            self.stride
        );
        let out_pad_h = target.0 - base_h;
        let out_pad_w = target.1 - base_w;
        assert_eq!(out_pad_h, out_pad_w, "asymmetric output padding is not supported");
        g.conv_transpose2d(x, self.w, self.b, self.stride, self.pad, out_pad_h)
    }
}

/// Per-token affine map, equivalent to a 1x1 convolution. Weight layout is
/// (in, out); forward is x @ w + b for x of shape (tokens, in).
pub struct LinearLayer {
    pub w: Var,
    pub b: Var,
}

impl LinearLayer {
    pub fn bind<S: Scalar>(
        bindings: &mut ParamBindings,
        g: &mut Graph<S>,
        store: &ParamStore,
        name: &str,
    ) -> Self {
        let w = bindings.bind(g, store, &format!("{name}.w"));
        let b = bindings.bind(g, store, &format!("{name}.b"));
        LinearLayer { w, b }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Var {
        let y = g.matmul(x, self.w);
        g.add(y, self.b)
    }
}

/// Registers the weight and bias of a convolution stage.
pub fn register_conv(
    store: &mut ParamStore,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    seed: u64,
) {
    store.register_uniform_fanin(&format!("{name}.w"), vec![out_c, in_c, k, k], in_c * k * k, seed);
    store.register_zeros(&format!("{name}.b"), vec![out_c]);
}

/// Registers a transposed convolution stage; weight layout (in, out, k, k).
pub fn register_conv_t(
    store: &mut ParamStore,
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    seed: u64,
) {
    store.register_uniform_fanin(&format!("{name}.w"), vec![in_c, out_c, k, k], in_c * k * k, seed);
    store.register_zeros(&format!("{name}.b"), vec![out_c]);
}

pub fn register_linear(store: &mut ParamStore, name: &str, in_d: usize, out_d: usize, seed: u64) {
    store.register_uniform_fanin(&format!("{name}.w"), vec![in_d, out_d], in_d, seed);
    store.register_zeros(&format!("{name}.b"), vec![out_d]);
}

/// Negative slope shared by every leaky ReLU in the codec.
pub const LEAK: f64 = 0.01;
