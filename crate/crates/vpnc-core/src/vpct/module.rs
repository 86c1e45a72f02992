//! Cross-viewport conditioning transformer.
//!
//! Each viewport's quantized latent becomes a raster-ordered token stream.
//! The current viewport's stream is shifted right behind a learned start
//! token, runs through pre-norm layers of causal self-attention and
//! cross-attention over [all previous viewports' unshifted embeddings,
//! the evolving current stream], and projects to a per-position global
//! prior feature. The projection is zero-initialized so the module starts
//! as an exact no-op and only speaks up once training gives it something
//! to say.

use super::masks;
use crate::codec::config::ModelConfig;
use crate::codec::nn::{register_linear, LinearLayer, ParamBindings, LEAK};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

pub struct AttnParams {
    q: LinearLayer,
    k: LinearLayer,
    v: LinearLayer,
    o: LinearLayer,
}

pub struct MlpParams {
    w1: LinearLayer,
    w2: LinearLayer,
}

pub struct LayerParams {
    ln_a1: (Var, Var),
    attn_a: AttnParams,
    ln_a2: (Var, Var),
    mlp_a: MlpParams,
    ln_c1: (Var, Var),
    attn_c: AttnParams,
    ln_c2: (Var, Var),
    mlp_c: MlpParams,
}

pub struct VpctParams {
    embed: LinearLayer,
    pos: Var,
    vpidx: Var,
    start: Var,
    layers: Vec<LayerParams>,
    proj: LinearLayer,
}

const LN_EPS: f64 = 1e-5;

pub fn register_vpct(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let d = cfg.vpct.embed_dim;
    let n = cfg.latent_tokens();
    register_linear(store, "vpct.embed", cfg.latent_channels, d, seed);
    store.register_uniform("vpct.pos", vec![n, d], 0.02, seed);
    store.register_uniform("vpct.vpidx", vec![cfg.max_viewports, d], 0.02, seed);
    store.register_uniform("vpct.start", vec![1, d], 0.02, seed);
    for l in 0..cfg.vpct.layers {
        for half in ["a", "c"] {
            let p = format!("vpct.L{l}.{half}");
            store.register_full(&format!("{p}.ln1.g"), vec![d], 1.0);
            store.register_zeros(&format!("{p}.ln1.b"), vec![d]);
            for proj in ["q", "k", "v", "o"] {
                register_linear(store, &format!("{p}.{proj}"), d, d, seed);
            }
            store.register_full(&format!("{p}.ln2.g"), vec![d], 1.0);
            store.register_zeros(&format!("{p}.ln2.b"), vec![d]);
            register_linear(store, &format!("{p}.mlp.w1"), d, d * cfg.vpct.mlp_ratio, seed);
            register_linear(store, &format!("{p}.mlp.w2"), d * cfg.vpct.mlp_ratio, d, seed);
        }
    }
    store.register_zeros("vpct.proj.w", vec![d, cfg.vpct.global_channels]);
    store.register_zeros("vpct.proj.b", vec![cfg.vpct.global_channels]);
}

fn bind_attn<S: Scalar>(
    b: &mut ParamBindings,
    g: &mut Graph<S>,
    store: &ParamStore,
    prefix: &str,
) -> AttnParams {
    AttnParams {
        q: LinearLayer::bind(b, g, store, &format!("{prefix}.q")),
        k: LinearLayer::bind(b, g, store, &format!("{prefix}.k")),
        v: LinearLayer::bind(b, g, store, &format!("{prefix}.v")),
        o: LinearLayer::bind(b, g, store, &format!("{prefix}.o")),
    }
}

fn bind_ln<S: Scalar>(
    b: &mut ParamBindings,
    g: &mut Graph<S>,
    store: &ParamStore,
    prefix: &str,
) -> (Var, Var) {
    (b.bind(g, store, &format!("{prefix}.g")), b.bind(g, store, &format!("{prefix}.b")))
}

pub fn bind_vpct<S: Scalar>(
    b: &mut ParamBindings,
    g: &mut Graph<S>,
    store: &ParamStore,
    cfg: &ModelConfig,
) -> VpctParams {
    let layers = (0..cfg.vpct.layers)
        .map(|l| {
            let a = format!("vpct.L{l}.a");
            let c = format!("vpct.L{l}.c");
            LayerParams {
                ln_a1: bind_ln(b, g, store, &format!("{a}.ln1")),
                attn_a: bind_attn(b, g, store, &a),
                ln_a2: bind_ln(b, g, store, &format!("{a}.ln2")),
                mlp_a: MlpParams {
                    w1: LinearLayer::bind(b, g, store, &format!("{a}.mlp.w1")),
                    w2: LinearLayer::bind(b, g, store, &format!("{a}.mlp.w2")),
                },
                ln_c1: bind_ln(b, g, store, &format!("{c}.ln1")),
                attn_c: bind_attn(b, g, store, &c),
                ln_c2: bind_ln(b, g, store, &format!("{c}.ln2")),
                mlp_c: MlpParams {
                    w1: LinearLayer::bind(b, g, store, &format!("{c}.mlp.w1")),
                    w2: LinearLayer::bind(b, g, store, &format!("{c}.mlp.w2")),
                },
            }
        })
        .collect();
    VpctParams {
        embed: LinearLayer::bind(b, g, store, "vpct.embed"),
        pos: b.bind(g, store, "vpct.pos"),
        vpidx: b.bind(g, store, "vpct.vpidx"),
        start: b.bind(g, store, "vpct.start"),
        layers,
        proj: LinearLayer::bind(b, g, store, "vpct.proj"),
    }
}

/// Multi-head attention with an additive (Tq, Tk) mask.
fn mha<S: Scalar>(
    g: &mut Graph<S>,
    p: &AttnParams,
    xq: Var,
    xkv: Var,
    heads: usize,
    mask: Var,
) -> Var {
    let (tq, d) = (g.shape(xq)[0], g.shape(xq)[1]);
    let tk = g.shape(xkv)[0];
    let dh = d / heads;
    let q = p.q.forward(g, xq);
    let k = p.k.forward(g, xkv);
    let v = p.v.forward(g, xkv);
    let q = g.reshape(q, vec![tq, heads, dh]);
    let q = g.permute(q, vec![1, 0, 2]);
    let k = g.reshape(k, vec![tk, heads, dh]);
    let kt = g.permute(k, vec![1, 2, 0]);
    let scores = g.bmm(q, kt);
    let scores = g.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
    let scores = g.add(scores, mask);
    let attn = g.softmax_lastdim(scores);
    let v = g.reshape(v, vec![tk, heads, dh]);
    let v = g.permute(v, vec![1, 0, 2]);
    let o = g.bmm(attn, v);
    let o = g.permute(o, vec![1, 0, 2]);
    let o = g.reshape(o, vec![tq, d]);
    p.o.forward(g, o)
}

fn mlp<S: Scalar>(g: &mut Graph<S>, p: &MlpParams, x: Var) -> Var {
    let h = p.w1.forward(g, x);
    let h = g.leaky_relu(h, LEAK);
    p.w2.forward(g, h)
}

/// Runs the module over an ordered panorama. `latent_tokens[v]` is the
/// (N, latent_channels) token matrix of viewport v's quantized (or
/// noise-relaxed) latent; the result is one (N, global_channels) prior
/// feature per viewport.
pub fn vpct_forward<S: Scalar>(
    g: &mut Graph<S>,
    p: &VpctParams,
    cfg: &ModelConfig,
    latent_tokens: &[Var],
) -> Vec<Var> {
    let n = cfg.latent_tokens();
    assert!(
        latent_tokens.len() <= cfg.max_viewports,
        "plan has {} viewports but the model indexes at most {}",
        latent_tokens.len(),
        cfg.max_viewports
    );
    for &t in latent_tokens {
        assert_eq!(g.shape(t), &[n, cfg.latent_channels], "latent token shape");
    }
    // Unshifted embeddings serve as memory once a viewport is fully coded.
    let raw: Vec<Var> = latent_tokens
        .iter()
        .enumerate()
        .map(|(v, &t)| {
            let e = p.embed.forward(g, t);
            let e = g.add(e, p.pos);
            let idx = g.slice(p.vpidx, 0, v, 1);
            g.add(e, idx)
        })
        .collect();
    // The current stream is shifted right one slot behind the start token,
    // so token q carries position q-1 and the causal diagonal stays safe.
    let shifted: Vec<Var> = latent_tokens
        .iter()
        .enumerate()
        .map(|(v, &t)| {
            let e = p.embed.forward(g, t);
            let s = if n == 1 {
                p.start
            } else {
                let head = g.slice(e, 0, 0, n - 1);
                g.concat(&[p.start, head], 0)
            };
            let s = g.add(s, p.pos);
            let idx = g.slice(p.vpidx, 0, v, 1);
            g.add(s, idx)
        })
        .collect();
    let intra_mask = g.input(masks::intra_mask_tensor(n));
    let mut outs = Vec::with_capacity(latent_tokens.len());
    for v in 0..latent_tokens.len() {
        let cross_mask = g.input(masks::cross_mask_tensor(n, v));
        let mut x = shifted[v];
        for layer in &p.layers {
            let xn = g.layer_norm(x, layer.ln_a1.0, layer.ln_a1.1, LN_EPS);
            let a = mha(g, &layer.attn_a, xn, xn, cfg.vpct.heads, intra_mask);
            x = g.add(x, a);
            let xn = g.layer_norm(x, layer.ln_a2.0, layer.ln_a2.1, LN_EPS);
            let m = mlp(g, &layer.mlp_a, xn);
            x = g.add(x, m);

            let xq = g.layer_norm(x, layer.ln_c1.0, layer.ln_c1.1, LN_EPS);
            let mem = if v == 0 {
                x
            } else {
                let parts: Vec<Var> = raw[..v].iter().copied().chain(std::iter::once(x)).collect();
                g.concat(&parts, 0)
            };
            let memn = g.layer_norm(mem, layer.ln_c1.0, layer.ln_c1.1, LN_EPS);
            let a = mha(g, &layer.attn_c, xq, memn, cfg.vpct.heads, cross_mask);
            x = g.add(x, a);
            let xn = g.layer_norm(x, layer.ln_c2.0, layer.ln_c2.1, LN_EPS);
            let m = mlp(g, &layer.mlp_c, xn);
            x = g.add(x, m);
        }
        outs.push(p.proj.forward(g, x));
    }
    outs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::config::ModelKind;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_cfg() -> ModelConfig {
        let cfg = ModelConfig::tiny(ModelKind::Joint, true);
        // 64x64 viewports give 4x4 latents: 16 tokens.
        cfg.validate().unwrap();
        cfg
    }

    fn random_tokens(cfg: &ModelConfig, seed: u64, count: usize) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.latent_tokens();
        (0..count)
            .map(|_| {
                let data: Vec<f64> =
                    (0..n * cfg.latent_channels).map(|_| rng.gen_range(-3.0..3.0)).collect();
                Tensor::from_vec(vec![n, cfg.latent_channels], data)
            })
            .collect()
    }

    /// Registers parameters and replaces the zero output projection with
    /// random values so causality tests see real signal.
    fn store_with_live_proj(cfg: &ModelConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        register_vpct(&mut store, cfg, seed);
        let d = cfg.vpct.embed_dim;
        let cg = cfg.vpct.global_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let w: Vec<f32> = (0..d * cg).map(|_| rng.gen_range(-0.3..0.3)).collect();
        *store.get_mut("vpct.proj.w").unwrap() = Tensor::from_vec(vec![d, cg], w);
        store
    }

    fn run(cfg: &ModelConfig, store: &ParamStore, tokens: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let p = bind_vpct(&mut b, &mut g, store, cfg);
        let vars: Vec<Var> = tokens.iter().map(|t| g.input(t.clone())).collect();
        let outs = vpct_forward(&mut g, &p, cfg, &vars);
        outs.into_iter().map(|v| g.value(v).clone()).collect()
    }

    #[test]
    fn zero_projection_makes_module_a_no_op() {
        let cfg = test_cfg();
        let mut store = ParamStore::new();
        register_vpct(&mut store, &cfg, 5);
        let tokens = random_tokens(&cfg, 1, 3);
        for out in run(&cfg, &store, &tokens) {
            assert!(out.data().iter().all(|&v| v == 0.0), "fresh module must output zeros");
        }
    }

    #[test]
    fn future_positions_cannot_leak_backward() {
        // Perturbing latent position j may only change outputs at q > j:
        // the shift means token j rides at stream slot j+1.
        let cfg = test_cfg();
        let store = store_with_live_proj(&cfg, 5);
        let n = cfg.latent_tokens();
        let base = random_tokens(&cfg, 2, 2);
        let out_a = run(&cfg, &store, &base);
        for j in [0usize, n / 2, n - 1] {
            let mut bumped = base.clone();
            let last = bumped.len() - 1;
            for c in 0..cfg.latent_channels {
                bumped[last].data_mut()[j * cfg.latent_channels + c] += 7.5;
            }
            let out_b = run(&cfg, &store, &bumped);
            let cg = cfg.vpct.global_channels;
            for q in 0..n {
                let row_a = &out_a[last].data()[q * cg..(q + 1) * cg];
                let row_b = &out_b[last].data()[q * cg..(q + 1) * cg];
                if q <= j {
                    assert_eq!(row_a, row_b, "row {q} must ignore position {j}");
                } else if q == j + 1 {
                    assert_ne!(row_a, row_b, "row {q} should see position {j}");
                }
            }
        }
    }

    #[test]
    fn later_viewports_cannot_touch_earlier_ones() {
        let cfg = test_cfg();
        let store = store_with_live_proj(&cfg, 9);
        let base = random_tokens(&cfg, 3, 3);
        let out_a = run(&cfg, &store, &base);
        let mut bumped = base.clone();
        for v in bumped[2].data_mut() {
            *v += 2.0;
        }
        let out_b = run(&cfg, &store, &bumped);
        assert_eq!(out_a[0], out_b[0], "viewport 0 output changed by viewport 2");
        assert_eq!(out_a[1], out_b[1], "viewport 1 output changed by viewport 2");
        assert_ne!(out_a[2], out_b[2]);
    }

    #[test]
    fn earlier_viewports_are_fully_visible_to_later_ones() {
        let cfg = test_cfg();
        let store = store_with_live_proj(&cfg, 13);
        let base = random_tokens(&cfg, 4, 2);
        let out_a = run(&cfg, &store, &base);
        let mut bumped = base.clone();
        // Even the LAST latent position of viewport 0 is legal memory for
        // every position of viewport 1 (it is fully decoded by then).
        let n = cfg.latent_tokens();
        let c = cfg.latent_channels;
        bumped[0].data_mut()[(n - 1) * c] += 4.0;
        let out_b = run(&cfg, &store, &bumped);
        let cg = cfg.vpct.global_channels;
        let first_row_a = &out_a[1].data()[..cg];
        let first_row_b = &out_b[1].data()[..cg];
        assert_ne!(first_row_a, first_row_b, "memory should reach viewport 1 row 0");
    }
}
