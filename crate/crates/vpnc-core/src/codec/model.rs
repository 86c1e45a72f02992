//! Full codec assembly: parameter registration, the differentiable
//! training pass over an ordered set of viewports, and the f64 inference
//! passes the sequential coder drives.
//!
//! Training runs in f32. Coding runs in f64 with stored f32 weights upcast
//! exactly, and every conditioning path is causal in raster order, so an
//! encoder and decoder that fill the latent buffer position by position
//! compute bitwise-identical Gaussian parameters.

use super::config::{ModelConfig, ModelKind};
use super::context::{register_context, register_reference, ContextLayer, ReferenceLayer};
use super::factorized::{register_factorized, FactorizedDensity};
use super::gaussian::{gaussian_bits, sigma_from_raw};
use super::nn::{register_linear, LinearLayer, ParamBindings, LEAK};
use super::transforms::{
    register_transforms, AnalysisTransform, HyperAnalysis, HyperSynthesis, SynthesisTransform,
};
use crate::coding::{CodingDistribution, MAX_SYMBOL};
use crate::error::{Error, Result};
use crate::geometry::ViewportImage;
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::vpct::{bind_vpct, register_vpct, vpct_forward, VpctParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Which learned static density a coding table is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorizedBranch {
    Latent,
    Hyper,
}

pub struct CodecModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Input/output channel widths of the parameter fusion network.
fn fusion_dims(cfg: &ModelConfig) -> (usize, usize) {
    let mut fin = 0;
    if cfg.kind.has_hyper() {
        fin += cfg.hyper_channels;
    }
    if cfg.kind.has_context() {
        fin += cfg.context_channels;
    }
    if cfg.kind.has_reference() {
        fin += cfg.ref_dim;
    }
    if cfg.use_vpct {
        fin += cfg.vpct.global_channels;
    }
    // The scale-only family predicts sigma alone; everything else predicts
    // mean and scale stacked along the channel axis.
    let fout = if cfg.kind == ModelKind::Hyperprior {
        cfg.latent_channels
    } else {
        2 * cfg.latent_channels
    };
    (fin, fout)
}

struct BoundModel {
    ga: AnalysisTransform,
    gs: SynthesisTransform,
    ha: Option<HyperAnalysis>,
    hs: Option<HyperSynthesis>,
    fy: Option<FactorizedDensity>,
    fz: Option<FactorizedDensity>,
    ctx: Option<ContextLayer>,
    refl: Option<ReferenceLayer>,
    vpct: Option<VpctParams>,
    fuse: Option<[LinearLayer; 3]>,
}

/// Entropy-side components only (no image transforms); used by the
/// sequential coder where y and theta_h arrive precomputed.
struct BoundEntropy {
    ctx: Option<ContextLayer>,
    refl: Option<ReferenceLayer>,
    vpct: Option<VpctParams>,
    fuse: Option<[LinearLayer; 3]>,
}

fn bind_fuse<S: Scalar>(
    b: &mut ParamBindings,
    g: &mut Graph<S>,
    store: &ParamStore,
) -> [LinearLayer; 3] {
    [
        LinearLayer::bind(b, g, store, "fuse.0"),
        LinearLayer::bind(b, g, store, "fuse.1"),
        LinearLayer::bind(b, g, store, "fuse.2"),
    ]
}

fn bind_entropy<S: Scalar>(
    b: &mut ParamBindings,
    g: &mut Graph<S>,
    store: &ParamStore,
    cfg: &ModelConfig,
) -> BoundEntropy {
    BoundEntropy {
        ctx: cfg.kind.has_context().then(|| ContextLayer::bind(b, g, store)),
        refl: cfg.kind.has_reference().then(|| ReferenceLayer::bind(b, g, store)),
        vpct: cfg.use_vpct.then(|| bind_vpct(b, g, store, cfg)),
        fuse: cfg.kind.gaussian_conditioning(cfg.use_vpct).then(|| bind_fuse(b, g, store)),
    }
}

fn bind_all<S: Scalar>(
    b: &mut ParamBindings,
    g: &mut Graph<S>,
    store: &ParamStore,
    cfg: &ModelConfig,
) -> BoundModel {
    let entropy = bind_entropy(b, g, store, cfg);
    BoundModel {
        ga: AnalysisTransform::bind(b, g, store),
        gs: SynthesisTransform::bind(b, g, store),
        ha: cfg.kind.has_hyper().then(|| HyperAnalysis::bind(b, g, store)),
        hs: cfg.kind.has_hyper().then(|| HyperSynthesis::bind(b, g, store)),
        fy: (!cfg.kind.gaussian_conditioning(cfg.use_vpct))
            .then(|| FactorizedDensity::bind(b, g, store, "fy")),
        fz: cfg.kind.has_hyper().then(|| FactorizedDensity::bind(b, g, store, "fz")),
        ctx: entropy.ctx,
        refl: entropy.refl,
        vpct: entropy.vpct,
        fuse: entropy.fuse,
    }
}

/// (C, h, w) feature map -> (h*w, C) raster-ordered token matrix.
fn to_tokens<S: Scalar>(g: &mut Graph<S>, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    assert_eq!(s.len(), 3, "token source must be (C, h, w)");
    let r = g.reshape(x, vec![s[0], s[1] * s[2]]);
    g.permute(r, vec![1, 0])
}

fn acc<S: Scalar>(g: &mut Graph<S>, total: Option<Var>, v: Var) -> Option<Var> {
    Some(match total {
        None => v,
        Some(t) => g.add(t, v),
    })
}

/// Splits fusion output into (mu, sigma); the scale-only family gets a
/// zero mean and uses the whole output as raw scale.
fn split_mu_sigma<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &ModelConfig,
    fused: Var,
    n_tok: usize,
) -> (Var, Var) {
    let cy = cfg.latent_channels;
    if cfg.kind == ModelKind::Hyperprior {
        let mu = g.input(Tensor::zeros(vec![n_tok, cy]));
        let sigma = sigma_from_raw(g, fused);
        (mu, sigma)
    } else {
        let mu = g.slice(fused, 1, 0, cy);
        let raw = g.slice(fused, 1, cy, cy);
        let sigma = sigma_from_raw(g, raw);
        (mu, sigma)
    }
}

/// Everything a training step needs from one forward pass. Training runs
/// in f32; the f64 instantiation exists for finite-difference checks of
/// the full objective.
pub struct TrainForward<S: Scalar = f32> {
    pub graph: Graph<S>,
    pub bindings: ParamBindings,
    pub loss: Var,
    /// Total coded bits (latent plus hyper) under the noise relaxation.
    pub bits: Var,
    /// Mean squared reconstruction error in [0, 1] pixel units.
    pub mse: Var,
    /// Viewport pixels in the pass (bits / pixels = bits per pixel).
    pub pixels: usize,
}

/// Inputs to one conditional-parameter pass of the sequential coder.
pub struct EntropyInputs<'a> {
    /// Latent buffer for the current viewport, raster-filled up to the
    /// position being coded and zero beyond it.
    pub buffer: &'a Tensor<f64>,
    /// Decoded hyper feature (required when the model has a hyper branch).
    pub theta_h: Option<&'a Tensor<f64>>,
    /// Fully decoded latents of previous viewports, in plan order.
    pub prev: &'a [Tensor<f64>],
    pub viewport_index: usize,
}

impl CodecModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        register_transforms(&mut params, &config, seed);
        if !config.kind.gaussian_conditioning(config.use_vpct) {
            register_factorized(&mut params, "fy", config.latent_channels, seed);
        }
        if config.kind.has_hyper() {
            register_factorized(&mut params, "fz", config.hyper_channels, seed);
        }
        if config.kind.has_context() {
            register_context(&mut params, config.context_channels, config.latent_channels, seed);
        }
        if config.kind.has_reference() {
            register_reference(
                &mut params,
                config.context_channels,
                config.latent_channels,
                config.ref_dim,
                seed,
            );
        }
        if config.use_vpct {
            register_vpct(&mut params, &config, seed);
        }
        if config.kind.gaussian_conditioning(config.use_vpct) {
            let (fin, fout) = fusion_dims(&config);
            register_linear(&mut params, "fuse.0", fin, fout, seed);
            register_linear(&mut params, "fuse.1", fout, fout, seed);
            register_linear(&mut params, "fuse.2", fout, fout, seed);
        }
        Ok(CodecModel { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path, &self.config.to_toml())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, cfg_str) = ParamStore::load(path)?;
        let config = ModelConfig::from_toml(&cfg_str)?;
        // Reconcile against a freshly registered skeleton so a truncated or
        // hand-edited checkpoint cannot smuggle in wrong shapes.
        let reference = CodecModel::new(config.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                params.len(),
                reference.params.len()
            )));
        }
        for (name, expect) in reference.params.iter() {
            match params.get(name) {
                Some(t) if t.shape() == expect.shape() => {}
                Some(t) => {
                    return Err(Error::CheckpointMismatch(format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        t.shape(),
                        expect.shape()
                    )))
                }
                None => {
                    return Err(Error::CheckpointMismatch(format!(
                        "checkpoint is missing tensor '{name}'"
                    )))
                }
            }
        }
        Ok(CodecModel { config, params })
    }

    /// Content hash over architecture and weights; embedded in streams.
    pub fn hash(&self) -> [u8; 32] {
        self.params.model_hash(&self.config.to_toml())
    }

    fn check_viewports(&self, viewports: &[ViewportImage]) -> Result<()> {
        if viewports.is_empty() {
            return Err(Error::invalid("no viewports to process"));
        }
        for (i, vp) in viewports.iter().enumerate() {
            if vp.width != self.config.viewport_width || vp.height != self.config.viewport_height {
                return Err(Error::invalid(format!(
                    "viewport {i} is {}x{}, model expects {}x{}",
                    vp.width, vp.height, self.config.viewport_width, self.config.viewport_height
                )));
            }
        }
        if self.config.use_vpct && viewports.len() > self.config.max_viewports {
            return Err(Error::invalid(format!(
                "{} viewports exceed the model's indexed capacity {}",
                viewports.len(),
                self.config.max_viewports
            )));
        }
        Ok(())
    }

    /// Differentiable rate-distortion pass over one panorama's ordered
    /// viewports with additive-uniform quantization noise.
    pub fn forward_train(
        &self,
        viewports: &[ViewportImage],
        lambda: f64,
        noise_seed: u64,
    ) -> Result<TrainForward> {
        self.train_graph::<f32>(viewports, lambda, noise_seed)
    }

    /// The same pass built in f64; noise draws follow the identical RNG
    /// sequence, so the two precisions see the same perturbations.
    pub fn forward_train64(
        &self,
        viewports: &[ViewportImage],
        lambda: f64,
        noise_seed: u64,
    ) -> Result<TrainForward<f64>> {
        self.train_graph::<f64>(viewports, lambda, noise_seed)
    }

    fn train_graph<S: Scalar>(
        &self,
        viewports: &[ViewportImage],
        lambda: f64,
        noise_seed: u64,
    ) -> Result<TrainForward<S>> {
        self.check_viewports(viewports)?;
        let cfg = &self.config;
        let (lh, lw) = cfg.latent_dims();
        let n_tok = lh * lw;
        let cy = cfg.latent_channels;
        let (h, w) = (cfg.viewport_height, cfg.viewport_width);
        let mut g: Graph<S> = Graph::new();
        let mut bindings = ParamBindings::new();
        let bm = bind_all(&mut bindings, &mut g, &self.params, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut yt = Vec::new();
        for vp in viewports {
            let x = g.input(vp.to_tensor().cast::<S>());
            let y = bm.ga.forward(&mut g, x);
            let noise: Vec<f32> =
                (0..cy * n_tok).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let u = g.input(Tensor::from_vec(vec![cy, lh, lw], noise).cast::<S>());
            let noisy = g.add(y, u);
            xs.push(x);
            ys.push(y);
            yt.push(noisy);
        }
        let tokens: Vec<Var> = yt.iter().map(|&t| to_tokens(&mut g, t)).collect();
        let theta_g = bm
            .vpct
            .as_ref()
            .map(|p| vpct_forward(&mut g, p, cfg, &tokens));

        let mut bits_total: Option<Var> = None;
        let mut sq_total: Option<Var> = None;
        for v in 0..viewports.len() {
            let mut fuse_inputs: Vec<Var> = Vec::new();
            if let Some(ha) = &bm.ha {
                let z = ha.forward(&mut g, ys[v]);
                let zs = g.shape(z).to_vec();
                let zm = zs[1] * zs[2];
                let noise: Vec<f32> =
                    (0..zs[0] * zm).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let u = g.input(Tensor::from_vec(zs.clone(), noise).cast::<S>());
                let zt = g.add(z, u);
                let rows = g.reshape(zt, vec![zs[0], 1, zm]);
                let zb = bm.fz.as_ref().expect("hyper density").bits(&mut g, rows);
                bits_total = acc(&mut g, bits_total, zb);
                let th = bm.hs.as_ref().expect("hyper synthesis").forward(&mut g, zt, (lh, lw));
                let t = to_tokens(&mut g, th);
                fuse_inputs.push(t);
            }
            let mut ctx_tokens = None;
            if let Some(ctx) = &bm.ctx {
                let feat = ctx.forward(&mut g, yt[v]);
                let t = to_tokens(&mut g, feat);
                fuse_inputs.push(t);
                ctx_tokens = Some(t);
            }
            if let Some(refl) = &bm.refl {
                let r = refl.forward(&mut g, ctx_tokens.expect("context feeds queries"), tokens[v]);
                fuse_inputs.push(r);
            }
            if let Some(tg) = &theta_g {
                fuse_inputs.push(tg[v]);
            }

            let yb = if let Some(fuse) = &bm.fuse {
                let joined = if fuse_inputs.len() == 1 {
                    fuse_inputs[0]
                } else {
                    g.concat(&fuse_inputs, 1)
                };
                let h0 = fuse[0].forward(&mut g, joined);
                let h0 = g.leaky_relu(h0, LEAK);
                let h1 = fuse[1].forward(&mut g, h0);
                let h1 = g.leaky_relu(h1, LEAK);
                let fused = fuse[2].forward(&mut g, h1);
                let (mu, sigma) = split_mu_sigma(&mut g, cfg, fused, n_tok);
                gaussian_bits(&mut g, tokens[v], mu, sigma)
            } else {
                let rows = g.reshape(yt[v], vec![cy, 1, n_tok]);
                bm.fy.as_ref().expect("static latent density").bits(&mut g, rows)
            };
            bits_total = acc(&mut g, bits_total, yb);

            let xh = bm.gs.forward(&mut g, yt[v], (h, w));
            let d = g.sub(xs[v], xh);
            let sq = g.mul(d, d);
            let s = g.sum(sq);
            sq_total = acc(&mut g, sq_total, s);
        }

        let pixels = viewports.len() * h * w;
        let bits = bits_total.expect("at least one viewport");
        let bpp = g.mul_scalar(bits, 1.0 / pixels as f64);
        let mse = g.mul_scalar(sq_total.expect("at least one viewport"), 1.0 / (pixels * 3) as f64);
        let weighted = g.mul_scalar(mse, lambda * 255.0 * 255.0);
        let loss = g.add(bpp, weighted);
        Ok(TrainForward { graph: g, bindings, loss, bits, mse, pixels })
    }

    /// Analysis transform in f64: viewport -> latent (C_y, h/16, w/16).
    pub fn analysis64(&self, vp: &ViewportImage) -> Tensor<f64> {
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let ga = AnalysisTransform::bind(&mut b, &mut g, &self.params);
        let x = g.input(vp.to_tensor().cast::<f64>());
        let y = ga.forward(&mut g, x);
        g.value(y).clone()
    }

    /// Synthesis transform in f64 with output clamped into [0, 1].
    pub fn synthesis64(&self, y_hat: &Tensor<f64>) -> Result<ViewportImage> {
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let gs = SynthesisTransform::bind(&mut b, &mut g, &self.params);
        let y = g.input(y_hat.clone());
        let x = gs.forward(&mut g, y, (self.config.viewport_height, self.config.viewport_width));
        ViewportImage::from_tensor(&g.value(x).cast::<f32>())
    }

    /// Hyper analysis in f64: latent -> hyper-latent.
    pub fn hyper_analysis64(&self, y: &Tensor<f64>) -> Tensor<f64> {
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let ha = HyperAnalysis::bind(&mut b, &mut g, &self.params);
        let yv = g.input(y.clone());
        let z = ha.forward(&mut g, yv);
        g.value(z).clone()
    }

    /// Hyper synthesis in f64: decoded hyper-latent -> conditioning feature
    /// at latent resolution.
    pub fn hyper_synthesis64(&self, z_hat: &Tensor<f64>) -> Tensor<f64> {
        let (lh, lw) = self.config.latent_dims();
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let hs = HyperSynthesis::bind(&mut b, &mut g, &self.params);
        let zv = g.input(z_hat.clone());
        let th = hs.forward(&mut g, zv, (lh, lw));
        g.value(th).clone()
    }

    /// Conditional Gaussian parameters for every latent position of the
    /// current viewport, as (mu, sigma) token matrices of shape
    /// (tokens, latent_channels). Causality guarantees the row for
    /// position n depends only on buffer entries before n, so the encoder
    /// and decoder call this with identical inputs and get identical f64.
    pub fn conditional_params(&self, inp: &EntropyInputs) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let cfg = &self.config;
        if !cfg.kind.gaussian_conditioning(cfg.use_vpct) {
            return Err(Error::invalid("static-density model has no conditional parameters"));
        }
        let (lh, lw) = cfg.latent_dims();
        let n_tok = lh * lw;
        assert_eq!(
            inp.buffer.shape(),
            &[cfg.latent_channels, lh, lw],
            "latent buffer shape mismatch"
        );
        assert_eq!(inp.prev.len(), inp.viewport_index, "previous latents must match index");
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let be = bind_entropy(&mut b, &mut g, &self.params, cfg);
        let buffer = g.input(inp.buffer.clone());
        let buf_tokens = to_tokens(&mut g, buffer);

        let mut fuse_inputs: Vec<Var> = Vec::new();
        if cfg.kind.has_hyper() {
            let th = inp.theta_h.ok_or_else(|| {
                Error::invalid("hyper feature required for this model kind")
            })?;
            let thv = g.input(th.clone());
            let t = to_tokens(&mut g, thv);
            fuse_inputs.push(t);
        }
        let mut ctx_tokens = None;
        if let Some(ctx) = &be.ctx {
            let feat = ctx.forward(&mut g, buffer);
            let t = to_tokens(&mut g, feat);
            fuse_inputs.push(t);
            ctx_tokens = Some(t);
        }
        if let Some(refl) = &be.refl {
            let r = refl.forward(&mut g, ctx_tokens.expect("context feeds queries"), buf_tokens);
            fuse_inputs.push(r);
        }
        if let Some(vp) = &be.vpct {
            let mut streams: Vec<Var> = Vec::with_capacity(inp.prev.len() + 1);
            for prev in inp.prev {
                let pv = g.input(prev.clone());
                streams.push(to_tokens(&mut g, pv));
            }
            streams.push(buf_tokens);
            let outs = vpct_forward(&mut g, vp, cfg, &streams);
            fuse_inputs.push(*outs.last().expect("current viewport output"));
        }

        let fuse = be.fuse.as_ref().expect("gaussian family has a fusion net");
        let joined =
            if fuse_inputs.len() == 1 { fuse_inputs[0] } else { g.concat(&fuse_inputs, 1) };
        let h0 = fuse[0].forward(&mut g, joined);
        let h0 = g.leaky_relu(h0, LEAK);
        let h1 = fuse[1].forward(&mut g, h0);
        let h1 = g.leaky_relu(h1, LEAK);
        let fused = fuse[2].forward(&mut g, h1);
        let (mu, sigma) = split_mu_sigma(&mut g, cfg, fused, n_tok);
        Ok((g.value(mu).clone(), g.value(sigma).clone()))
    }

    /// Per-channel integer coding tables from a learned static density,
    /// evaluated in f64 (identical on encode and decode).
    pub fn factorized_tables(&self, branch: FactorizedBranch) -> Vec<CodingDistribution> {
        let (prefix, channels) = match branch {
            FactorizedBranch::Latent => ("fy", self.config.latent_channels),
            FactorizedBranch::Hyper => ("fz", self.config.hyper_channels),
        };
        assert!(
            self.params.contains(&format!("{prefix}.h1")),
            "model has no '{prefix}' static density"
        );
        let span = MAX_SYMBOL;
        // CDF at every half-integer from -span-0.5 to span+0.5.
        let grid: Vec<f64> = (-span..=span + 1).map(|k| k as f64 - 0.5).collect();
        let m = grid.len();
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let density = FactorizedDensity::bind(&mut b, &mut g, &self.params, prefix);
        let mut data = Vec::with_capacity(channels * m);
        for _ in 0..channels {
            data.extend_from_slice(&grid);
        }
        let u = g.input(Tensor::from_vec(vec![channels, 1, m], data));
        let cdf = density.cdf(&mut g, u);
        let vals = g.value(cdf).data();
        (0..channels)
            .map(|c| {
                let row = &vals[c * m..(c + 1) * m];
                let probs: Vec<f64> =
                    row.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
                CodingDistribution::from_probs(-span, &probs)
            })
            .collect()
    }
}
