//! Convolutional analysis and synthesis transforms.
//!
//! The main pair maps RGB viewports to a 16x-downsampled latent and back
//! through four stride-2 stages of 5x5 kernels with leaky activations
//! between stages. The hyper pair further maps latents to a 4x-smaller
//! hyper-latent and decodes it into a conditioning feature of the same
//! spatial size as the latent.

use super::config::ModelConfig;
use super::nn::{register_conv, register_conv_t, ConvLayer, ConvTLayer, ParamBindings, LEAK};
use crate::tensor::{Graph, ParamStore, Scalar, Var};

pub fn register_transforms(store: &mut ParamStore, cfg: &ModelConfig, seed: u64) {
    let c = cfg.channels;
    let cy = cfg.latent_channels;
    register_conv(store, "ga.0", c, 3, 5, seed);
    register_conv(store, "ga.1", c, c, 5, seed);
    register_conv(store, "ga.2", c, c, 5, seed);
    register_conv(store, "ga.3", cy, c, 5, seed);
    register_conv_t(store, "gs.0", cy, c, 5, seed);
    register_conv_t(store, "gs.1", c, c, 5, seed);
    register_conv_t(store, "gs.2", c, c, 5, seed);
    register_conv_t(store, "gs.3", c, 3, 5, seed);
    if cfg.kind.has_hyper() {
        let ch = cfg.hyper_channels;
        register_conv(store, "ha.0", ch, cy, 3, seed);
        register_conv(store, "ha.1", ch, ch, 5, seed);
        register_conv(store, "ha.2", ch, ch, 5, seed);
        register_conv_t(store, "hs.0", ch, ch, 5, seed);
        register_conv_t(store, "hs.1", ch, ch, 5, seed);
        register_conv(store, "hs.2", ch, ch, 3, seed);
    }
}

pub struct AnalysisTransform {
    stages: Vec<ConvLayer>,
}

impl AnalysisTransform {
    pub fn bind<S: Scalar>(b: &mut ParamBindings, g: &mut Graph<S>, store: &ParamStore) -> Self {
        let stages =
            (0..4).map(|i| ConvLayer::bind(b, g, store, &format!("ga.{i}"), 2, 2)).collect();
        AnalysisTransform { stages }
    }

    /// (3, H, W) -> (latent_channels, H/16, W/16).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Var {
        let mut h = x;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(g, h);
            if i + 1 < self.stages.len() {
                h = g.leaky_relu(h, LEAK);
            }
        }
        h
    }
}

pub struct SynthesisTransform {
    stages: Vec<ConvTLayer>,
}

impl SynthesisTransform {
    pub fn bind<S: Scalar>(b: &mut ParamBindings, g: &mut Graph<S>, store: &ParamStore) -> Self {
        let stages =
            (0..4).map(|i| ConvTLayer::bind(b, g, store, &format!("gs.{i}"), 2, 2)).collect();
        SynthesisTransform { stages }
    }

    /// (latent_channels, H/16, W/16) -> (3, H, W) for target (H, W).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, y: Var, target: (usize, usize)) -> Var {
        let (th, tw) = target;
        assert!(th % 16 == 0 && tw % 16 == 0, "synthesis target must be a multiple of 16");
        let mut h = y;
        for (i, stage) in self.stages.iter().enumerate() {
            let scale = 8 >> i;
            h = stage.forward_to(g, h, (th / scale, tw / scale));
            if i + 1 < self.stages.len() {
                h = g.leaky_relu(h, LEAK);
            }
        }
        h
    }
}

pub struct HyperAnalysis {
    head: ConvLayer,
    down: Vec<ConvLayer>,
}

impl HyperAnalysis {
    pub fn bind<S: Scalar>(b: &mut ParamBindings, g: &mut Graph<S>, store: &ParamStore) -> Self {
        HyperAnalysis {
            head: ConvLayer::bind(b, g, store, "ha.0", 1, 1),
            down: (1..3).map(|i| ConvLayer::bind(b, g, store, &format!("ha.{i}"), 2, 2)).collect(),
        }
    }

    /// (latent_channels, h, w) -> (hyper_channels, ceil(h/4)-ish, ...): two
    /// stride-2 stages, each producing ceil(in/2).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, y: Var) -> Var {
        let mut h = self.head.forward(g, y);
        for stage in &self.down {
            h = g.leaky_relu(h, LEAK);
            h = stage.forward(g, h);
        }
        h
    }
}

/// Spatial sizes of the hyper-latent chain for a latent of (h, w):
/// [latent, mid, hyper].
pub fn hyper_chain(h: usize, w: usize) -> [(usize, usize); 3] {
    let mid = (h.div_ceil(2), w.div_ceil(2));
    let hyper = (mid.0.div_ceil(2), mid.1.div_ceil(2));
    [(h, w), mid, hyper]
}

pub struct HyperSynthesis {
    up: Vec<ConvTLayer>,
    tail: ConvLayer,
}

impl HyperSynthesis {
    pub fn bind<S: Scalar>(b: &mut ParamBindings, g: &mut Graph<S>, store: &ParamStore) -> Self {
        HyperSynthesis {
            up: (0..2).map(|i| ConvTLayer::bind(b, g, store, &format!("hs.{i}"), 2, 2)).collect(),
            tail: ConvLayer::bind(b, g, store, "hs.2", 1, 1),
        }
    }

    /// (hyper_channels, hh, hw) -> (hyper_channels, h, w) for latent (h, w).
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, z: Var, latent: (usize, usize)) -> Var {
        let chain = hyper_chain(latent.0, latent.1);
        let mut h = z;
        for (stage, target) in self.up.iter().zip([chain[1], chain[0]]) {
            h = stage.forward_to(g, h, target);
            h = g.leaky_relu(h, LEAK);
        }
        self.tail.forward(g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::config::ModelKind;
    use crate::tensor::Tensor;

    fn cfg() -> ModelConfig {
        ModelConfig::tiny(ModelKind::Joint, false)
    }

    #[test]
    fn analysis_downsamples_sixteen_fold() {
        let cfg = cfg();
        let mut store = ParamStore::new();
        register_transforms(&mut store, &cfg, 1);
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let ga = AnalysisTransform::bind(&mut b, &mut g, &store);
        let x = g.input(Tensor::zeros(vec![3, 64, 48]));
        let y = ga.forward(&mut g, x);
        assert_eq!(g.shape(y), &[cfg.latent_channels, 4, 3]);
    }

    #[test]
    fn synthesis_mirrors_analysis_exactly() {
        let cfg = cfg();
        let mut store = ParamStore::new();
        register_transforms(&mut store, &cfg, 1);
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let gs = SynthesisTransform::bind(&mut b, &mut g, &store);
        let y = g.input(Tensor::zeros(vec![cfg.latent_channels, 4, 3]));
        let x = gs.forward(&mut g, y, (64, 48));
        assert_eq!(g.shape(x), &[3, 64, 48]);
    }

    #[test]
    fn hyper_chain_handles_odd_latents() {
        // A 5x5 latent downsamples 5 -> 3 -> 2 and must come back the same.
        assert_eq!(hyper_chain(5, 5), [(5, 5), (3, 3), (2, 2)]);
        let cfg = cfg();
        let mut store = ParamStore::new();
        register_transforms(&mut store, &cfg, 1);
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let ha = HyperAnalysis::bind(&mut b, &mut g, &store);
        let hs = HyperSynthesis::bind(&mut b, &mut g, &store);
        let y = g.input(Tensor::zeros(vec![cfg.latent_channels, 5, 5]));
        let z = ha.forward(&mut g, y);
        assert_eq!(g.shape(z), &[cfg.hyper_channels, 2, 2]);
        let features = hs.forward(&mut g, z, (5, 5));
        assert_eq!(g.shape(features), &[cfg.hyper_channels, 5, 5]);
    }

    #[test]
    fn one_by_one_hyper_latent_survives() {
        let cfg = cfg();
        let mut store = ParamStore::new();
        register_transforms(&mut store, &cfg, 1);
        let mut g: Graph<f64> = Graph::new();
        let mut b = ParamBindings::new();
        let ha = HyperAnalysis::bind(&mut b, &mut g, &store);
        let hs = HyperSynthesis::bind(&mut b, &mut g, &store);
        let y = g.input(Tensor::zeros(vec![cfg.latent_channels, 4, 4]));
        let z = ha.forward(&mut g, y);
        assert_eq!(g.shape(z), &[cfg.hyper_channels, 1, 1]);
        let f = hs.forward(&mut g, z, (4, 4));
        assert_eq!(g.shape(f), &[cfg.hyper_channels, 4, 4]);
    }
}
