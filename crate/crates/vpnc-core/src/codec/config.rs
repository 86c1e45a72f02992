//! Model architecture configuration, serialized as TOML and embedded in
//! every checkpoint so a stream can be refused when the decoder's weights
//! do not match.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Rate points the rate-distortion sweep trains at, ordered low to high.
/// The distortion term is scaled by 255^2, so these weights are calibrated
/// for 8-bit mean squared error.
pub const LAMBDA_LADDER: [f64; 6] = [0.0018, 0.0035, 0.0075, 0.013, 0.025, 0.048];

/// Returns the ladder index of `lambda`, or None for a custom rate point.
pub fn lambda_index(lambda: f64) -> Option<u8> {
    LAMBDA_LADDER.iter().position(|&l| l == lambda).map(|i| i as u8)
}

/// Entropy-model family, ordered by conditioning strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Latents coded by a learned per-channel static density.
    Factorized,
    /// Scale-only Gaussians conditioned on a coded hyper-latent.
    Hyperprior,
    /// Mean-scale Gaussians conditioned on hyper-latent plus a causal
    /// spatial context.
    Joint,
    /// Joint plus a causal single-head attention over already-coded
    /// positions of the same viewport.
    Reference,
}

impl ModelKind {
    pub fn has_hyper(self) -> bool {
        !matches!(self, ModelKind::Factorized)
    }

    pub fn has_context(self) -> bool {
        matches!(self, ModelKind::Joint | ModelKind::Reference)
    }

    pub fn has_reference(self) -> bool {
        matches!(self, ModelKind::Reference)
    }

    /// Whether latents are coded with conditional Gaussians. The factorized
    /// family switches to Gaussians only when the cross-viewport module
    /// supplies parameters; otherwise it codes with its static density.
    pub fn gaussian_conditioning(self, use_vpct: bool) -> bool {
        self.has_hyper() || use_vpct
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::Factorized => 0,
            ModelKind::Hyperprior => 1,
            ModelKind::Joint => 2,
            ModelKind::Reference => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => ModelKind::Factorized,
            1 => ModelKind::Hyperprior,
            2 => ModelKind::Joint,
            3 => ModelKind::Reference,
            c => return Err(Error::invalid(format!("unknown entropy model code {c}"))),
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Factorized => "factorized",
            ModelKind::Hyperprior => "hyperprior",
            ModelKind::Joint => "joint",
            ModelKind::Reference => "reference",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "factorized" => ModelKind::Factorized,
            "hyperprior" => ModelKind::Hyperprior,
            "joint" => ModelKind::Joint,
            "reference" => ModelKind::Reference,
            other => {
                return Err(Error::ConfigError(format!(
                    "unknown model kind '{other}' (use factorized, hyperprior, joint, or reference)"
                )))
            }
        })
    }
}

/// Cross-viewport attention hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VpctConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Channels of the global prior feature handed to the fusion network.
    pub global_channels: usize,
    pub mlp_ratio: usize,
}

impl Default for VpctConfig {
    fn default() -> Self {
        VpctConfig { embed_dim: 192, heads: 4, layers: 2, global_channels: 64, mlp_ratio: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub use_vpct: bool,
    /// Width of the analysis/synthesis transform trunk.
    pub channels: usize,
    /// Channels of the coded latent y.
    pub latent_channels: usize,
    /// Channels of the coded hyper-latent z and its decoded feature.
    pub hyper_channels: usize,
    /// Output channels of the causal spatial context convolution.
    pub context_channels: usize,
    /// Inner width of the causal reference attention.
    pub ref_dim: usize,
    /// Viewport size the model is trained for; the learned positional
    /// table fixes the latent token count, so this is part of the model.
    pub viewport_width: usize,
    pub viewport_height: usize,
    /// Capacity of the per-viewport index embedding.
    pub max_viewports: usize,
    pub vpct: VpctConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Joint,
            use_vpct: true,
            channels: 128,
            latent_channels: 192,
            hyper_channels: 128,
            context_channels: 384,
            ref_dim: 64,
            viewport_width: 64,
            viewport_height: 64,
            max_viewports: 6,
            vpct: VpctConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small architecture for unit tests and quick experiments.
    pub fn tiny(kind: ModelKind, use_vpct: bool) -> Self {
        ModelConfig {
            kind,
            use_vpct,
            channels: 12,
            latent_channels: 8,
            hyper_channels: 6,
            context_channels: 16,
            ref_dim: 8,
            viewport_width: 64,
            viewport_height: 64,
            max_viewports: 6,
            vpct: VpctConfig {
                embed_dim: 16,
                heads: 2,
                layers: 1,
                global_channels: 8,
                mlp_ratio: 2,
            },
        }
    }

    pub fn latent_dims(&self) -> (usize, usize) {
        (self.viewport_height / 16, self.viewport_width / 16)
    }

    pub fn latent_tokens(&self) -> usize {
        let (h, w) = self.latent_dims();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::ConfigError(msg));
        if self.viewport_width % 16 != 0 || self.viewport_height % 16 != 0 {
            return err(format!(
                "viewport size {}x{} must be a multiple of 16",
                self.viewport_width, self.viewport_height
            ));
        }
        if self.viewport_width == 0 || self.viewport_height == 0 {
            return err("viewport size must be nonzero".into());
        }
        for (n, v) in [
            ("channels", self.channels),
            ("latent_channels", self.latent_channels),
            ("max_viewports", self.max_viewports),
        ] {
            if v == 0 {
                return err(format!("{n} must be positive"));
            }
        }
        if self.kind.has_hyper() && self.hyper_channels == 0 {
            return err("hyper_channels must be positive for this model kind".into());
        }
        if self.kind.has_context() && self.context_channels == 0 {
            return err("context_channels must be positive for this model kind".into());
        }
        if self.kind.has_reference() && self.ref_dim == 0 {
            return err("ref_dim must be positive for the reference model".into());
        }
        if self.use_vpct {
            let v = &self.vpct;
            if v.embed_dim == 0 || v.heads == 0 || v.layers == 0 || v.global_channels == 0 {
                return err("attention dimensions must be positive".into());
            }
            if v.embed_dim % v.heads != 0 {
                return err(format!(
                    "embed_dim {} must divide evenly into {} heads",
                    v.embed_dim, v.heads
                ));
            }
            if v.mlp_ratio == 0 {
                return err("mlp_ratio must be positive".into());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(s).map_err(|e| Error::ConfigError(format!("bad model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ModelConfig::tiny(ModelKind::Reference, true);
        let s = cfg.to_toml();
        assert_eq!(ModelConfig::from_toml(&s).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ModelConfig::from_toml("kind = \"hyperprior\"\nuse_vpct = false\n").unwrap();
        assert_eq!(cfg.kind, ModelKind::Hyperprior);
        assert!(!cfg.use_vpct);
        assert_eq!(cfg.channels, ModelConfig::default().channels);
    }

    #[test]
    fn bad_heads_split_rejected() {
        let mut cfg = ModelConfig::tiny(ModelKind::Joint, true);
        cfg.vpct.heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::ConfigError(_))));
    }

    #[test]
    fn non_multiple_of_16_viewport_rejected() {
        let mut cfg = ModelConfig::tiny(ModelKind::Joint, false);
        cfg.viewport_width = 60;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ladder_index_finds_exact_entries_only() {
        assert_eq!(lambda_index(0.013), Some(3));
        assert_eq!(lambda_index(0.0131), None);
    }
}
