//! Frozen feature extractor behind the perceptual loss term.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sfd_autograd::Var;

use crate::archive::Archive;
use crate::encoders::{normalize_channels, read_conv_stack, EncoderState, Layer};
use crate::error::{Result, SfdError};
use crate::nn::{ParamStore, LRELU_SLOPE};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptualSource {
    /// The semantic encoder's own conv stack.
    #[default]
    TinyEncoder,
    /// A conv stack in the encoder archive format (e.g. converted VGG-19
    /// convolutions, with pooling folded into strides).
    ExternalVgg { path: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptualConfig {
    pub source: PerceptualSource,
    /// Tapped layers; defaults to the encoder's pyramid taps for
    /// `tiny_encoder` and is required otherwise.
    pub tap_layers: Option<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    params: ParamStore,
    layers: Vec<Layer>,
    taps: Vec<usize>,
    input_norm: Option<([f64; 3], [f64; 3])>,
}

impl PerceptualExtractor {
    pub fn from_config(cfg: &PerceptualConfig, encoder: &EncoderState) -> Result<Self> {
        match &cfg.source {
            PerceptualSource::TinyEncoder => {
                let taps = cfg
                    .tap_layers
                    .clone()
                    .unwrap_or_else(|| encoder.tap_names().to_vec());
                Self::from_archive(&encoder.to_archive(), &taps)
            }
            PerceptualSource::ExternalVgg { path } => {
                let taps = cfg.tap_layers.as_ref().ok_or_else(|| {
                    SfdError::Config("perceptual.tap_layers is required for external_vgg".into())
                })?;
                Self::from_archive(&Archive::load(path)?, taps)
            }
        }
    }

    pub fn from_archive(archive: &Archive, tap_names: &[String]) -> Result<Self> {
        if tap_names.is_empty() {
            return Err(SfdError::Config("perceptual extractor needs at least one tap layer".into()));
        }
        let (params, layers, input_norm) = read_conv_stack(archive)?;
        let taps = tap_names
            .iter()
            .map(|name| {
                layers
                    .iter()
                    .position(|l| &l.name == name)
                    .ok_or_else(|| SfdError::UnknownTap {
                        name: name.clone(),
                        available: layers.iter().map(|l| l.name.clone()).collect(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params,
            layers,
            taps,
            input_norm,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn tap_names(&self) -> Vec<String> {
        self.taps.iter().map(|&t| self.layers[t].name.clone()).collect()
    }

    /// Tapped activations of `[N, 3, H, W]` input, in tap order.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Vec<Var<'t>> {
        let deepest = *self.taps.iter().max().unwrap();
        let mut h = match self.input_norm {
            Some((mean, std)) => normalize_channels(x, mean, std),
            None => x,
        };
        let mut acts = Vec::with_capacity(deepest + 1);
        for layer in &self.layers[..=deepest] {
            h = layer.conv.forward(p, h).leaky_relu(LRELU_SLOPE);
            acts.push(h);
        }
        self.taps.iter().map(|&t| acts[t]).collect()
    }
}
