//! No-reference quality scoring with the trained discriminators.
//!
//! The score is the weighted prompt score `α1·s_o + α2·s_lp` (fixed antonym
//! prompts and learned prompt pair) multiplied by the mean sigmoid of the
//! Feat-D score matrix. Models are borrowed immutably: scoring cannot change
//! any weight.

use serde::{Deserialize, Serialize};

use crate::encoders::{embed_text_prompts, encode_image, EncoderState, GlobalEmbedding, TextEmbedder};
use crate::error::{Result, SfdError};
use crate::feat_disc::{feat_d_forward, FeatDState, ScoreMatrix};
use crate::image::ImageTensor;
use crate::text_disc::{cosine_pair, relative_score, PromptPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqaConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub fixed_prompts: (String, String),
}

impl Default for IqaConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.5,
            alpha2: 0.5,
            fixed_prompts: ("Good photo".into(), "Bad photo".into()),
        }
    }
}

impl IqaConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| a.is_finite() && a >= 0.0;
        if !ok(self.alpha1) || !ok(self.alpha2) {
            return Err(SfdError::Config(format!(
                "alpha1/alpha2 must be finite and non-negative, got ({}, {})",
                self.alpha1, self.alpha2
            )));
        }
        if self.alpha1 + self.alpha2 <= 0.0 {
            return Err(SfdError::Config("alpha1 + alpha2 must be positive".into()));
        }
        Ok(())
    }
}

/// Everything the scorer needs, borrowed read-only.
#[derive(Clone, Copy)]
pub struct IqaModel<'a> {
    pub encoder: &'a EncoderState,
    pub feat_d: &'a FeatDState,
    pub lpp: &'a PromptPair,
    pub text: Option<&'a TextEmbedder>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IqaResult {
    pub s_d: f64,
    /// Fixed-prompt score; `None` without a text embedder.
    pub s_o: Option<f64>,
    pub s_lp: f64,
    pub s_aver: f64,
    pub mean_sigmoid_matrix: f64,
    /// Weights actually applied, after any fallback.
    pub alpha: (f64, f64),
    pub warnings: Vec<String>,
}

pub fn iqa_score_matrix(img: &ImageTensor, model: &IqaModel<'_>) -> Result<ScoreMatrix> {
    let (pyr, _) = encode_image(img, model.encoder)?;
    feat_d_forward(&pyr, model.feat_d)
}

pub fn weighted_average_score(s_o: f64, s_lp: f64, cfg: &IqaConfig) -> f64 {
    cfg.alpha1 * s_o + cfg.alpha2 * s_lp
}

/// `s_aver × mean(sigmoid(matrix))`.
pub fn combine_scores(matrix: &ScoreMatrix, s_aver: f64) -> f64 {
    s_aver * matrix.mean_sigmoid()
}

fn prompt_score(emb: &GlobalEmbedding, pair: &PromptPair) -> Result<f64> {
    let (p, n) = cosine_pair(emb, pair)?;
    Ok(relative_score(p, n).value)
}

/// Fixed-prompt pair, when a text embedder is available.
pub fn fixed_prompt_pair(cfg: &IqaConfig, text: Option<&TextEmbedder>) -> Result<Option<PromptPair>> {
    match embed_text_prompts((&cfg.fixed_prompts.0, &cfg.fixed_prompts.1), text) {
        Ok((p, n)) => PromptPair::from_vectors(p, n).map(Some),
        Err(SfdError::TextEmbedderUnavailable) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn sfd_iqa_score(img: &ImageTensor, model: &IqaModel<'_>, cfg: &IqaConfig) -> Result<IqaResult> {
    let fixed = fixed_prompt_pair(cfg, model.text)?;
    score_with(img, model, cfg, fixed.as_ref())
}

/// Scores many images, embedding the fixed prompts once.
pub fn sfd_iqa_scores(imgs: &[ImageTensor], model: &IqaModel<'_>, cfg: &IqaConfig) -> Result<Vec<IqaResult>> {
    let fixed = fixed_prompt_pair(cfg, model.text)?;
    imgs.iter().map(|img| score_with(img, model, cfg, fixed.as_ref())).collect()
}

fn score_with(
    img: &ImageTensor,
    model: &IqaModel<'_>,
    cfg: &IqaConfig,
    fixed: Option<&PromptPair>,
) -> Result<IqaResult> {
    cfg.validate()?;
    let (pyr, emb) = encode_image(img, model.encoder)?;
    let matrix = feat_d_forward(&pyr, model.feat_d)?;
    let s_lp = prompt_score(&emb, model.lpp)?;
    let s_o = fixed.map(|pair| prompt_score(&emb, pair)).transpose()?;
    let mut warnings = Vec::new();
    let alpha = match s_o {
        Some(_) => (cfg.alpha1, cfg.alpha2),
        None if cfg.alpha1 > 0.0 => {
            let msg = "no text embedder: fixed-prompt score unavailable, using alpha = (0, 1)".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
            (0.0, 1.0)
        }
        None => (0.0, cfg.alpha2),
    };
    let s_aver = alpha.0 * s_o.unwrap_or(0.0) + alpha.1 * s_lp;
    let mean_sigmoid_matrix = matrix.mean_sigmoid();
    Ok(IqaResult {
        s_d: s_aver * mean_sigmoid_matrix,
        s_o,
        s_lp,
        s_aver,
        mean_sigmoid_matrix,
        alpha,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_tiny_encoder, EncoderConfig, TextEmbedderConfig};
    use crate::feat_disc::FeatDConfig;
    use crate::nn::Init;
    use crate::text_disc::LppConfig;
    use ndarray::array;

    fn cfg(a1: f64, a2: f64) -> IqaConfig {
        IqaConfig {
            alpha1: a1,
            alpha2: a2,
            ..Default::default()
        }
    }

    #[test]
    fn weighted_average_examples() {
        assert!((weighted_average_score(0.6, 0.8, &cfg(0.5, 0.5)) - 0.7).abs() < 1e-12);
        assert_eq!(weighted_average_score(0.37, 0.8, &cfg(1.0, 0.0)), 0.37);
        assert!((weighted_average_score(0.5, 0.9, &cfg(0.3, 0.7)) - 0.78).abs() < 1e-12);
        assert!(cfg(0.0, 0.0).validate().is_err());
        assert!(cfg(-0.1, 1.0).validate().is_err());
    }

    #[test]
    fn combine_examples() {
        let zero = ScoreMatrix::uniform(1, 4, 4, 0.0);
        assert!((combine_scores(&zero, 0.7) - 0.35).abs() < 1e-12);
        let l3 = 3f64.ln();
        let m = ScoreMatrix::single(array![[0.0, l3], [-l3, 0.0]]);
        assert!((m.mean_sigmoid() - 0.5).abs() < 1e-12);
        assert!((combine_scores(&m, 0.8) - 0.40).abs() < 1e-12);
    }

    struct Fixture {
        enc: EncoderState,
        d: FeatDState,
        lpp: PromptPair,
        text: TextEmbedder,
    }

    fn fixture() -> Fixture {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 0).unwrap();
        let d = FeatDState::new(&FeatDConfig::default(), enc.pyramid_channels(), [2, 2], 1).unwrap();
        let text = TextEmbedder::from_config(
            &TextEmbedderConfig::Hashed {
                seed: 2,
                vocab_size: 128,
                token_dim: 16,
            },
            enc.embed_dim(),
        )
        .unwrap()
        .unwrap();
        let (lpp, _) = PromptPair::from_config(&LppConfig::default(), enc.embed_dim(), Some(&text)).unwrap();
        Fixture { enc, d, lpp, text }
    }

    fn image(seed: u64) -> ImageTensor {
        let t = Init::new(seed).normal(&[3, 64, 64], 1.0);
        ImageTensor::new(t.mapv(|v| 0.5 + 0.3 * v.tanh()).into_dimensionality().unwrap()).unwrap()
    }

    #[test]
    fn result_is_consistent_and_read_only() {
        let f = fixture();
        let model = IqaModel {
            encoder: &f.enc,
            feat_d: &f.d,
            lpp: &f.lpp,
            text: Some(&f.text),
        };
        let before = (f.enc.checksum(), f.d.checksum(), f.lpp.params().checksum());
        let img = image(3);
        let r = sfd_iqa_score(&img, &model, &IqaConfig::default()).unwrap();
        assert!(r.warnings.is_empty());
        let s_o = r.s_o.unwrap();
        assert!((r.s_aver - (0.5 * s_o + 0.5 * r.s_lp)).abs() < 1e-15);
        assert!((r.s_d - r.s_aver * r.mean_sigmoid_matrix).abs() < 1e-15);
        assert!(r.s_d > 0.0 && r.s_d < 1.0);
        assert_eq!(r, sfd_iqa_score(&img, &model, &IqaConfig::default()).unwrap());
        assert_eq!(iqa_score_matrix(&img, &model).unwrap().dims(), (1, 16, 16));
        // the learned pair starts at the fixed prompts
        assert!((s_o - r.s_lp).abs() < 1e-12);
        assert_eq!(before, (f.enc.checksum(), f.d.checksum(), f.lpp.params().checksum()));
    }

    #[test]
    fn missing_text_embedder_falls_back() {
        let f = fixture();
        let model = IqaModel {
            encoder: &f.enc,
            feat_d: &f.d,
            lpp: &f.lpp,
            text: None,
        };
        let r = sfd_iqa_score(&image(4), &model, &IqaConfig::default()).unwrap();
        assert_eq!(r.alpha, (0.0, 1.0));
        assert_eq!(r.s_o, None);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.s_aver, r.s_lp);
        assert!(sfd_iqa_score(&image(4), &model, &cfg(0.0, 0.0)).is_err());
    }
}
