//! Toy-scale protocols shared by the acceptance gate and the experiment
//! examples: a synthetic corpus, short training runs, held-out evaluation and
//! graded-degradation quality ladders.

pub mod criteria;

use std::path::{Path, PathBuf};

use sfd_core::correlation::srcc;
use sfd_core::degrade::{add_gaussian_noise, gaussian_blur, DegradationMode, DegradationParams};
use sfd_core::image::ImageTensor;
use sfd_core::iqa::{sfd_iqa_scores, IqaConfig, IqaModel};
use sfd_core::training::corpus::center_pairs;
use sfd_core::training::{
    derive_seed, evaluate, load_checkpoint, run_training, synth_corpus, synth_image, Checkpoint, EvalReport,
    LossWeights, RunConfig, RunOutcome,
};
use sfd_core::Result;

pub const TRAIN_IMAGES: usize = 20;
pub const TRAIN_SIZE: usize = 96;
pub const HELDOUT_IMAGES: usize = 20;
pub const HELDOUT_SIZE: usize = 64;
const HELDOUT_TAG: u64 = 0x4e1d;

/// Toy schedule: L1-only warm-up followed by adversarial steps.
pub const TOY_STEPS: u64 = 800;
pub const TOY_PRETRAIN: u64 = 400;

pub const BLUR_LADDER: [f64; 6] = [0.0, 0.6, 1.0, 1.5, 2.0, 3.0];
pub const NOISE_LADDER: [f64; 6] = [0.0, 0.02, 0.04, 0.06, 0.08, 0.12];

pub struct ToyCorpus {
    pub root: tempfile::TempDir,
    pub train_dir: PathBuf,
    pub heldout: Vec<ImageTensor>,
}

/// 20 synthetic training PNGs on disk plus 20 held-out images from disjoint
/// seeds.
pub fn toy_corpus(seed: u64) -> Result<ToyCorpus> {
    let root = tempfile::tempdir().map_err(|e| sfd_core::SfdError::io(std::env::temp_dir(), e))?;
    let train_dir = root.path().join("train");
    synth_corpus(&train_dir, TRAIN_IMAGES, TRAIN_SIZE, seed)?;
    let heldout = (0..HELDOUT_IMAGES as u64)
        .map(|i| synth_image(HELDOUT_SIZE, derive_seed(seed ^ HELDOUT_TAG, i)))
        .collect();
    Ok(ToyCorpus {
        root,
        train_dir,
        heldout,
    })
}

/// Blurred, noisy LR inputs for training the toy checkpoint.
pub fn toy_degradation() -> DegradationParams {
    DegradationParams {
        mode: DegradationMode::Parametric,
        blur_sigma: 1.0,
        noise_sigma: 0.05,
        seed: 0,
    }
}

/// Default model settings at toy length with the toy degradation.
pub fn toy_config(corpus: &Path, out: &Path, steps: u64, pretrain: u64, weights: LossWeights) -> RunConfig {
    let mut cfg = RunConfig::with_corpus(corpus);
    cfg.degradation = toy_degradation();
    cfg.output_dir = out.to_path_buf();
    cfg.total_steps = steps;
    cfg.pretrain_steps = pretrain;
    cfg.checkpoint_interval = 0;
    cfg.loss_weights = weights;
    cfg
}

pub struct ToyRun {
    pub outcome: RunOutcome,
    pub checkpoint: Checkpoint,
}

pub fn train(cfg: &RunConfig) -> Result<ToyRun> {
    let outcome = run_training(cfg, None)?;
    let checkpoint = load_checkpoint(&outcome.final_checkpoint)?;
    Ok(ToyRun { outcome, checkpoint })
}

/// Whole held-out images with their bicubic LR inputs.
pub fn heldout_pairs(images: &[ImageTensor], scale: usize) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    center_pairs(images, HELDOUT_SIZE, scale, &DegradationParams::default())
}

/// The four `HELDOUT_SIZE / 2` quadrants of each held-out image, as
/// `(lr, hr)` pairs at the training patch size.
pub fn heldout_patch_pairs(images: &[ImageTensor], scale: usize) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    let half = HELDOUT_SIZE / 2;
    let mut patches = Vec::new();
    for img in images {
        for (top, left) in [(0, 0), (0, half), (half, 0), (half, half)] {
            patches.push(img.crop(top, left, half, half)?);
        }
    }
    center_pairs(&patches, half, scale, &DegradationParams::default())
}

pub fn heldout_patch_report(ck: &Checkpoint, images: &[ImageTensor]) -> Result<EvalReport> {
    let pairs = heldout_patch_pairs(images, ck.state.generator.scale())?;
    evaluate(&pairs, &ck.state, &ck.encoder)
}

pub fn heldout_report(ck: &Checkpoint, images: &[ImageTensor]) -> Result<EvalReport> {
    let pairs = heldout_pairs(images, ck.state.generator.scale())?;
    evaluate(&pairs, &ck.state, &ck.encoder)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    Blur,
    Noise,
}

impl Ladder {
    pub fn sigmas(self) -> [f64; 6] {
        match self {
            Ladder::Blur => BLUR_LADDER,
            Ladder::Noise => NOISE_LADDER,
        }
    }

    pub fn apply(self, img: &ImageTensor, level: usize, seed: u64) -> Result<ImageTensor> {
        let sigma = self.sigmas()[level];
        if sigma == 0.0 {
            return Ok(img.clone());
        }
        match self {
            Ladder::Blur => gaussian_blur(img, sigma),
            Ladder::Noise => add_gaussian_noise(img, sigma, seed),
        }
    }
}

pub struct LadderResult {
    /// `s_d` per image and level, image-major.
    pub scores: Vec<f64>,
    pub severity: Vec<f64>,
    pub srcc: f64,
    /// Mean `s_d` per level.
    pub level_means: [f64; 6],
}

/// Scores every image at every severity level of `ladder`; SRCC is taken
/// over all (image, level) points.
pub fn quality_ladder(ck: &Checkpoint, images: &[ImageTensor], ladder: Ladder) -> Result<LadderResult> {
    let model = IqaModel {
        encoder: &ck.encoder,
        feat_d: &ck.state.feat_d,
        lpp: &ck.state.lpp,
        text: ck.text.as_ref(),
    };
    let mut degraded = Vec::new();
    let mut severity = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for level in 0..6 {
            degraded.push(ladder.apply(img, level, derive_seed(i as u64, level as u64))?);
            severity.push(level as f64);
        }
    }
    let scores: Vec<f64> = sfd_iqa_scores(&degraded, &model, &IqaConfig::default())?
        .into_iter()
        .map(|r| r.s_d)
        .collect();
    let mut level_means = [0.0; 6];
    for (s, lvl) in scores.iter().zip(&severity) {
        level_means[*lvl as usize] += s / images.len() as f64;
    }
    Ok(LadderResult {
        srcc: srcc(&scores, &severity)?,
        scores,
        severity,
        level_means,
    })
}
