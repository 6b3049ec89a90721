//! Training checkpoints in the named-tensor archive format.
//!
//! Tensor groups: `g/` generator, `d/` Feat-D, `sn/` spectral-norm vectors,
//! `lpp/` prompt pair, `opt_g/` and `opt_d/` Adam moments (`m{i}`, `v{i}`),
//! `enc/` the frozen encoder and `text/` the text embedder if any. The
//! metadata records step, seed, config hash, the model configs and frozen
//! component checksums, so a checkpoint alone suffices for scoring.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sfd_autograd::Adam;

use crate::archive::Archive;
use crate::encoders::{EncoderConfig, EncoderState, TextEmbedder, TextEmbedderConfig, ENCODER_ARCHIVE_KIND, TEXT_ARCHIVE_KIND};
use crate::error::{Result, SfdError};
use crate::feat_disc::FeatDConfig;
use crate::generator::GeneratorConfig;
use crate::text_disc::LppConfig;

use super::config::RunConfig;
use super::loss::{AdversarialForm, LossWeights};
use super::perceptual::PerceptualConfig;
use super::step::{ModelConfigs, TrainState};

pub const CHECKPOINT_KIND: &str = "sfd-checkpoint";

/// Model-defining settings stored in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfigs {
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub text: TextEmbedderConfig,
    pub feat_d: FeatDConfig,
    pub lpp: LppConfig,
    pub loss_weights: LossWeights,
    pub perceptual: PerceptualConfig,
    pub adversarial_form: AdversarialForm,
    pub lr: f64,
}

impl CheckpointConfigs {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            generator: cfg.generator.clone(),
            encoder: cfg.encoder.clone(),
            text: cfg.text.clone(),
            feat_d: cfg.feat_d.clone(),
            lpp: cfg.lpp.clone(),
            loss_weights: cfg.loss_weights,
            perceptual: cfg.perceptual.clone(),
            adversarial_form: cfg.adversarial_form,
            lr: cfg.lr,
        }
    }

    pub fn model_configs(&self) -> ModelConfigs<'_> {
        ModelConfigs {
            generator: &self.generator,
            feat_d: &self.feat_d,
            lpp: &self.lpp,
            weights: &self.loss_weights,
            form: self.adversarial_form,
            lr: self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
    pub configs: CheckpointConfigs,
    pub encoder_meta: serde_json::Value,
    pub encoder_checksum: String,
    pub perceptual_checksum: String,
    pub opt_g_t: u64,
    pub opt_d_t: u64,
}

/// A loaded checkpoint with every component rebuilt.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub state: TrainState,
    pub encoder: EncoderState,
    pub text: Option<TextEmbedder>,
}

fn write_adam(a: &mut Archive, prefix: &str, opt: &Adam) {
    for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
        a.push(format!("{prefix}m{i}"), m.clone());
        a.push(format!("{prefix}v{i}"), v.clone());
    }
}

fn read_adam(a: &Archive, prefix: &str, opt: &mut Adam, t: u64) -> Result<()> {
    for (i, (m, v)) in opt.m.iter_mut().zip(opt.v.iter_mut()).enumerate() {
        for (key, slot) in [(format!("{prefix}m{i}"), m), (format!("{prefix}v{i}"), v)] {
            let src = a
                .get(&key)
                .ok_or_else(|| SfdError::Shape(format!("checkpoint is missing `{key}`")))?;
            if src.shape() != slot.shape() {
                return Err(SfdError::Shape(format!(
                    "`{key}`: checkpoint has shape {:?}, model expects {:?}",
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = src.clone();
        }
    }
    let found = a.with_prefix(prefix).count();
    if found != 2 * opt.m.len() {
        return Err(SfdError::Shape(format!(
            "checkpoint has {found} optimizer tensors under `{prefix}`, model expects {}",
            2 * opt.m.len()
        )));
    }
    opt.t = t;
    Ok(())
}

fn nested(a: &Archive, kind: &str, prefix: &str, meta: serde_json::Value) -> Archive {
    let mut out = Archive::new(kind, meta);
    for (name, t) in a.with_prefix(prefix) {
        out.push(name, t.clone());
    }
    out
}

/// Builds the checkpoint archive.
pub fn checkpoint_archive(
    st: &TrainState,
    cfg: &RunConfig,
    encoder: &EncoderState,
    text: Option<&TextEmbedder>,
    perceptual_checksum: &str,
) -> Archive {
    let enc_archive = encoder.to_archive();
    let meta = CheckpointMeta {
        step: st.step,
        seed: st.seed,
        config_hash: cfg.config_hash(),
        configs: CheckpointConfigs::from_run(cfg),
        encoder_meta: enc_archive.meta.clone(),
        encoder_checksum: encoder.checksum(),
        perceptual_checksum: perceptual_checksum.to_string(),
        opt_g_t: st.opt_g.t,
        opt_d_t: st.opt_d.t,
    };
    let mut a = Archive::new(CHECKPOINT_KIND, serde_json::to_value(&meta).expect("meta serializes"));
    st.generator.params().write_into(&mut a, "g/");
    st.feat_d.params().write_into(&mut a, "d/");
    st.feat_d.buffers().write_into(&mut a, "sn/");
    st.lpp.write_into(&mut a, "lpp/");
    write_adam(&mut a, "opt_g/", &st.opt_g);
    write_adam(&mut a, "opt_d/", &st.opt_d);
    for (name, t) in &enc_archive.tensors {
        a.push(format!("enc/{name}"), t.clone());
    }
    if let Some(txt) = text {
        txt.params().write_into(&mut a, "text/");
    }
    a
}

pub fn save_checkpoint(
    path: &Path,
    st: &TrainState,
    cfg: &RunConfig,
    encoder: &EncoderState,
    text: Option<&TextEmbedder>,
    perceptual_checksum: &str,
) -> Result<()> {
    checkpoint_archive(st, cfg, encoder, text, perceptual_checksum).save(path)
}

pub fn read_meta(a: &Archive) -> Result<CheckpointMeta> {
    if a.kind != CHECKPOINT_KIND {
        return Err(SfdError::Format(format!(
            "expected a `{CHECKPOINT_KIND}` archive, found `{}`",
            a.kind
        )));
    }
    serde_json::from_value(a.meta.clone()).map_err(|e| SfdError::Format(format!("checkpoint metadata: {e}")))
}

/// Overwrites the trainable state of `st` from a checkpoint archive. Every
/// tensor must match in name and shape.
pub fn restore_into(a: &Archive, st: &mut TrainState) -> Result<()> {
    let meta = read_meta(a)?;
    let mut next = st.clone();
    next.generator.params_mut().read_from(a, "g/")?;
    next.feat_d.params_mut().read_from(a, "d/")?;
    next.feat_d.buffers_mut().read_from(a, "sn/")?;
    next.lpp.read_from(a, "lpp/")?;
    read_adam(a, "opt_g/", &mut next.opt_g, meta.opt_g_t)?;
    read_adam(a, "opt_d/", &mut next.opt_d, meta.opt_d_t)?;
    next.step = meta.step;
    next.seed = meta.seed;
    *st = next;
    Ok(())
}

/// Rebuilds the frozen encoder and text embedder stored in a checkpoint.
pub fn frozen_components(a: &Archive, meta: &CheckpointMeta) -> Result<(EncoderState, Option<TextEmbedder>)> {
    let enc = nested(a, ENCODER_ARCHIVE_KIND, "enc/", meta.encoder_meta.clone());
    let encoder = EncoderState::from_archive(&enc, &meta.configs.encoder)?;
    if encoder.checksum() != meta.encoder_checksum {
        return Err(SfdError::Checksum("stored encoder does not match its recorded checksum".into()));
    }
    let text = if a.with_prefix("text/").next().is_some() {
        let t = nested(a, TEXT_ARCHIVE_KIND, "text/", serde_json::Value::Null);
        Some(TextEmbedder::from_archive(&t, encoder.embed_dim())?)
    } else {
        None
    };
    Ok((encoder, text))
}

/// Loads a self-describing checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let a = Archive::load(path)?;
    let meta = read_meta(&a)?;
    let (encoder, text) = frozen_components(&a, &meta)?;
    let (mut state, _) = TrainState::new(&meta.configs.model_configs(), &encoder, text.as_ref(), meta.seed)?;
    restore_into(&a, &mut state)?;
    Ok(Checkpoint {
        meta,
        state,
        encoder,
        text,
    })
}

/// Loads a checkpoint into an already-configured state, failing on any
/// shape mismatch.
pub fn load_checkpoint_into(path: &Path, st: &mut TrainState) -> Result<CheckpointMeta> {
    let a = Archive::load(path)?;
    restore_into(&a, st)?;
    read_meta(&a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::init_tiny_encoder;
    use crate::training::step::ModelConfigs;

    fn tiny_run() -> RunConfig {
        let mut cfg = RunConfig::with_corpus("c");
        cfg.generator.num_blocks = 1;
        cfg.generator.num_features = 8;
        cfg.generator.growth_channels = 4;
        cfg.feat_d.fusion_channels = 8;
        cfg
    }

    fn state(cfg: &RunConfig, enc: &EncoderState) -> TrainState {
        let mc = ModelConfigs {
            generator: &cfg.generator,
            feat_d: &cfg.feat_d,
            lpp: &cfg.lpp,
            weights: &cfg.loss_weights,
            form: cfg.adversarial_form,
            lr: cfg.lr,
        };
        TrainState::new(&mc, enc, None, cfg.seed).unwrap().0
    }

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = tiny_run();
        let enc = init_tiny_encoder(&cfg.encoder, 0).unwrap();
        let mut st = state(&cfg, &enc);
        st.step = 17;
        st.opt_g.t = 17;
        st.opt_g.m[0].mapv_inplace(|v| v + 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.sfd");
        save_checkpoint(&path, &st, &cfg, &enc, None, "p").unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.state.checksum(), st.checksum());
        assert_eq!(ck.state.step, 17);
        assert_eq!(ck.encoder.checksum(), enc.checksum());
        assert_eq!(ck.meta.config_hash, cfg.config_hash());
        assert!(ck.text.is_none());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let cfg = tiny_run();
        let enc = init_tiny_encoder(&cfg.encoder, 0).unwrap();
        let st = state(&cfg, &enc);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.sfd");
        save_checkpoint(&path, &st, &cfg, &enc, None, "p").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(SfdError::Checksum(_))));
    }

    #[test]
    fn mismatched_generator_is_a_shape_error() {
        let cfg = tiny_run();
        let enc = init_tiny_encoder(&cfg.encoder, 0).unwrap();
        let st = state(&cfg, &enc);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.sfd");
        save_checkpoint(&path, &st, &cfg, &enc, None, "p").unwrap();
        let mut other = cfg.clone();
        other.generator.num_features = 12;
        let mut target = state(&other, &enc);
        let before = target.checksum();
        let err = load_checkpoint_into(&path, &mut target).unwrap_err();
        assert!(matches!(err, SfdError::Shape(_)), "{err}");
        assert_eq!(target.checksum(), before);
    }

    #[test]
    fn text_embedder_is_stored() {
        let mut cfg = tiny_run();
        cfg.text = TextEmbedderConfig::Hashed {
            seed: 1,
            vocab_size: 32,
            token_dim: 8,
        };
        let enc = init_tiny_encoder(&cfg.encoder, 0).unwrap();
        let txt = TextEmbedder::from_config(&cfg.text, enc.embed_dim()).unwrap().unwrap();
        let mc = CheckpointConfigs::from_run(&cfg);
        let (st, warnings) = TrainState::new(&mc.model_configs(), &enc, Some(&txt), 0).unwrap();
        assert!(warnings.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.sfd");
        save_checkpoint(&path, &st, &cfg, &enc, Some(&txt), "p").unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.text.unwrap().params().checksum(), txt.params().checksum());
        assert_eq!(ck.state.checksum(), st.checksum());
    }
}
