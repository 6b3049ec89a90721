//! One optimization step: a discriminator phase on detached generator
//! outputs, then a generator phase against the updated discriminators.

use serde::{Deserialize, Serialize};
use sfd_autograd::{Adam, AdamConfig, Grads, Tape, Tensor, Var};

use crate::encoders::{EncoderState, TextEmbedder};
use crate::error::{Result, SfdError};
use crate::feat_disc::{feat_d_loss_var, feat_g_loss_var, FeatDConfig, FeatDState};
use crate::generator::{GeneratorConfig, GeneratorState};
use crate::nn::ParamStore;
use crate::text_disc::{tg_d_loss_var, tg_g_loss_var, LppConfig, PromptPair};

use super::loss::{generator_loss_var, AdversarialForm, GeneratorLossInputs, LossWeights};
use super::perceptual::PerceptualExtractor;

/// Paired training tensors, `[N, 3, h, w]` and `[N, 3, h*s, w*s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Pixel-loss-only warm-up; discriminators are left untouched.
    Pretrain,
    Adversarial,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub phase: Phase,
    /// Weighted generator terms.
    pub g_pixel: f64,
    pub g_perceptual: f64,
    pub g_feat_adv: f64,
    pub g_text_adv: f64,
    pub g_total: f64,
    /// Literal-form adversarial losses of the step.
    pub loss_feat_g: Option<f64>,
    pub loss_tg_g: Option<f64>,
    pub loss_feat_d: Option<f64>,
    pub loss_tg_d: Option<f64>,
    /// Mean sigmoid of Feat-D logits on the batch before the update.
    pub d_score_hr: Option<f64>,
    pub d_score_sr: Option<f64>,
    /// Mean relative score before the update.
    pub s_hr: Option<f64>,
    pub s_sr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub generator: GeneratorState,
    pub feat_d: FeatDState,
    pub lpp: PromptPair,
    pub opt_g: Adam,
    /// Covers Feat-D parameters followed by LPP parameters.
    pub opt_d: Adam,
    pub step: u64,
    pub seed: u64,
    pub weights: LossWeights,
    pub form: AdversarialForm,
}

/// Distinct, stable sub-seeds of the run seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const SEED_GENERATOR: u64 = 1;
pub const SEED_FEAT_D: u64 = 2;
pub const SEED_LPP: u64 = 3;
pub const SEED_DATA: u64 = 4;

/// Spatial ratios between consecutive pyramid levels of `encoder`.
pub fn level_ratios(encoder: &EncoderState) -> Result<[usize; 2]> {
    let s = encoder.coarsest_stride();
    let shapes = encoder.pyramid_shapes(s, s)?;
    Ok([shapes[0].1 / shapes[1].1, shapes[1].1 / shapes[2].1])
}

pub struct ModelConfigs<'a> {
    pub generator: &'a GeneratorConfig,
    pub feat_d: &'a FeatDConfig,
    pub lpp: &'a LppConfig,
    pub weights: &'a LossWeights,
    pub form: AdversarialForm,
    pub lr: f64,
}

impl TrainState {
    /// Fresh state. Returns warnings from prompt-pair initialization.
    pub fn new(
        cfg: &ModelConfigs<'_>,
        encoder: &EncoderState,
        text: Option<&TextEmbedder>,
        seed: u64,
    ) -> Result<(Self, Vec<String>)> {
        cfg.weights.validate()?;
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(SfdError::Config(format!("lr must be positive, got {}", cfg.lr)));
        }
        let generator = GeneratorState::new(cfg.generator, derive_seed(seed, SEED_GENERATOR))?;
        let feat_d = FeatDState::new(
            cfg.feat_d,
            encoder.pyramid_channels(),
            level_ratios(encoder)?,
            derive_seed(seed, SEED_FEAT_D),
        )?;
        let mut lpp_cfg = cfg.lpp.clone();
        lpp_cfg.seed = derive_seed(cfg.lpp.seed, SEED_LPP);
        let (lpp, warnings) = PromptPair::from_config(&lpp_cfg, encoder.embed_dim(), text)?;
        let adam = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        let opt_g = Adam::new(adam, generator.params().tensors());
        let opt_d = Adam::new(adam, &disc_tensors(&feat_d, &lpp));
        Ok((
            Self {
                generator,
                feat_d,
                lpp,
                opt_g,
                opt_d,
                step: 0,
                seed,
                weights: *cfg.weights,
                form: cfg.form,
            },
            warnings,
        ))
    }

    /// Checksum over every trainable tensor and optimizer moment.
    pub fn checksum(&self) -> String {
        let mut all = ParamStore::new();
        let groups: [(&str, &ParamStore); 4] = [
            ("g/", self.generator.params()),
            ("d/", self.feat_d.params()),
            ("sn/", self.feat_d.buffers()),
            ("lpp/", self.lpp.params()),
        ];
        for (prefix, store) in groups {
            for (name, t) in store.iter() {
                all.push(format!("{prefix}{name}"), t.clone());
            }
        }
        for (tag, opt) in [("opt_g", &self.opt_g), ("opt_d", &self.opt_d)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                all.push(format!("{tag}/m{i}"), m.clone());
                all.push(format!("{tag}/v{i}"), v.clone());
            }
        }
        format!("{}:{}:{}", all.checksum(), self.opt_g.t, self.opt_d.t)
    }

    fn all_finite(&self) -> bool {
        self.generator.params().all_finite() && self.feat_d.params().all_finite() && self.lpp.params().all_finite()
    }
}

fn disc_tensors(d: &FeatDState, lpp: &PromptPair) -> Vec<Tensor> {
    d.params().tensors().iter().chain(lpp.params().tensors()).cloned().collect()
}

fn mean_of(v: Var<'_>, f: impl Fn(f64) -> f64) -> f64 {
    let t = v.value();
    t.iter().map(|x| f(*x)).sum::<f64>() / t.len() as f64
}

fn diverged(step: u64, term: impl Into<String>) -> SfdError {
    SfdError::Divergence {
        step,
        term: term.into(),
        last_good: None,
    }
}

fn check_batch(batch: &Batch, scale: usize) -> Result<()> {
    let (l, h) = (batch.lr.shape(), batch.hr.shape());
    if l.len() != 4 || h.len() != 4 || l[0] == 0 || l[0] != h[0] || l[1] != 3 || h[1] != 3 {
        return Err(SfdError::Shape(format!("bad batch shapes lr {l:?} / hr {h:?}")));
    }
    if h[2] != l[2] * scale || h[3] != l[3] * scale {
        return Err(SfdError::Shape(format!("hr {h:?} is not lr {l:?} times scale {scale}")));
    }
    Ok(())
}

/// Generator parameters must receive no gradient from the discriminator loss.
fn assert_detached(grads: &Grads, gen_params: &[Var<'_>]) -> Result<()> {
    let leaked = gen_params
        .iter()
        .any(|p| grads.get(*p).is_some_and(|g| g.iter().any(|v| *v != 0.0)));
    if leaked {
        return Err(SfdError::Shape(
            "discriminator loss produced generator gradients (detachment broken)".into(),
        ));
    }
    Ok(())
}

/// Pixel-loss-only generator update; discriminators untouched.
pub fn pretrain_step(batch: &Batch, st: &mut TrainState) -> Result<LogRecord> {
    check_batch(batch, st.generator.scale())?;
    let step = st.step + 1;
    let tape = Tape::new();
    let pg = st.generator.params().bind(&tape, true);
    let sr = st.generator.forward(&pg, tape.constant(batch.lr.clone()));
    let hr = tape.constant(batch.hr.clone());
    let loss = sr.sub(hr).abs().mean_all();
    if !loss.item().is_finite() {
        return Err(diverged(step, "pretrain pixel loss"));
    }
    let grads = tape.backward(loss);
    let g = st.generator.params().grads(&pg, &grads);
    st.opt_g.step(st.generator.params_mut().tensors_mut(), &g);
    if !st.generator.params().all_finite() {
        return Err(diverged(step, "generator parameters"));
    }
    st.step = step;
    Ok(LogRecord {
        step,
        phase: Phase::Pretrain,
        g_pixel: loss.item(),
        g_perceptual: 0.0,
        g_feat_adv: 0.0,
        g_text_adv: 0.0,
        g_total: loss.item(),
        loss_feat_g: None,
        loss_tg_g: None,
        loss_feat_d: None,
        loss_tg_d: None,
        d_score_hr: None,
        d_score_sr: None,
        s_hr: None,
        s_sr: None,
        elapsed_ms: None,
    })
}

pub fn train_step(
    batch: &Batch,
    st: &mut TrainState,
    enc: &EncoderState,
    perc: &PerceptualExtractor,
) -> Result<LogRecord> {
    check_batch(batch, st.generator.scale())?;
    let s = batch.hr.shape();
    enc.check_input(s[2], s[3])?;
    let step = st.step + 1;
    let w = st.weights;
    let tape = Tape::new();

    let pg = st.generator.params().bind(&tape, true);
    let sr = st.generator.forward(&pg, tape.constant(batch.lr.clone()));
    let hr = tape.constant(batch.hr.clone());
    let pe = enc.params().bind(&tape, false);
    let enc_hr = enc.forward(&pe, hr);
    let enc_sr = enc.forward(&pe, sr);

    // discriminator phase
    st.feat_d.power_iterate();
    let pd = st.feat_d.params().bind(&tape, true);
    let pl = st.lpp.params().bind(&tape, true);
    let sr_levels = enc_sr.levels.map(|v| v.detach());
    let logits_hr = st.feat_d.forward(&pd, enc_hr.levels).logits;
    let logits_sr = st.feat_d.forward(&pd, sr_levels).logits;
    let s_hr = st.lpp.score_var(&pl, enc_hr.embedding);
    let s_sr = st.lpp.score_var(&pl, enc_sr.embedding.detach());
    let loss_feat_d = feat_d_loss_var(logits_hr, logits_sr).item();
    let loss_tg_d = tg_d_loss_var(s_hr, s_sr).item();
    let loss_d = st.form.feat_d(logits_hr, logits_sr).add(st.form.tg_d(s_hr, s_sr));
    if !loss_d.item().is_finite() {
        return Err(diverged(step, "discriminator loss"));
    }
    let grads = tape.backward(loss_d);
    assert_detached(&grads, &pg)?;
    let mut d_grads = st.feat_d.params().grads(&pd, &grads);
    d_grads.extend(st.lpp.params().grads(&pl, &grads));
    let mut d_params = disc_tensors(&st.feat_d, &st.lpp);
    st.opt_d.step(&mut d_params, &d_grads);
    let n_d = st.feat_d.params().len();
    for (slot, t) in st.feat_d.params_mut().tensors_mut().iter_mut().zip(&d_params[..n_d]) {
        *slot = t.clone();
    }
    for (slot, t) in st.lpp.params_mut().tensors_mut().iter_mut().zip(&d_params[n_d..]) {
        *slot = t.clone();
    }
    if !st.feat_d.params().all_finite() || !st.lpp.params().all_finite() {
        return Err(diverged(step, "discriminator parameters"));
    }

    // generator phase against the updated discriminators
    let pd = st.feat_d.params().bind(&tape, false);
    let pl = st.lpp.params().bind(&tape, false);
    let logits = (w.feat_adv > 0.0).then(|| {
        (
            st.feat_d.forward(&pd, enc_hr.levels).logits,
            st.feat_d.forward(&pd, enc_sr.levels).logits,
        )
    });
    let scores = (w.text_adv > 0.0).then(|| {
        (
            st.lpp.score_var(&pl, enc_hr.embedding),
            st.lpp.score_var(&pl, enc_sr.embedding),
        )
    });
    let (perc_hr, perc_sr) = if w.perceptual > 0.0 {
        let pp = perc.params().bind(&tape, false);
        (perc.forward(&pp, hr), perc.forward(&pp, sr))
    } else {
        (Vec::new(), Vec::new())
    };
    let inputs = GeneratorLossInputs {
        hr,
        sr,
        perc_hr,
        perc_sr,
        logits,
        scores,
        form: st.form,
    };
    let out = generator_loss_var(&inputs, &w).map_err(|e| match e {
        SfdError::NonFinite { term } => diverged(step, term),
        other => other,
    })?;
    let grads = tape.backward(out.total);
    let g = st.generator.params().grads(&pg, &grads);
    st.opt_g.step(st.generator.params_mut().tensors_mut(), &g);
    if !st.all_finite() {
        return Err(diverged(step, "generator parameters"));
    }
    st.step = step;

    let loss_feat_g = logits.map(|(h, s)| feat_g_loss_var(h, s).item());
    let loss_tg_g = scores.map(|(h, s)| tg_g_loss_var(h, s).item());
    Ok(LogRecord {
        step,
        phase: Phase::Adversarial,
        g_pixel: out.breakdown.pixel,
        g_perceptual: out.breakdown.perceptual,
        g_feat_adv: out.breakdown.feat_adv,
        g_text_adv: out.breakdown.text_adv,
        g_total: out.breakdown.total,
        loss_feat_g,
        loss_tg_g,
        loss_feat_d: Some(loss_feat_d),
        loss_tg_d: Some(loss_tg_d),
        d_score_hr: Some(mean_of(logits_hr, sfd_autograd::sigmoid)),
        d_score_sr: Some(mean_of(logits_sr, sfd_autograd::sigmoid)),
        s_hr: Some(mean_of(s_hr, |x| x)),
        s_sr: Some(mean_of(s_sr, |x| x)),
        elapsed_ms: None,
    })
}
