//! The composite generator objective.

use serde::{Deserialize, Serialize};
use sfd_autograd::{Tape, Var};

use crate::error::{ensure_finite, Result, SfdError};
use crate::feat_disc::{feat_d_loss_ns_var, feat_d_loss_var, feat_g_loss_ns_var, feat_g_loss_var, ScoreMatrix};
use crate::image::{stack, ImageTensor};
use crate::text_disc::{tg_d_loss_ns_var, tg_d_loss_var, tg_g_loss_ns_var, tg_g_loss_var, RelScore};

use super::perceptual::PerceptualExtractor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub feat_adv: f64,
    pub text_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 1e-2,
            perceptual: 1.0,
            feat_adv: 5e-3,
            text_adv: 5e-3,
        }
    }
}

impl LossWeights {
    pub const PIXEL_ONLY: LossWeights = LossWeights {
        pixel: 1.0,
        perceptual: 0.0,
        feat_adv: 0.0,
        text_adv: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.pixel, self.perceptual, self.feat_adv, self.text_adv]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SfdError::Config(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(SfdError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Which form of the adversarial losses is optimized. `Literal` minimizes
/// `E[log(1 - D(hr))] + E[log D(sr)]` (and its generator mirror) as written;
/// `NonSaturating` minimizes `-E[log D(hr)] - E[log(1 - D(sr))]`, which has
/// the same minimizer and gradient signs but keeps a restoring gradient when
/// both scores drift toward "fake". Logged loss values always use the
/// literal form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    Literal,
    #[default]
    NonSaturating,
}

impl AdversarialForm {
    pub fn feat_d<'t>(self, hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
        match self {
            Self::Literal => feat_d_loss_var(hr, sr),
            Self::NonSaturating => feat_d_loss_ns_var(hr, sr),
        }
    }

    pub fn feat_g<'t>(self, hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
        match self {
            Self::Literal => feat_g_loss_var(hr, sr),
            Self::NonSaturating => feat_g_loss_ns_var(hr, sr),
        }
    }

    pub fn tg_d<'t>(self, hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
        match self {
            Self::Literal => tg_d_loss_var(hr, sr),
            Self::NonSaturating => tg_d_loss_ns_var(hr, sr),
        }
    }

    pub fn tg_g<'t>(self, hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
        match self {
            Self::Literal => tg_g_loss_var(hr, sr),
            Self::NonSaturating => tg_g_loss_ns_var(hr, sr),
        }
    }
}

pub const TERM_NAMES: [&str; 4] = ["pixel", "perceptual", "feat_adv", "text_adv"];

/// Weighted terms; they sum to `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub perceptual: f64,
    pub feat_adv: f64,
    pub text_adv: f64,
    pub total: f64,
}

/// Generator-side inputs on a tape. HR-side values are expected to be
/// constants. Adversarial inputs may be omitted when their weight is zero.
pub struct GeneratorLossInputs<'t> {
    pub hr: Var<'t>,
    pub sr: Var<'t>,
    pub perc_hr: Vec<Var<'t>>,
    pub perc_sr: Vec<Var<'t>>,
    /// Feat-D logits `(hr, sr)`.
    pub logits: Option<(Var<'t>, Var<'t>)>,
    /// Relative scores `(hr, sr)`.
    pub scores: Option<(Var<'t>, Var<'t>)>,
    pub form: AdversarialForm,
}

pub struct GeneratorLossVars<'t> {
    pub total: Var<'t>,
    /// Unweighted terms in [`TERM_NAMES`] order; `None` when skipped.
    pub raw: [Option<Var<'t>>; 4],
    pub breakdown: LossBreakdown,
}

fn mean_abs_diff<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.sub(b).abs().mean_all()
}

/// Terms with zero weight are not evaluated and contribute exactly zero.
pub fn generator_loss_var<'t>(inp: &GeneratorLossInputs<'t>, w: &LossWeights) -> Result<GeneratorLossVars<'t>> {
    let tape = inp.sr.tape();
    let mut raw: [Option<Var<'t>>; 4] = [None; 4];
    if w.pixel > 0.0 {
        raw[0] = Some(mean_abs_diff(inp.hr, inp.sr));
    }
    if w.perceptual > 0.0 {
        let terms: Vec<Var<'t>> = inp
            .perc_hr
            .iter()
            .zip(&inp.perc_sr)
            .map(|(h, s)| mean_abs_diff(*h, *s))
            .collect();
        raw[1] = Some(sfd_autograd::sum_vars(&terms));
    }
    if w.feat_adv > 0.0 {
        let (hr, sr) = inp
            .logits
            .ok_or_else(|| SfdError::Config("feat_adv > 0 needs Feat-D logits".into()))?;
        raw[2] = Some(inp.form.feat_g(hr, sr));
    }
    if w.text_adv > 0.0 {
        let (hr, sr) = inp
            .scores
            .ok_or_else(|| SfdError::Config("text_adv > 0 needs relative scores".into()))?;
        raw[3] = Some(inp.form.tg_g(hr, sr));
    }
    let weights = w.as_array();
    let mut weighted = [0.0; 4];
    let mut total = tape.scalar(0.0);
    for (i, term) in raw.iter().enumerate() {
        if let Some(v) = term {
            ensure_finite(v.item(), &format!("generator loss term `{}`", TERM_NAMES[i]))?;
            let scaled = v.scale(weights[i]);
            weighted[i] = scaled.item();
            total = total.add(scaled);
        }
    }
    let breakdown = LossBreakdown {
        pixel: weighted[0],
        perceptual: weighted[1],
        feat_adv: weighted[2],
        text_adv: weighted[3],
        total: total.item(),
    };
    Ok(GeneratorLossVars { total, raw, breakdown })
}

/// Discriminator outputs for the batch being scored.
pub struct AdversarialScores {
    pub sm_hr: ScoreMatrix,
    pub sm_sr: ScoreMatrix,
    pub s_hr: Vec<RelScore>,
    pub s_sr: Vec<RelScore>,
}

/// Evaluates the objective, with the adversarial terms in literal form, on
/// plain values.
pub fn total_generator_loss(
    hr: &[ImageTensor],
    sr: &[ImageTensor],
    perc: &PerceptualExtractor,
    adv: &AdversarialScores,
    w: &LossWeights,
) -> Result<(f64, LossBreakdown)> {
    w.validate()?;
    let (hr_t, sr_t) = (stack(hr)?, stack(sr)?);
    if hr_t.shape() != sr_t.shape() {
        return Err(SfdError::Shape(format!("hr {:?} vs sr {:?}", hr_t.shape(), sr_t.shape())));
    }
    let tape = Tape::new();
    let pp = perc.params().bind(&tape, false);
    let hr_v = tape.constant(hr_t);
    let sr_v = tape.constant(sr_t);
    let scores = |s: &[RelScore]| {
        sfd_autograd::Tensor::from_shape_vec(vec![s.len()], s.iter().map(|r| r.value).collect()).unwrap()
    };
    let inp = GeneratorLossInputs {
        hr: hr_v,
        sr: sr_v,
        perc_hr: perc.forward(&pp, hr_v),
        perc_sr: perc.forward(&pp, sr_v),
        logits: Some((
            tape.constant(adv.sm_hr.logits.clone().into_dyn()),
            tape.constant(adv.sm_sr.logits.clone().into_dyn()),
        )),
        scores: Some((tape.constant(scores(&adv.s_hr)), tape.constant(scores(&adv.s_sr)))),
        form: AdversarialForm::Literal,
    };
    let out = generator_loss_var(&inp, w)?;
    Ok((out.breakdown.total, out.breakdown))
}
