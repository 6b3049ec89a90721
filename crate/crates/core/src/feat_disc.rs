//! Feature discriminator (Feat-D): a U-Net over the three middle-feature
//! levels that emits one raw logit per finest-level location, and its
//! adversarial losses.
//!
//! Every stage runs at `fusion_channels`. Down path: the finest level is
//! projected, then each strided stage descends one level and adds the
//! projection of the matching pyramid level; stages past the coarsest level
//! halve again. Up path: one
//! nearest-upsample + conv stage per down stage, with additive skips, ending
//! at the finest level's resolution. A 1×1 head produces the logits; it is
//! the only conv without spectral normalization.

use ndarray::{Array2, Array3, Axis, Ix4};
use serde::{Deserialize, Serialize};
use sfd_autograd::{log_sigmoid, resize_nearest, spectral_normalize, Tape, Tensor, Var};

use crate::encoders::FeaturePyramid;
use crate::error::{Result, SfdError};
use crate::nn::{Conv, Init, ParamStore, LRELU_SLOPE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscNorm {
    #[default]
    Spectral,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatDConfig {
    pub fusion_channels: usize,
    pub num_upsampling_stages: usize,
    pub norm: DiscNorm,
}

impl Default for FeatDConfig {
    fn default() -> Self {
        Self {
            fusion_channels: 32,
            num_upsampling_stages: 3,
            norm: DiscNorm::Spectral,
        }
    }
}

impl FeatDConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_upsampling_stages < 3 {
            return Err(SfdError::Config(format!(
                "feat_d.num_upsampling_stages must be >= 3, got {}",
                self.num_upsampling_stages
            )));
        }
        if self.fusion_channels == 0 {
            return Err(SfdError::Config("feat_d.fusion_channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw per-location logits, `[batch, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub logits: Array3<f64>,
}

impl ScoreMatrix {
    pub fn single(logits: Array2<f64>) -> Self {
        Self {
            logits: logits.insert_axis(Axis(0)),
        }
    }

    pub fn uniform(batch: usize, h: usize, w: usize, logit: f64) -> Self {
        Self {
            logits: Array3::from_elem((batch, h, w), logit),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.logits.dim()
    }

    /// Mean of the elementwise sigmoid.
    pub fn mean_sigmoid(&self) -> f64 {
        self.logits.mapv(sfd_autograd::sigmoid).mean().unwrap()
    }

    /// Per-image matrices of a batch.
    pub fn split(&self) -> Vec<ScoreMatrix> {
        self.logits
            .outer_iter()
            .map(|m| ScoreMatrix::single(m.to_owned()))
            .collect()
    }

    fn to_tensor(&self) -> Tensor {
        self.logits.clone().into_dyn()
    }
}

#[derive(Clone, Debug)]
struct SnRef {
    conv: usize,
    u: usize,
    v: usize,
}

/// Named intermediate activations, `[N, C, H, W]` each.
pub struct FeatDOutput<'t> {
    /// `[N, 1, H_1, W_1]`
    pub logits: Var<'t>,
    pub taps: Vec<(String, Var<'t>)>,
}

#[derive(Clone, Debug)]
pub struct FeatDState {
    config: FeatDConfig,
    params: ParamStore,
    /// Power-iteration vectors for spectral normalization.
    buffers: ParamStore,
    proj: [Conv; 3],
    downs: Vec<Conv>,
    ups: Vec<Conv>,
    conv_out: Conv,
    head: Conv,
    sn: Vec<SnRef>,
    level_channels: [usize; 3],
    level_ratios: [usize; 2],
}

const INIT_POWER_ITERS: usize = 15;

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= n);
}

impl FeatDState {
    /// `level_channels` are the pyramid channel counts, `level_ratios` the
    /// spatial ratios between consecutive levels (2 for a halving pyramid).
    pub fn new(
        config: &FeatDConfig,
        level_channels: [usize; 3],
        level_ratios: [usize; 2],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if level_ratios.iter().any(|r| *r < 2) {
            return Err(SfdError::Config(format!(
                "pyramid levels must strictly coarsen, got ratios {level_ratios:?}"
            )));
        }
        let f = config.fusion_channels;
        let n = config.num_upsampling_stages;
        let ch = |_: usize| f;
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let proj = std::array::from_fn(|i| {
            Conv::new(&mut params, &mut init, &format!("proj{i}"), level_channels[i], ch(i), 1, 1, 1.0)
        });
        let downs: Vec<Conv> = (1..=n)
            .map(|s| {
                let stride = if s <= 2 { level_ratios[s - 1] } else { 2 };
                Conv::new(&mut params, &mut init, &format!("down{s}"), ch(s - 1), ch(s), 3, stride, 1.0)
            })
            .collect();
        let ups: Vec<Conv> = (1..=n)
            .map(|k| {
                let s = n - k + 1;
                Conv::new(&mut params, &mut init, &format!("up{k}"), ch(s), ch(s - 1), 3, 1, 1.0)
            })
            .collect();
        let conv_out = Conv::new(&mut params, &mut init, "conv_out", f, f, 3, 1, 1.0);
        let head = Conv::new(&mut params, &mut init, "head", f, 1, 1, 1, 0.1);

        let mut buffers = ParamStore::new();
        let mut sn = Vec::new();
        if config.norm == DiscNorm::Spectral {
            let convs: Vec<&Conv> = proj.iter().chain(&downs).chain(&ups).chain([&conv_out]).collect();
            for conv in convs {
                let name = params.names()[conv.weight].trim_end_matches(".weight").to_string();
                let w = &params.tensors()[conv.weight];
                let rows = w.shape()[0];
                let cols = w.len() / rows;
                let u = buffers.push(format!("{name}.sn_u"), Tensor::from_shape_vec(vec![rows], init.unit_vector(rows)).unwrap());
                let v = buffers.push(format!("{name}.sn_v"), crate::nn::zeros(&[cols]));
                sn.push(SnRef { conv: conv.weight, u, v });
            }
        }
        let mut state = Self {
            config: config.clone(),
            params,
            buffers,
            proj,
            downs,
            ups,
            conv_out,
            head,
            sn,
            level_channels,
            level_ratios,
        };
        for _ in 0..INIT_POWER_ITERS {
            state.power_iterate();
        }
        Ok(state)
    }

    pub fn config(&self) -> &FeatDConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut ParamStore {
        &mut self.buffers
    }

    /// Checksum over weights and spectral-norm state.
    pub fn checksum(&self) -> String {
        format!("{}:{}", self.params.checksum(), self.buffers.checksum())
    }

    /// One power-iteration step per normalized conv, refining the `u`/`v`
    /// estimates of the leading singular vectors. Called once per
    /// discriminator update; inference never calls it.
    pub fn power_iterate(&mut self) {
        for r in &self.sn {
            let w = &self.params.tensors()[r.conv];
            let rows = w.shape()[0];
            let cols = w.len() / rows;
            let wm = w.view().into_shape_with_order((rows, cols)).unwrap();
            let u = self.buffers.tensors()[r.u].clone().into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut v = wm.t().dot(&u).to_vec();
            normalize(&mut v);
            let mut u_new = wm.dot(&ndarray::Array1::from(v.clone())).to_vec();
            normalize(&mut u_new);
            self.buffers.tensors_mut()[r.u] = Tensor::from_shape_vec(vec![rows], u_new).unwrap();
            self.buffers.tensors_mut()[r.v] = Tensor::from_shape_vec(vec![cols], v).unwrap();
        }
    }

    /// Names of the intermediate activations exposed by [`forward`](Self::forward).
    pub fn tap_names(&self) -> Vec<String> {
        let n = self.config.num_upsampling_stages;
        (1..=n)
            .map(|s| format!("feat-d-down-{s}"))
            .chain((1..=n).map(|k| format!("feat-d-upsample-{k}")))
            .collect()
    }

    fn weight<'t>(&self, p: &[Var<'t>], conv: &Conv) -> Var<'t> {
        match self.sn.iter().find(|r| r.conv == conv.weight) {
            Some(r) => {
                let u = self.buffers.tensors()[r.u].as_slice().unwrap();
                let v = self.buffers.tensors()[r.v].as_slice().unwrap();
                spectral_normalize(p[conv.weight], u, v)
            }
            None => p[conv.weight],
        }
    }

    fn conv<'t>(&self, p: &[Var<'t>], conv: &Conv, x: Var<'t>) -> Var<'t> {
        conv.forward_with(self.weight(p, conv), p, x)
    }

    pub fn check_levels(&self, shapes: [&[usize]; 3]) -> Result<()> {
        for (i, s) in shapes.iter().enumerate() {
            if s.len() != 4 || s[1] != self.level_channels[i] {
                return Err(SfdError::Shape(format!(
                    "pyramid level {} has shape {s:?}, Feat-D expects {} channels",
                    i + 1,
                    self.level_channels[i]
                )));
            }
        }
        for i in 0..2 {
            let (a, b) = (shapes[i], shapes[i + 1]);
            let r = self.level_ratios[i];
            if a[0] != b[0] || a[2] != b[2] * r || a[3] != b[3] * r {
                return Err(SfdError::Shape(format!(
                    "pyramid levels {} and {} ({a:?}, {b:?}) are not related by ratio {r}",
                    i + 1,
                    i + 2
                )));
            }
        }
        Ok(())
    }

    /// Forward on `[N, C_i, H_i, W_i]` levels. Panics on shape mismatch; use
    /// [`check_levels`](Self::check_levels) first for untrusted input.
    pub fn forward<'t>(&self, p: &[Var<'t>], levels: [Var<'t>; 3]) -> FeatDOutput<'t> {
        let n = self.config.num_upsampling_stages;
        let mut taps = Vec::new();
        let mut xs = vec![self.conv(p, &self.proj[0], levels[0]).leaky_relu(LRELU_SLOPE)];
        for s in 1..=n {
            let mut d = self.conv(p, &self.downs[s - 1], xs[s - 1]);
            if s <= 2 {
                let mut pr = self.conv(p, &self.proj[s], levels[s]);
                let (ds, ps) = (d.shape(), pr.shape());
                if ds[2..] != ps[2..] {
                    pr = resize_nearest(pr, ds[2], ds[3]);
                }
                d = d.add(pr);
            }
            let x = d.leaky_relu(LRELU_SLOPE);
            taps.push((format!("feat-d-down-{s}"), x));
            xs.push(x);
        }
        let mut y = xs[n];
        for k in 1..=n {
            let skip = xs[n - k];
            let ss = skip.shape();
            y = resize_nearest(y, ss[2], ss[3]);
            y = self.conv(p, &self.ups[k - 1], y).leaky_relu(LRELU_SLOPE);
            taps.push((format!("feat-d-upsample-{k}"), y));
            y = y.add(skip);
        }
        let y = self.conv(p, &self.conv_out, y).leaky_relu(LRELU_SLOPE);
        let logits = self.head.forward(p, y);
        FeatDOutput { logits, taps }
    }

    /// Scores a batch of pyramids (all the same shape).
    pub fn score(&self, pyramids: &[FeaturePyramid]) -> Result<ScoreMatrix> {
        let batch = stack_pyramids(pyramids)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let levels = batch.map(|t| tape.constant(t));
        self.check_levels([&levels[0].shape(), &levels[1].shape(), &levels[2].shape()])?;
        let out = self.forward(&p, levels);
        logits_to_matrix(&out.logits.value())
    }
}

pub(crate) fn logits_to_matrix(t: &Tensor) -> Result<ScoreMatrix> {
    let t4 = t.clone().into_dimensionality::<Ix4>().map_err(|e| SfdError::Shape(e.to_string()))?;
    let m = t4.index_axis_move(Axis(1), 0);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SfdError::NonFinite {
            term: "Feat-D logits".into(),
        });
    }
    Ok(ScoreMatrix { logits: m })
}

pub fn stack_pyramids(pyramids: &[FeaturePyramid]) -> Result<[Tensor; 3]> {
    let first = pyramids
        .first()
        .ok_or_else(|| SfdError::Shape("empty pyramid batch".into()))?;
    let mut out: Vec<Tensor> = Vec::with_capacity(3);
    for i in 0..3 {
        let (c, h, w) = first.levels[i].dim();
        let mut t = ndarray::Array4::zeros((pyramids.len(), c, h, w));
        for (n, p) in pyramids.iter().enumerate() {
            if p.levels[i].dim() != (c, h, w) {
                return Err(SfdError::Shape("pyramids in a batch differ in shape".into()));
            }
            t.index_axis_mut(Axis(0), n).assign(&p.levels[i]);
        }
        out.push(t.into_dyn());
    }
    Ok([out.remove(0), out.remove(0), out.remove(0)])
}

/// Feat-D score matrix of one image's pyramid.
pub fn feat_d_forward(pyr: &FeaturePyramid, d: &FeatDState) -> Result<ScoreMatrix> {
    d.score(std::slice::from_ref(pyr))
}

/// Discriminator loss on the tape:
/// `E[log(1 - σ(hr))] + E[log σ(sr)]`, via `log(1 - σ(x)) = log σ(-x)`.
pub fn feat_d_loss_var<'t>(hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
    hr.neg().log_sigmoid().mean_all().add(sr.log_sigmoid().mean_all())
}

/// Generator-side loss on the tape: `E[log σ(hr)] + E[log(1 - σ(sr))]`.
pub fn feat_g_loss_var<'t>(hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
    hr.log_sigmoid().mean_all().add(sr.neg().log_sigmoid().mean_all())
}

/// Non-saturating counterpart of [`feat_d_loss_var`],
/// `-E[log σ(hr)] - E[log(1 - σ(sr))]`: same minimizer and gradient signs,
/// but the gradient does not vanish when D scores HR as fake.
pub fn feat_d_loss_ns_var<'t>(hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
    hr.log_sigmoid().mean_all().add(sr.neg().log_sigmoid().mean_all()).neg()
}

/// Non-saturating counterpart of [`feat_g_loss_var`],
/// `-E[log(1 - σ(hr))] - E[log σ(sr)]`.
pub fn feat_g_loss_ns_var<'t>(hr: Var<'t>, sr: Var<'t>) -> Var<'t> {
    hr.neg().log_sigmoid().mean_all().add(sr.log_sigmoid().mean_all()).neg()
}

fn check_pair(hr: &ScoreMatrix, sr: &ScoreMatrix) -> Result<()> {
    if hr.logits.dim() != sr.logits.dim() {
        return Err(SfdError::Shape(format!(
            "score matrices differ: {:?} vs {:?}",
            hr.logits.dim(),
            sr.logits.dim()
        )));
    }
    if hr.logits.iter().chain(sr.logits.iter()).any(|v| !v.is_finite()) {
        return Err(SfdError::NonFinite {
            term: "score matrix".into(),
        });
    }
    Ok(())
}

fn eval_pair(hr: &ScoreMatrix, sr: &ScoreMatrix, f: for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>) -> Result<f64> {
    check_pair(hr, sr)?;
    let tape = Tape::new();
    Ok(f(tape.constant(hr.to_tensor()), tape.constant(sr.to_tensor())).item())
}

pub fn loss_feat_d(sm_hr: &ScoreMatrix, sm_sr: &ScoreMatrix) -> Result<f64> {
    eval_pair(sm_hr, sm_sr, feat_d_loss_var)
}

pub fn loss_feat_g(sm_hr: &ScoreMatrix, sm_sr: &ScoreMatrix) -> Result<f64> {
    eval_pair(sm_hr, sm_sr, feat_g_loss_var)
}

/// `log(1 - σ(x))` for callers outside the tape.
pub fn log_one_minus_sigmoid(x: f64) -> f64 {
    log_sigmoid(-x)
}
