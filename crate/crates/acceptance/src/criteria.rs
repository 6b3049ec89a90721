//! The acceptance criteria as functions returning a verdict line.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRng, TestRunner};
use sfd_autograd::check::{central_difference, rel_error};
use sfd_autograd::{Tape, Tensor, Var};
use sfd_core::correlation::{average_ranks, kendall_counts, krcc, plcc, srcc, KendallCounts};
use sfd_core::encoders::{EncoderConfig, EncoderState};
use sfd_core::feat_disc::{
    feat_d_loss_ns_var, feat_d_loss_var, feat_g_loss_ns_var, feat_g_loss_var, loss_feat_d, loss_feat_g, FeatDConfig,
    FeatDState, ScoreMatrix,
};
use sfd_core::image::ImageTensor;
use sfd_core::iqa::{combine_scores, sfd_iqa_scores, weighted_average_score, IqaConfig, IqaModel};
use sfd_core::metrics::{psnr_y, rgb_to_y, ssim_y, YImage};
use sfd_core::text_disc::{
    loss_tg_d, loss_tg_g, relative_score, tg_d_loss_ns_var, tg_d_loss_var, tg_g_loss_ns_var, tg_g_loss_var, LppConfig,
    PromptPair, RelScore,
};
use sfd_core::training::{
    generator_loss_var, level_ratios, read_log, run_training, synth_image, AdversarialForm, Checkpoint, EvalReport,
    Frozen, GeneratorLossInputs, LossWeights, PerceptualConfig, PerceptualExtractor, RunConfig, RunOutcome,
};
use sfd_core::Result;

use crate::{quality_ladder, Ladder, LadderResult};

pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {} ({:.1} s): {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Runs `f`, turning an error into a failing verdict.
pub fn judge(id: u8, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Verdict {
    let t = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    Verdict {
        id,
        name,
        pass,
        detail,
        elapsed: t.elapsed(),
    }
}

/// Collects named checks and reports the failing ones.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool) {
        self.count += 1;
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn close(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.check(&format!("{name}: {got} vs {want}"), (got - want).abs() <= tol);
    }

    fn finish(self, extra: String) -> (bool, String) {
        if self.failed.is_empty() {
            (true, format!("{} checks{extra}", self.count))
        } else {
            (false, format!("{} of {} failed: {}{extra}", self.failed.len(), self.count, self.failed.join("; ")))
        }
    }
}

const LN_QUARTER: f64 = -1.386_294_361_119_890_6;

pub fn equation_unit_suite() -> Result<(bool, String)> {
    let t = Instant::now();
    let mut c = Checks::default();
    let zero = ScoreMatrix::uniform(2, 4, 4, 0.0);
    c.close("feat-D loss at sigma 0.5", loss_feat_d(&zero, &zero)?, LN_QUARTER, 1e-9);
    c.close("feat-G loss at sigma 0.5", loss_feat_g(&zero, &zero)?, LN_QUARTER, 1e-9);
    let half = [RelScore::new(0.5)?, RelScore::new(0.5)?];
    c.close("TG-D loss at 0.5", loss_tg_d(&half, &half)?, LN_QUARTER, 1e-9);
    c.close("TG-G loss at 0.5", loss_tg_g(&half, &half)?, LN_QUARTER, 1e-9);
    for s in [-1.0, -0.3, 0.0, 0.42, 1.0] {
        c.close("relative score symmetry", relative_score(s, s).value, 0.5, 1e-12);
    }
    for (sp, sm, shift) in [(0.3f64, -0.2, 0.7), (-0.9, 0.8, -0.4), (1.0, -1.0, 0.25), (0.1, 0.1, 0.9)] {
        let want = 1.0 / (1.0 + (-(sp - sm)).exp());
        c.close("relative score value", relative_score(sp, sm).value, want, 1e-12);
        c.close("relative score shift invariance", relative_score(sp + shift, sm + shift).value, want, 1e-12);
    }
    for (a1, a2, so, slp) in [(0.5, 0.5, 0.8, 0.2), (1.0, 0.0, 0.3, 0.9), (0.25, 0.75, 0.6, 0.4)] {
        let cfg = IqaConfig {
            alpha1: a1,
            alpha2: a2,
            ..IqaConfig::default()
        };
        c.close("weighted average", weighted_average_score(so, slp, &cfg), a1 * so + a2 * slp, 1e-15);
    }
    for s_aver in [0.0, 0.3, 0.5, 1.0] {
        c.close("zero-logit quality score", combine_scores(&zero, s_aver), 0.5 * s_aver, 1e-9);
    }
    let ms = t.elapsed().as_secs_f64() * 1e3;
    c.check(&format!("runtime {ms:.1} ms < 1 s"), ms < 1e3);
    Ok(c.finish(format!(", {ms:.1} ms")))
}

/// Central-difference step, small enough not to straddle leaky-ReLU kinks.
const FD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-3;
/// Rounding allowance, in ulps of the loss, for one forward evaluation.
const FORWARD_ULPS: f64 = 16.0;

/// Largest relative error of the tape gradient against central differences,
/// over every element of `x`.
///
/// Elements whose gradient is below what the difference quotient can resolve
/// to `GRAD_TOL` (rounding in `f` divided by the step) are compared on that
/// absolute scale instead.
fn worst_gradient_error(x: &Tensor, f: &dyn for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>) -> f64 {
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&tape, xv);
    let fx = out.item();
    let grad = tape.backward(out).get_or_zeros(xv);
    let grad = grad.as_standard_layout();
    let analytic = grad.as_slice().unwrap();
    let mut eval = |t: &Tensor| {
        let tape = Tape::new();
        f(&tape, tape.constant(t.clone())).item()
    };
    let floor = FORWARD_ULPS * f64::EPSILON * fx.abs().max(1.0) / FD_STEP / GRAD_TOL;
    (0..x.len())
        .map(|i| rel_error(analytic[i], central_difference(&mut eval, x, i, FD_STEP), floor))
        .fold(0.0, f64::max)
}

pub fn gradient_suite() -> Result<(bool, String)> {
    let t = Instant::now();
    let enc = EncoderState::from_config(&EncoderConfig::default())?;
    let feat_d = FeatDState::new(&FeatDConfig::default(), enc.pyramid_channels(), level_ratios(&enc)?, 11)?;
    let (lpp, _) = PromptPair::from_config(&LppConfig::default(), enc.embed_dim(), None)?;
    let perc = PerceptualExtractor::from_config(&PerceptualConfig::default(), &enc)?;
    let mut report = Vec::new();
    let mut worst = 0.0f64;

    // Generator-side Feat-D loss with respect to each SR feature level.
    let hr32 = synth_image(32, 1);
    let sr32 = synth_image(32, 2);
    let (hr_batch, sr_batch) = (hr32.to_batch(), sr32.to_batch());
    let levels = |img: &Tensor| -> Vec<Tensor> {
        let tape = Tape::new();
        let p = enc.params().bind(&tape, false);
        let out = enc.forward(&p, tape.constant(img.clone()));
        out.levels.iter().map(|v| (*v.value()).clone()).collect()
    };
    let (hr_levels, sr_levels) = (levels(&hr_batch), levels(&sr_batch));
    for (name, g) in [
        ("feat_g", feat_g_loss_var as for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>),
        ("feat_g_ns", feat_g_loss_ns_var),
    ] {
        for level in 0..3 {
            let err = worst_gradient_error(&sr_levels[level], &|tape, x| {
                let p = feat_d.params().bind(tape, false);
                let hr: [Var<'_>; 3] = [0, 1, 2].map(|i| tape.constant(hr_levels[i].clone()));
                let mut sr: [Var<'_>; 3] = [0, 1, 2].map(|i| tape.constant(sr_levels[i].clone()));
                sr[level] = x;
                g(feat_d.forward(&p, hr).logits, feat_d.forward(&p, sr).logits)
            });
            worst = worst.max(err);
            report.push(format!("{name}/F_m{} {err:.1e}", level + 1));
        }
    }

    // Generator-side TG loss with respect to the SR global embedding.
    let emb = |phase: f64| -> Tensor {
        let v: Vec<f64> = (0..2 * enc.embed_dim()).map(|i| (i as f64 * 0.731 + phase).sin()).collect();
        Tensor::from_shape_vec(vec![2, enc.embed_dim()], v).unwrap()
    };
    let (f_hr, f_sr) = (emb(0.0), emb(1.3));
    for (name, g) in [
        ("tg_g", tg_g_loss_var as for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>),
        ("tg_g_ns", tg_g_loss_ns_var),
    ] {
        let err = worst_gradient_error(&f_sr, &|tape, x| {
            let p = lpp.params().bind(tape, false);
            g(lpp.score_var(&p, tape.constant(f_hr.clone())), lpp.score_var(&p, x))
        });
        worst = worst.max(err);
        report.push(format!("{name}/f_out {err:.1e}"));
    }

    // Full generator objective with respect to SR pixels of a 3x16x16 patch.
    let hr16 = synth_image(16, 3).to_batch();
    let sr16 = synth_image(16, 4).to_batch();
    let w = LossWeights {
        pixel: 1.0,
        perceptual: 1.0,
        feat_adv: 0.5,
        text_adv: 0.5,
    };
    for form in [AdversarialForm::Literal, AdversarialForm::NonSaturating] {
        let err = worst_gradient_error(&sr16, &|tape, x| {
            let pe = enc.params().bind(tape, false);
            let pd = feat_d.params().bind(tape, false);
            let pl = lpp.params().bind(tape, false);
            let pp = perc.params().bind(tape, false);
            let hr = tape.constant(hr16.clone());
            let (eh, es) = (enc.forward(&pe, hr), enc.forward(&pe, x));
            let inp = GeneratorLossInputs {
                hr,
                sr: x,
                perc_hr: perc.forward(&pp, hr),
                perc_sr: perc.forward(&pp, x),
                logits: Some((feat_d.forward(&pd, eh.levels).logits, feat_d.forward(&pd, es.levels).logits)),
                scores: Some((lpp.score_var(&pl, eh.embedding), lpp.score_var(&pl, es.embedding))),
                form,
            };
            generator_loss_var(&inp, &w).expect("finite loss").total
        });
        worst = worst.max(err);
        report.push(format!("total/{form:?} {err:.1e}"));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= GRAD_TOL && secs < 30.0;
    Ok((pass, format!("worst rel err {worst:.2e} (tol {GRAD_TOL:e}); {}", report.join(", "))))
}

fn logit_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        -50.0f64..50.0,
        Just(1e6),
        Just(-1e6),
        Just(0.0),
    ]
}

fn score_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![
        0.0f64..=1.0,
        Just(0.0),
        Just(1.0),
        Just(1e-7),
        Just(1.0 - 1e-7),
        0.0f64..1e-6,
    ]
}

type LossFn = for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>;

fn finite_with_grads(hr: &[f64], sr: &[f64], f: LossFn) -> bool {
    let tape = Tape::new();
    let h = tape.param(Tensor::from_shape_vec(vec![hr.len()], hr.to_vec()).unwrap());
    let s = tape.param(Tensor::from_shape_vec(vec![sr.len()], sr.to_vec()).unwrap());
    let l = f(h, s);
    if !l.item().is_finite() {
        return false;
    }
    let g = tape.backward(l);
    g.get_or_zeros(h).iter().chain(g.get_or_zeros(s).iter()).all(|v| v.is_finite())
}

pub fn stability_suite() -> Result<(bool, String)> {
    let cases = 10_000;
    let mut runner = TestRunner::new_with_rng(
        PtConfig {
            cases,
            failure_persistence: None,
            ..PtConfig::default()
        },
        TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let logits = || proptest::collection::vec(logit_strategy(), 1..16);
    let scores = || proptest::collection::vec(score_strategy(), 1..16);
    let strategy = (logits(), logits(), scores(), scores());
    let feat: [(&str, LossFn); 4] = [
        ("feat_d", feat_d_loss_var),
        ("feat_g", feat_g_loss_var),
        ("feat_d_ns", feat_d_loss_ns_var),
        ("feat_g_ns", feat_g_loss_ns_var),
    ];
    let tg: [(&str, LossFn); 4] = [
        ("tg_d", tg_d_loss_var),
        ("tg_g", tg_g_loss_var),
        ("tg_d_ns", tg_d_loss_ns_var),
        ("tg_g_ns", tg_g_loss_ns_var),
    ];
    let outcome = runner.run(&strategy, |(lh, ls, sh, ss)| {
        for (name, f) in feat {
            prop_assert!(finite_with_grads(&lh, &ls, f), "{} non-finite at {:?} / {:?}", name, lh, ls);
        }
        for (name, f) in tg {
            prop_assert!(finite_with_grads(&sh, &ss, f), "{} non-finite at {:?} / {:?}", name, sh, ss);
        }
        Ok(())
    });
    Ok(match outcome {
        Ok(()) => (true, format!("{cases} cases, 8 losses and their gradients finite")),
        Err(e) => (false, e.to_string()),
    })
}

/// Whether training-time adversarial separation holds on held-out pairs.
pub fn separation(report: &EvalReport, patches: &EvalReport, train_secs: f64) -> (bool, String) {
    let gap = report.d_score_hr - report.d_score_sr;
    let pass = gap > 0.2 && report.s_hr > report.s_sr && train_secs < 600.0;
    (
        pass,
        format!(
            "held-out pairs: D(HR) {:.4} - D(SR) {:.4} = {gap:.4} (> 0.2), s_hr {:.5} vs s_sr {:.5}; \
             patches: gap {:.4}, s_hr {:.5} vs s_sr {:.5}; train+eval {train_secs:.0} s",
            report.d_score_hr,
            report.d_score_sr,
            report.s_hr,
            report.s_sr,
            patches.d_score_hr - patches.d_score_sr,
            patches.s_hr,
            patches.s_sr,
        ),
    )
}

/// Adversarial vs L1-only on held-out patches; whole-image numbers are
/// reported alongside.
pub fn perceptual_effect(
    adv_patches: &EvalReport,
    l1_patches: &EvalReport,
    adv_whole: &EvalReport,
    l1_whole: &EvalReport,
) -> (bool, String) {
    let drop = l1_patches.psnr_db - adv_patches.psnr_db;
    let pass = adv_patches.feature_l1 < l1_patches.feature_l1 && drop <= 1.5;
    (
        pass,
        format!(
            "patches: feature L1 adversarial {:.5} vs L1-only {:.5}, PSNR {:.2} vs {:.2} dB (drop {drop:.2} <= 1.5); \
             whole images: feature L1 {:.5} vs {:.5}, PSNR {:.2} vs {:.2} dB",
            adv_patches.feature_l1,
            l1_patches.feature_l1,
            adv_patches.psnr_db,
            l1_patches.psnr_db,
            adv_whole.feature_l1,
            l1_whole.feature_l1,
            adv_whole.psnr_db,
            l1_whole.psnr_db,
        ),
    )
}

/// Blur and noise ladders on the held-out images.
pub fn iqa_monotonicity(ck: &Checkpoint, images: &[ImageTensor]) -> Result<(bool, String)> {
    let t = Instant::now();
    let blur = quality_ladder(ck, images, Ladder::Blur)?;
    let noise = quality_ladder(ck, images, Ladder::Noise)?;
    let secs = t.elapsed().as_secs_f64();
    let fmt = |name: &str, r: &LadderResult| {
        let means: Vec<String> = r.level_means.iter().map(|m| format!("{m:.3}")).collect();
        format!("{name} SRCC {:.4} (level means {})", r.srcc, means.join(" "))
    };
    let pass = blur.srcc <= -0.5 && noise.srcc <= -0.5 && secs < 60.0;
    Ok((
        pass,
        format!("{}; {}; scoring {secs:.1} s", fmt("blur", &blur), fmt("noise", &noise)),
    ))
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_kendall(x: &[f64], y: &[f64]) -> KendallCounts {
    let n = x.len();
    let (mut score, mut tx, mut ty, mut txy) = (0i64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            tx += (dx == 0.0) as u64;
            ty += (dy == 0.0) as u64;
            txy += (dx == 0.0 && dy == 0.0) as u64;
            score += (dx * dy > 0.0) as i64 - (dx * dy < 0.0) as i64;
        }
    }
    KendallCounts {
        pairs: (n * (n - 1) / 2) as u64,
        ties_x: tx,
        ties_y: ty,
        ties_xy: txy,
        score,
    }
}

fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn agree(fast: Result<f64>, slow: Option<f64>, tol: f64) -> bool {
    match (fast, slow) {
        (Ok(a), Some(b)) => (a - b).abs() <= tol,
        (Err(_), None) => true,
        _ => false,
    }
}

pub fn correlation_oracle() -> Result<(bool, String)> {
    let cases = 1000;
    let mut runner = TestRunner::new_with_rng(
        PtConfig {
            cases,
            failure_persistence: None,
            ..PtConfig::default()
        },
        TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let strategy = (2usize..=50, any::<bool>()).prop_flat_map(|(n, tied)| {
        let values = if tied {
            (0i32..6).prop_map(f64::from).boxed()
        } else {
            (-100.0f64..100.0).boxed()
        };
        (
            proptest::collection::vec(values.clone(), n),
            proptest::collection::vec(values, n),
        )
    });
    let outcome = runner.run(&strategy, |(x, y)| {
        prop_assert_eq!(average_ranks(&x), brute_ranks(&x));
        let counts = brute_kendall(&x, &y);
        prop_assert_eq!(kendall_counts(&x, &y), counts);
        prop_assert!(agree(krcc(&x, &y), counts.tau_b().ok(), 0.0), "krcc");
        prop_assert!(agree(srcc(&x, &y), brute_pearson(&brute_ranks(&x), &brute_ranks(&y)), 1e-12), "srcc");
        prop_assert!(agree(plcc(&x, &y), brute_pearson(&x, &y), 1e-12), "plcc");
        Ok(())
    });
    Ok(match outcome {
        Ok(()) => (true, format!("{cases} cases (n <= 50, half with ties): ranks, tau-b counts exact; plcc/srcc within 1e-12")),
        Err(e) => (false, e.to_string()),
    })
}

pub fn metric_fidelity() -> Result<(bool, String)> {
    let mut c = Checks::default();
    let a = YImage {
        data: Array2::from_elem((24, 24), 0.4),
    };
    let b = YImage {
        data: Array2::from_elem((24, 24), 0.5),
    };
    c.close("PSNR constant offset 0.1", psnr_y(&a, &b, 1.0)?.db, 20.0, 1e-6);
    let img = synth_image(32, 5);
    let y = rgb_to_y(&img);
    c.close("SSIM identity", ssim_y(&y, &y)?, 1.0, 1e-12);
    let black = rgb_to_y(&ImageTensor::filled(8, 8, 0.0)?);
    let white = rgb_to_y(&ImageTensor::filled(8, 8, 1.0)?);
    c.close("Y of black", black.data[[1, 6]], 16.0 / 255.0, 1e-9);
    c.close("Y of white", white.data[[7, 0]], 235.0 / 255.0, 1e-9);
    Ok(c.finish(String::new()))
}

fn file_bytes(p: &Path) -> Result<Vec<u8>> {
    std::fs::read(p).map_err(|e| sfd_core::SfdError::io(p, e))
}

/// Two identical short runs, then a run interrupted at `split` and resumed.
pub fn reproducibility(base: &RunConfig, root: &Path, split: u64) -> Result<(bool, String)> {
    let mut c = Checks::default();
    let run = |dir: &str, steps: u64, resume: Option<&Path>| -> Result<RunOutcome> {
        let mut cfg = base.clone();
        cfg.output_dir = root.join(dir);
        cfg.total_steps = steps;
        run_training(&cfg, resume)
    };
    let a = run("a", base.total_steps, None)?;
    let b = run("b", base.total_steps, None)?;
    c.check("identical logs", file_bytes(&a.log_path)? == file_bytes(&b.log_path)?);
    c.check(
        "identical checkpoint lists",
        a.checkpoints.len() == b.checkpoints.len() && !a.checkpoints.is_empty(),
    );
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        c.check(&format!("identical {}", x.display()), file_bytes(x)? == file_bytes(y)?);
    }
    c.check("identical final checkpoints", file_bytes(&a.final_checkpoint)? == file_bytes(&b.final_checkpoint)?);
    let first = run("r", split, None)?;
    let resumed = run("r", base.total_steps, Some(&first.final_checkpoint))?;
    c.check("resumed log equals uninterrupted", file_bytes(&resumed.log_path)? == file_bytes(&a.log_path)?);
    c.check(
        "resumed final checkpoint equals uninterrupted",
        file_bytes(&resumed.final_checkpoint)? == file_bytes(&a.final_checkpoint)?,
    );
    let records = read_log(&a.log_path)?.len() as u64;
    c.check("one log record per step", records == base.total_steps);
    Ok(c.finish(format!(
        ", {} steps with {} pretrain, resume split at step {split}",
        base.total_steps, base.pretrain_steps
    )))
}

/// Frozen checksums of every run against freshly built components, and
/// model checksums before and after IQA scoring.
pub fn frozen_audit(runs: &[(&RunConfig, &RunOutcome, &Checkpoint)], images: &[ImageTensor]) -> Result<(bool, String)> {
    let mut c = Checks::default();
    for (i, (cfg, outcome, ck)) in runs.iter().enumerate() {
        let fresh = Frozen::from_config(cfg)?;
        let (enc, perc) = (fresh.encoder.checksum(), fresh.perceptual.checksum());
        c.check(&format!("run {i}: encoder checksum after training"), outcome.encoder_checksum == enc);
        c.check(&format!("run {i}: perceptual checksum after training"), outcome.perceptual_checksum == perc);
        c.check(&format!("run {i}: checkpoint encoder"), ck.encoder.checksum() == enc && ck.meta.encoder_checksum == enc);
        c.check(&format!("run {i}: checkpoint perceptual record"), ck.meta.perceptual_checksum == perc);
    }
    let (_, _, ck) = runs[0];
    let before = (ck.state.checksum(), ck.encoder.checksum(), ck.text.as_ref().map(|t| t.params().checksum()));
    let model = IqaModel {
        encoder: &ck.encoder,
        feat_d: &ck.state.feat_d,
        lpp: &ck.state.lpp,
        text: ck.text.as_ref(),
    };
    let scores = sfd_iqa_scores(images, &model, &IqaConfig::default())?;
    let again = sfd_iqa_scores(images, &model, &IqaConfig::default())?;
    let after = (ck.state.checksum(), ck.encoder.checksum(), ck.text.as_ref().map(|t| t.params().checksum()));
    c.check("IQA scoring leaves G, D, LPP, encoder and text unchanged", before == after);
    c.check("IQA scoring is repeatable", scores == again);
    Ok(c.finish(format!(", {} runs audited, {} images scored twice", runs.len(), images.len())))
}
