//! Adversarial vs L1-only toy runs with held-out evaluation and quality
//! ladders.
//!
//! Usage: `toy_experiment [steps] [pretrain] [seed]`

use std::time::Instant;

use sfd_acceptance::{heldout_patch_report, heldout_report, quality_ladder, toy_config, toy_corpus, train, Ladder};
use sfd_core::degrade::{DegradationMode, DegradationParams};
use sfd_core::training::{read_log, AdversarialForm, LossWeights};

fn main() -> sfd_core::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let steps = args.first().copied().unwrap_or(500);
    let pretrain = args.get(1).copied().unwrap_or(0);
    let seed = args.get(2).copied().unwrap_or(0);
    let corpus = toy_corpus(seed)?;
    let no_adv = LossWeights {
        feat_adv: 0.0,
        text_adv: 0.0,
        ..LossWeights::default()
    };
    let variants = [
        ("adversarial", LossWeights::default()),
        ("l1_only", LossWeights::PIXEL_ONLY),
        ("no_adversarial", no_adv),
    ];
    let only = std::env::var("SFD_VARIANTS").unwrap_or_default();
    for (name, weights) in variants {
        if !only.is_empty() && !only.split(',').any(|v| v == name) {
            continue;
        }
        let t = Instant::now();
        let out = corpus.root.path().join(name);
        let mut cfg = toy_config(&corpus.train_dir, &out, steps, pretrain, weights);
        cfg.seed = seed;
        if std::env::var("SFD_FORM").as_deref() == Ok("literal") {
            cfg.adversarial_form = AdversarialForm::Literal;
        }
        if std::env::var("SFD_DEGRADE").as_deref() == Ok("parametric") {
            cfg.degradation = DegradationParams {
                mode: DegradationMode::Parametric,
                blur_sigma: env_f64("SFD_BLUR", 1.0),
                noise_sigma: env_f64("SFD_NOISE", 0.03),
                seed: 0,
            };
        }
        let run = train(&cfg)?;
        let report = heldout_report(&run.checkpoint, &corpus.heldout)?;
        println!("{name}: {} s", t.elapsed().as_secs());
        let log = read_log(&run.outcome.log_path)?;
        for r in log.iter().step_by((steps as usize / 10).max(1)) {
            println!(
                "  step {:4} g_total {:.4} d_hr {:?} d_sr {:?} s_hr {:?} s_sr {:?}",
                r.step, r.g_total, r.d_score_hr, r.d_score_sr, r.s_hr, r.s_sr
            );
        }
        println!("  {}", serde_json::to_string(&report).unwrap());
        let patches = heldout_patch_report(&run.checkpoint, &corpus.heldout)?;
        println!("  patches {}", serde_json::to_string(&patches).unwrap());
        if let Ok(keep) = std::env::var("SFD_KEEP") {
            std::fs::copy(&run.outcome.final_checkpoint, format!("{keep}/{name}.sfd")).unwrap();
        }
        if name == "adversarial" {
            for ladder in [Ladder::Blur, Ladder::Noise] {
                let r = quality_ladder(&run.checkpoint, &corpus.heldout, ladder)?;
                println!("  {ladder:?}: srcc {:.4} means {:?}", r.srcc, r.level_means);
            }
        }
    }
    Ok(())
}

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}
