//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail at toy scale; they
//! still print FAIL with their measured values, and the process only fails
//! on an unexpected verdict.

use std::time::Instant;

use sfd_acceptance::criteria::{self, judge, Verdict};
use sfd_acceptance::{heldout_patch_report, heldout_report, toy_config, toy_corpus, train, TOY_PRETRAIN, TOY_STEPS};
use sfd_acceptance::ToyRun;
use sfd_core::training::LossWeights;
use sfd_core::{Result, SfdError};

/// Criteria that fail at toy scale, with the reason printed next to them.
const KNOWN_RED: &[(u8, &str)] = &[(
    6,
    "the toy Feat-D rewards high-frequency energy, so added noise raises s_d; \
     the blur ladder passes",
)];

fn trained(run: &Result<ToyRun>) -> Result<&ToyRun> {
    run.as_ref().map_err(|e| SfdError::Config(format!("toy training failed: {e}")))
}

fn main() {
    let started = Instant::now();
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut emit = |v: Verdict| {
        println!("{}", v.line());
        verdicts.push(v);
    };

    emit(judge(1, "equation-unit-suite", criteria::equation_unit_suite));
    emit(judge(2, "gradient-suite", criteria::gradient_suite));
    emit(judge(3, "stability-suite", criteria::stability_suite));

    let corpus = toy_corpus(0).expect("toy corpus");
    let adv_cfg = toy_config(
        &corpus.train_dir,
        &corpus.root.path().join("adversarial"),
        TOY_STEPS,
        TOY_PRETRAIN,
        LossWeights::default(),
    );
    let l1_cfg = toy_config(
        &corpus.train_dir,
        &corpus.root.path().join("l1_only"),
        TOY_STEPS,
        TOY_PRETRAIN,
        LossWeights::PIXEL_ONLY,
    );

    let t = Instant::now();
    let adv = train(&adv_cfg);
    let adv_secs = t.elapsed().as_secs_f64();
    emit(judge(4, "toy-adversarial-separation", || {
        let run = trained(&adv)?;
        let whole = heldout_report(&run.checkpoint, &corpus.heldout)?;
        let patches = heldout_patch_report(&run.checkpoint, &corpus.heldout)?;
        Ok(criteria::separation(&whole, &patches, adv_secs))
    }));

    let l1 = train(&l1_cfg);
    emit(judge(5, "toy-perceptual-effect", || {
        let (adv, l1) = (trained(&adv)?, trained(&l1)?);
        Ok(criteria::perceptual_effect(
            &heldout_patch_report(&adv.checkpoint, &corpus.heldout)?,
            &heldout_patch_report(&l1.checkpoint, &corpus.heldout)?,
            &heldout_report(&adv.checkpoint, &corpus.heldout)?,
            &heldout_report(&l1.checkpoint, &corpus.heldout)?,
        ))
    }));

    emit(judge(6, "iqa-monotonicity", || {
        criteria::iqa_monotonicity(&trained(&adv)?.checkpoint, &corpus.heldout)
    }));
    emit(judge(7, "correlation-oracle", criteria::correlation_oracle));
    emit(judge(8, "metric-fidelity", criteria::metric_fidelity));

    emit(judge(9, "reproducibility", || {
        let dir = tempfile::tempdir().map_err(|e| SfdError::io(std::env::temp_dir(), e))?;
        let mut cfg = toy_config(&corpus.train_dir, dir.path(), 8, 3, LossWeights::default());
        cfg.checkpoint_interval = 4;
        criteria::reproducibility(&cfg, dir.path(), 5)
    }));

    emit(judge(10, "frozen-component-audit", || {
        let (adv, l1) = (trained(&adv)?, trained(&l1)?);
        criteria::frozen_audit(
            &[
                (&adv_cfg, &adv.outcome, &adv.checkpoint),
                (&l1_cfg, &l1.outcome, &l1.checkpoint),
            ],
            &corpus.heldout,
        )
    }));

    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria pass ({:.0} s)",
        verdicts.len(),
        started.elapsed().as_secs_f64()
    );
    let mut unexpected = Vec::new();
    for v in &verdicts {
        match (v.pass, KNOWN_RED.iter().find(|(id, _)| *id == v.id)) {
            (false, Some((_, why))) => println!("known red {}: {why}", v.id),
            (false, None) => unexpected.push(format!("criterion {} failed", v.id)),
            (true, Some(_)) => unexpected.push(format!("criterion {} passes but is listed as known red", v.id)),
            (true, None) => {}
        }
    }
    if !unexpected.is_empty() {
        eprintln!("acceptance gate: {}", unexpected.join("; "));
        std::process::exit(1);
    }
}
