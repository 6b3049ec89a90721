use std::path::Path;

use sfd_core::training::{run_training, RunConfig};

use crate::error::CliResult;
use crate::CommandResult;

pub fn run(config: &Path, seed: Option<u64>, resume: Option<&Path>, steps: Option<u64>) -> CliResult<CommandResult> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(steps) = steps {
        cfg.total_steps = steps;
    }
    cfg.validate()?;
    let outcome = run_training(&cfg, resume)?;
    if let Some(last) = &outcome.last {
        eprintln!(
            "step {}: g_total {:.6} (pixel {:.6}, perceptual {:.6}, feat_adv {:.6}, text_adv {:.6})",
            last.step, last.g_total, last.g_pixel, last.g_perceptual, last.g_feat_adv, last.g_text_adv
        );
    }
    let mut artifacts = outcome.checkpoints.clone();
    if !artifacts.contains(&outcome.final_checkpoint) {
        artifacts.push(outcome.final_checkpoint.clone());
    }
    artifacts.push(outcome.log_path.clone());
    Ok(CommandResult::ok(
        "train",
        artifacts,
        outcome.warnings.len(),
        serde_json::json!({
            "config_hash": cfg.config_hash(),
            "final_checkpoint": outcome.final_checkpoint,
            "last": outcome.last,
            "warnings": outcome.warnings,
            "encoder_checksum": outcome.encoder_checksum,
            "perceptual_checksum": outcome.perceptual_checksum,
        }),
    ))
}
