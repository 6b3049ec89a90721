//! The training driver: corpus, optional L1 warm-up, adversarial phase,
//! NDJSON log and checkpoints.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::archive::Archive;
use crate::encoders::{EncoderState, TextEmbedder};
use crate::error::{Result, SfdError};

use super::checkpoint::{read_meta, restore_into, save_checkpoint, CheckpointConfigs};
use super::config::RunConfig;
use super::corpus::{sample_batch, Corpus};
use super::perceptual::PerceptualExtractor;
use super::step::{derive_seed, pretrain_step, train_step, LogRecord, TrainState, SEED_DATA};

pub const LOG_FILE: &str = "train_log.ndjson";
pub const FINAL_CHECKPOINT: &str = "final.sfd";

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.sfd")
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub last: Option<LogRecord>,
    pub warnings: Vec<String>,
    pub encoder_checksum: String,
    pub perceptual_checksum: String,
}

/// Frozen components built from a run config.
pub struct Frozen {
    pub encoder: EncoderState,
    pub text: Option<TextEmbedder>,
    pub perceptual: PerceptualExtractor,
}

impl Frozen {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let encoder = EncoderState::from_config(&cfg.encoder)?;
        let text = TextEmbedder::from_config(&cfg.text, encoder.embed_dim())?;
        let perceptual = PerceptualExtractor::from_config(&cfg.perceptual, &encoder)?;
        Ok(Self {
            encoder,
            text,
            perceptual,
        })
    }
}

/// Keeps log lines up to and including `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| SfdError::io(path, e))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| SfdError::io(path, e))?;
        let rec: LogRecord = serde_json::from_str(&line)
            .map_err(|e| SfdError::Format(format!("{}: bad log line: {e}", path.display())))?;
        if rec.step <= step {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| SfdError::io(path, e))
}

/// Runs training to `cfg.total_steps`, optionally resuming from a checkpoint.
/// Returns the final checkpoint path.
pub fn run_training(cfg: &RunConfig, resume: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let corpus = Corpus::load(&cfg.data.corpus_dir, cfg.patch_size)?;
    let frozen = Frozen::from_config(cfg)?;
    let enc_sum = frozen.encoder.checksum();
    let perc_sum = frozen.perceptual.checksum();
    let configs = CheckpointConfigs::from_run(cfg);
    let (mut st, mut warnings) =
        TrainState::new(&configs.model_configs(), &frozen.encoder, frozen.text.as_ref(), cfg.seed)?;

    let mut last_good = None;
    if let Some(path) = resume {
        if !path.exists() {
            return Err(SfdError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "resume checkpoint not found"),
            ));
        }
        let a = Archive::load(path)?;
        let meta = read_meta(&a)?;
        if meta.config_hash != cfg.config_hash() {
            return Err(SfdError::Config(format!(
                "checkpoint {} was written with a different configuration",
                path.display()
            )));
        }
        if meta.encoder_checksum != enc_sum || meta.perceptual_checksum != perc_sum {
            return Err(SfdError::Config(format!(
                "checkpoint {} was trained against different frozen weights",
                path.display()
            )));
        }
        restore_into(&a, &mut st)?;
        last_good = Some(path.to_path_buf());
    }
    if st.step > cfg.total_steps {
        return Err(SfdError::Config(format!(
            "checkpoint is at step {}, beyond total_steps {}",
            st.step, cfg.total_steps
        )));
    }

    fs::create_dir_all(&cfg.output_dir).map_err(|e| SfdError::io(&cfg.output_dir, e))?;
    let log_path = cfg.output_dir.join(LOG_FILE);
    if resume.is_some() {
        truncate_log(&log_path, st.step)?;
    } else {
        File::create(&log_path).map_err(|e| SfdError::io(&log_path, e))?;
    }
    let mut log = BufWriter::new(
        fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| SfdError::io(&log_path, e))?,
    );

    for w in &warnings {
        log::warn!("{w}");
    }
    let data_seed = derive_seed(cfg.seed, SEED_DATA);
    let scale = cfg.generator.scale;
    let started = Instant::now();
    let mut checkpoints = Vec::new();
    let mut last = None;
    while st.step < cfg.total_steps {
        let step = st.step + 1;
        let batch = sample_batch(
            &corpus,
            data_seed,
            step,
            cfg.batch_size,
            cfg.patch_size,
            scale,
            &cfg.degradation,
        )?;
        let result = if step <= cfg.pretrain_steps {
            pretrain_step(&batch, &mut st)
        } else {
            train_step(&batch, &mut st, &frozen.encoder, &frozen.perceptual)
        };
        let mut rec = result.map_err(|e| match e {
            SfdError::Divergence { step, term, .. } => SfdError::Divergence {
                step,
                term,
                last_good: last_good.clone(),
            },
            other => other,
        })?;
        if cfg.log_timestamps {
            rec.elapsed_ms = Some(started.elapsed().as_millis() as u64);
        }
        let line = serde_json::to_string(&rec).expect("log record serializes");
        writeln!(log, "{line}").map_err(|e| SfdError::io(&log_path, e))?;
        if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
            log.flush().map_err(|e| SfdError::io(&log_path, e))?;
            let path = cfg.output_dir.join(checkpoint_name(step));
            save_checkpoint(&path, &st, cfg, &frozen.encoder, frozen.text.as_ref(), &perc_sum)?;
            log::info!("step {step}: g_total {:.6}, checkpoint {}", rec.g_total, path.display());
            last_good = Some(path.clone());
            checkpoints.push(path);
        }
        last = Some(rec);
    }
    log.flush().map_err(|e| SfdError::io(&log_path, e))?;

    if frozen.encoder.checksum() != enc_sum || frozen.perceptual.checksum() != perc_sum {
        return Err(SfdError::Checksum("a frozen component changed during training".into()));
    }
    let final_checkpoint = cfg.output_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &st, cfg, &frozen.encoder, frozen.text.as_ref(), &perc_sum)?;
    warnings.dedup();
    Ok(RunOutcome {
        final_checkpoint,
        log_path,
        checkpoints,
        last,
        warnings,
        encoder_checksum: enc_sum,
        perceptual_checksum: perc_sum,
    })
}

/// Parses a training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| SfdError::io(path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| SfdError::Format(format!("{}: {e}", path.display()))))
        .collect()
}
