//! Adversarial training of the generator against Feat-D and the prompt pair.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod loss;
pub mod perceptual;
pub mod run;
pub mod step;

pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::RunConfig;
pub use corpus::{sample_batch, synth_corpus, synth_image, Corpus};
pub use eval::{evaluate, feature_distance, EvalReport};
pub use loss::{
    generator_loss_var, total_generator_loss, AdversarialForm, AdversarialScores, GeneratorLossInputs, LossBreakdown, LossWeights,
};
pub use perceptual::{PerceptualConfig, PerceptualExtractor, PerceptualSource};
pub use run::{read_log, run_training, Frozen, RunOutcome};
pub use step::{derive_seed, level_ratios, pretrain_step, train_step, Batch, LogRecord, ModelConfigs, Phase, TrainState};
