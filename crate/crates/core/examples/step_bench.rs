use std::time::Instant;

use sfd_core::degrade::DegradationParams;
use sfd_core::encoders::{init_tiny_encoder, EncoderConfig};
use sfd_core::feat_disc::FeatDConfig;
use sfd_core::generator::GeneratorConfig;
use sfd_core::text_disc::LppConfig;
use sfd_core::training::{sample_batch, synth_image, train_step, Corpus, LossWeights, ModelConfigs, PerceptualConfig, PerceptualExtractor, TrainState};

fn main() {
    let enc = init_tiny_encoder(&EncoderConfig::default(), 0).unwrap();
    let perc = PerceptualExtractor::from_config(&PerceptualConfig::default(), &enc).unwrap();
    let cfg = ModelConfigs {
        generator: &GeneratorConfig::default(),
        feat_d: &FeatDConfig::default(),
        lpp: &LppConfig::default(),
        weights: &LossWeights::default(),
        form: Default::default(),
        lr: 1e-4,
    };
    let (mut st, _) = TrainState::new(&cfg, &enc, None, 0).unwrap();
    let images = (0..20).map(|i| synth_image(96, i)).collect();
    let corpus = Corpus { paths: vec![Default::default(); 20], images };
    let t = Instant::now();
    for step in 1..=5 {
        let b = sample_batch(&corpus, 0, step, 4, 32, 4, &DegradationParams::default()).unwrap();
        train_step(&b, &mut st, &enc, &perc).unwrap();
    }
    println!("{:.1} ms/step", t.elapsed().as_secs_f64() * 200.0);
}
