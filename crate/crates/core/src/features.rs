//! Spatially pooled intermediate features for external embedding tools.

use ndarray::{Array1, Axis, Ix4};
use sfd_autograd::Tape;

use crate::encoders::{encode_image, EncoderState};
use crate::error::{Result, SfdError};
use crate::feat_disc::{stack_pyramids, FeatDState};
use crate::image::ImageTensor;

pub const ENCODER_GLOBAL_TAP: &str = "encoder/global";

/// Every selectable tap: the three encoder pyramid levels, the global
/// embedding, then the Feat-D activations.
pub fn available_taps(enc: &EncoderState, feat_d: &FeatDState) -> Vec<String> {
    enc.tap_names()
        .iter()
        .map(|n| format!("encoder/{n}"))
        .chain(std::iter::once(ENCODER_GLOBAL_TAP.to_string()))
        .chain(feat_d.tap_names())
        .collect()
}

/// Fails with `UnknownTap` listing the available taps.
pub fn check_tap(tap: &str, enc: &EncoderState, feat_d: &FeatDState) -> Result<()> {
    let available = available_taps(enc, feat_d);
    if available.iter().any(|t| t == tap) {
        Ok(())
    } else {
        Err(SfdError::UnknownTap {
            name: tap.to_string(),
            available,
        })
    }
}

/// Channel means of the activation at `tap` (the embedding itself for the
/// global tap).
pub fn pooled_features(img: &ImageTensor, enc: &EncoderState, feat_d: &FeatDState, tap: &str) -> Result<Array1<f64>> {
    check_tap(tap, enc, feat_d)?;
    let (pyr, emb) = encode_image(img, enc)?;
    if tap == ENCODER_GLOBAL_TAP {
        return Ok(emb.vector);
    }
    if let Some(level) = enc.tap_names().iter().position(|n| format!("encoder/{n}") == tap) {
        return Ok(channel_means(pyr.levels[level].view().insert_axis(Axis(0)).to_owned()));
    }
    let batch = stack_pyramids(std::slice::from_ref(&pyr))?;
    let tape = Tape::new();
    let p = feat_d.params().bind(&tape, false);
    let levels = batch.map(|t| tape.constant(t));
    feat_d.check_levels([&levels[0].shape(), &levels[1].shape(), &levels[2].shape()])?;
    let out = feat_d.forward(&p, levels);
    let (_, var) = out.taps.iter().find(|(n, _)| n == tap).expect("tap checked above");
    let t = (*var.value()).clone().into_dimensionality::<Ix4>().map_err(|e| SfdError::Shape(e.to_string()))?;
    Ok(channel_means(t))
}

fn channel_means(t: ndarray::Array4<f64>) -> Array1<f64> {
    t.index_axis(Axis(0), 0)
        .mean_axis(Axis(2))
        .and_then(|m| m.mean_axis(Axis(1)))
        .expect("non-empty activation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderConfig;
    use crate::feat_disc::FeatDConfig;

    fn models() -> (EncoderState, FeatDState) {
        let enc = EncoderState::from_config(&EncoderConfig::default()).unwrap();
        let d = FeatDState::new(&FeatDConfig::default(), enc.pyramid_channels(), [2, 2], 7).unwrap();
        (enc, d)
    }

    #[test]
    fn every_tap_pools_to_channel_count() {
        let (enc, d) = models();
        let img = ImageTensor::filled(32, 32, 0.3).unwrap();
        let chans = enc.pyramid_channels();
        for tap in available_taps(&enc, &d) {
            let v = pooled_features(&img, &enc, &d, &tap).unwrap();
            assert!(!v.is_empty() && v.iter().all(|x| x.is_finite()), "{tap}");
            if let Some(i) = enc.tap_names().iter().position(|n| format!("encoder/{n}") == tap) {
                assert_eq!(v.len(), chans[i]);
            }
        }
    }

    #[test]
    fn unknown_tap_lists_available() {
        let (enc, d) = models();
        let img = ImageTensor::filled(32, 32, 0.3).unwrap();
        match pooled_features(&img, &enc, &d, "nope") {
            Err(SfdError::UnknownTap { available, .. }) => assert!(available.contains(&"feat-d-upsample-3".to_string())),
            other => panic!("{other:?}"),
        }
    }
}
