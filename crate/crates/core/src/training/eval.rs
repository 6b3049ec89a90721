//! Held-out evaluation of a trained generator and discriminators.

use serde::Serialize;

use crate::encoders::{encode_image, EncoderState, FeaturePyramid};
use crate::error::{Result, SfdError};
use crate::feat_disc::feat_d_forward;
use crate::generator::super_resolve;
use crate::image::ImageTensor;
use crate::metrics::fidelity;
use crate::text_disc::{cosine_pair, relative_score};

use super::step::TrainState;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub pairs: usize,
    /// Mean sigmoid of Feat-D logits.
    pub d_score_hr: f64,
    pub d_score_sr: f64,
    /// Mean relative prompt score.
    pub s_hr: f64,
    pub s_sr: f64,
    /// Mean absolute difference of encoder middle features, averaged over
    /// the three levels.
    pub feature_l1: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Mean over levels of the mean absolute middle-feature difference.
pub fn feature_distance(a: &ImageTensor, b: &ImageTensor, enc: &EncoderState) -> Result<f64> {
    let (pa, _) = encode_image(a, enc)?;
    let (pb, _) = encode_image(b, enc)?;
    Ok(pyramid_distance(&pa, &pb))
}

fn pyramid_distance(a: &FeaturePyramid, b: &FeaturePyramid) -> f64 {
    let total: f64 = a
        .levels
        .iter()
        .zip(&b.levels)
        .map(|(x, y)| (x - y).mapv(f64::abs).mean().unwrap_or(0.0))
        .sum();
    total / 3.0
}

/// Scores `(lr, hr)` pairs: SR via the generator, then discriminator scores,
/// feature distance and Y-channel fidelity (border = scale).
pub fn evaluate(pairs: &[(ImageTensor, ImageTensor)], st: &TrainState, enc: &EncoderState) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(SfdError::Config("evaluation needs at least one pair".into()));
    }
    let border = st.generator.scale();
    let mut acc = [0.0; 7];
    for (lr, hr) in pairs {
        let sr = super_resolve(lr, &st.generator)?;
        let (p_hr, e_hr) = encode_image(hr, enc)?;
        let (p_sr, e_sr) = encode_image(&sr, enc)?;
        let (hp, hm) = cosine_pair(&e_hr, &st.lpp)?;
        let (sp, sm) = cosine_pair(&e_sr, &st.lpp)?;
        let (psnr, ssim) = fidelity(&sr, hr, border)?;
        let vals = [
            feat_d_forward(&p_hr, &st.feat_d)?.mean_sigmoid(),
            feat_d_forward(&p_sr, &st.feat_d)?.mean_sigmoid(),
            relative_score(hp, hm).value,
            relative_score(sp, sm).value,
            pyramid_distance(&p_sr, &p_hr),
            psnr.db,
            ssim,
        ];
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += v;
        }
    }
    let n = pairs.len() as f64;
    let m = acc.map(|v| v / n);
    Ok(EvalReport {
        pairs: pairs.len(),
        d_score_hr: m[0],
        d_score_sr: m[1],
        s_hr: m[2],
        s_sr: m[3],
        feature_l1: m[4],
        psnr_db: m[5],
        ssim: m[6],
    })
}
