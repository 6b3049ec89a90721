//! RRDB super-resolution network (ESRGAN layout, reduced depth).

use serde::{Deserialize, Serialize};
use sfd_autograd::{concat_channels, resize_nearest, Tape, Var};

use crate::error::{Result, SfdError};
use crate::image::{unstack_clamped, ImageTensor};
use crate::nn::{Conv, Init, ParamStore, LRELU_SLOPE};

/// Residual scaling inside dense blocks and RRDBs.
const RESIDUAL_SCALE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_blocks: usize,
    pub num_features: usize,
    pub scale: usize,
    pub growth_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_blocks: 4,
            num_features: 32,
            scale: 4,
            growth_channels: 16,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale != 2 && self.scale != 4 {
            return Err(SfdError::Config(format!(
                "generator.scale must be 2 or 4, got {}",
                self.scale
            )));
        }
        if self.num_blocks == 0 || self.num_features == 0 || self.growth_channels == 0 {
            return Err(SfdError::Config(
                "generator.num_blocks, num_features and growth_channels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct DenseBlock {
    convs: [Conv; 5],
}

impl DenseBlock {
    fn new(store: &mut ParamStore, init: &mut Init, name: &str, nf: usize, gc: usize) -> Self {
        let convs = std::array::from_fn(|i| {
            let out = if i == 4 { nf } else { gc };
            Conv::new(store, init, &format!("{name}.conv{}", i + 1), nf + i * gc, out, 3, 1, 0.1)
        });
        Self { convs }
    }

    fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let mut feats = vec![x];
        for conv in &self.convs[..4] {
            let inp = concat_channels(&feats);
            feats.push(conv.forward(p, inp).leaky_relu(LRELU_SLOPE));
        }
        let out = self.convs[4].forward(p, concat_channels(&feats));
        out.scale(RESIDUAL_SCALE).add(x)
    }
}

#[derive(Clone, Debug)]
struct Rrdb {
    blocks: [DenseBlock; 3],
}

impl Rrdb {
    fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(p, h);
        }
        h.scale(RESIDUAL_SCALE).add(x)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorState {
    config: GeneratorConfig,
    params: ParamStore,
    conv_first: Conv,
    body: Vec<Rrdb>,
    conv_body: Conv,
    ups: Vec<Conv>,
    conv_hr: Conv,
    conv_last: Conv,
}

impl GeneratorState {
    pub fn new(config: &GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let nf = config.num_features;
        let gc = config.growth_channels;
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let conv_first = Conv::new(&mut params, &mut init, "conv_first", 3, nf, 3, 1, 1.0);
        let body = (0..config.num_blocks)
            .map(|b| Rrdb {
                blocks: std::array::from_fn(|i| {
                    DenseBlock::new(&mut params, &mut init, &format!("body.{b}.rdb{}", i + 1), nf, gc)
                }),
            })
            .collect();
        let conv_body = Conv::new(&mut params, &mut init, "conv_body", nf, nf, 3, 1, 1.0);
        let n_up = config.scale.trailing_zeros() as usize;
        let ups = (0..n_up)
            .map(|i| Conv::new(&mut params, &mut init, &format!("conv_up{}", i + 1), nf, nf, 3, 1, 1.0))
            .collect();
        let conv_hr = Conv::new(&mut params, &mut init, "conv_hr", nf, nf, 3, 1, 1.0);
        let conv_last = Conv::new(&mut params, &mut init, "conv_last", nf, 3, 3, 1, 1.0);
        Ok(Self {
            config: config.clone(),
            params,
            conv_first,
            body,
            conv_body,
            ups,
            conv_hr,
            conv_last,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    /// Unclamped forward on `[N, 3, h, w]`, giving `[N, 3, h*s, w*s]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], lr: Var<'t>) -> Var<'t> {
        let feat = self.conv_first.forward(p, lr);
        let mut h = feat;
        for block in &self.body {
            h = block.forward(p, h);
        }
        let mut feat = feat.add(self.conv_body.forward(p, h));
        for up in &self.ups {
            let s = feat.shape();
            feat = resize_nearest(feat, s[2] * 2, s[3] * 2);
            feat = up.forward(p, feat).leaky_relu(LRELU_SLOPE);
        }
        let feat = self.conv_hr.forward(p, feat).leaky_relu(LRELU_SLOPE);
        self.conv_last.forward(p, feat)
    }
}

/// Inference: output clamped into `[0, 1]`.
pub fn super_resolve(lr: &ImageTensor, g: &GeneratorState) -> Result<ImageTensor> {
    let tape = Tape::new();
    let p = g.params.bind(&tape, false);
    let out = g.forward(&p, tape.constant(lr.to_batch()));
    let out = out.value();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SfdError::NonFinite {
            term: "generator output (diverged weights?)".into(),
        });
    }
    Ok(unstack_clamped(&out)?.remove(0))
}
