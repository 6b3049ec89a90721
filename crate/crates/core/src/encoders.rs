//! Frozen semantic encoders.
//!
//! An encoder is a stack of named 3×3 conv layers with leaky-ReLU, three of
//! which are tapped as the middle-feature pyramid, followed by global average
//! pooling and a linear head that produces the global embedding. The tiny
//! reference encoder generates such a stack from [`EncoderConfig`]; external
//! weights (for example a converted CLIP backbone) describe their own stack in
//! the archive metadata and name their tap layers in the config.
//!
//! Encoders expose only `&self` methods, so a loaded encoder can't be mutated.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, Axis, Ix2, Ix4};
use serde::{Deserialize, Serialize};
use sfd_autograd::{global_avg_pool, mean_rows, Tape, Var};

use crate::archive::Archive;
use crate::error::{Result, SfdError};
use crate::image::ImageTensor;
use crate::nn::{Conv, Init, Linear, ParamStore, LRELU_SLOPE};

pub const ENCODER_ARCHIVE_KIND: &str = "sfd-encoder";
pub const TEXT_ARCHIVE_KIND: &str = "sfd-text-embedder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsSource {
    Random { seed: u64 },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub base_channels: usize,
    pub embed_dim: usize,
    pub pyramid_strides: [usize; 3],
    pub weights_source: WeightsSource,
    /// Layer names tapped as the three pyramid levels; `None` picks the last
    /// layer of each stride level of the tiny encoder.
    pub tap_layers: Option<[String; 3]>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            embed_dim: 64,
            pyramid_strides: [4, 8, 16],
            weights_source: WeightsSource::Random { seed: 0 },
            tap_layers: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 8 {
            return Err(SfdError::Config(format!(
                "encoder.embed_dim must be >= 8, got {}",
                self.embed_dim
            )));
        }
        if self.base_channels == 0 {
            return Err(SfdError::Config("encoder.base_channels must be >= 1".into()));
        }
        let s = self.pyramid_strides;
        if !(s[0] < s[1] && s[1] < s[2]) {
            return Err(SfdError::Config(format!(
                "encoder.pyramid_strides must be strictly increasing, got {s:?}"
            )));
        }
        if s.iter().any(|v| *v < 2 || !v.is_power_of_two()) {
            return Err(SfdError::Config(format!(
                "encoder.pyramid_strides must be powers of two >= 2, got {s:?}"
            )));
        }
        Ok(())
    }
}

/// The three middle feature maps of one image, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    pub levels: [Array3<f64>; 3],
}

impl FeaturePyramid {
    pub fn shapes(&self) -> [(usize, usize, usize); 3] {
        [self.levels[0].dim(), self.levels[1].dim(), self.levels[2].dim()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalEmbedding {
    pub vector: Array1<f64>,
}

impl GlobalEmbedding {
    pub fn new(vector: Array1<f64>) -> Self {
        Self { vector }
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.vector.dot(&self.vector).sqrt()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LayerSpec {
    name: String,
    stride: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layer {
    pub(crate) name: String,
    pub(crate) conv: Conv,
}

/// Batched encoder outputs on a tape.
pub struct EncoderVars<'t> {
    /// `[N, C_i, H_i, W_i]`, finest first.
    pub levels: [Var<'t>; 3],
    /// `[N, L]`
    pub embedding: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct EncoderState {
    config: EncoderConfig,
    params: ParamStore,
    layers: Vec<Layer>,
    taps: [usize; 3],
    head: Linear,
    /// Per-channel input normalization applied before the first layer.
    input_norm: Option<([f64; 3], [f64; 3])>,
}

/// Builds the tiny reference encoder with weights drawn from `seed`.
pub fn init_tiny_encoder(cfg: &EncoderConfig, seed: u64) -> Result<EncoderState> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let mut channels = Vec::new();
    let mut default_taps = Vec::new();
    let mut stride = 1;
    for (level, &target) in cfg.pyramid_strides.iter().enumerate() {
        let ch = cfg.base_channels << level;
        let mut k = 0;
        while stride < target {
            specs.push(LayerSpec {
                name: format!("l{level}.down{k}"),
                stride: 2,
            });
            channels.push(ch);
            stride *= 2;
            k += 1;
        }
        specs.push(LayerSpec {
            name: format!("l{level}.refine"),
            stride: 1,
        });
        channels.push(ch);
        default_taps.push(format!("l{level}.refine"));
    }

    let mut init = Init::new(seed);
    let mut params = ParamStore::new();
    let mut layers = Vec::new();
    let mut in_ch = 3;
    for (spec, &out_ch) in specs.iter().zip(&channels) {
        let conv = Conv::new(&mut params, &mut init, &spec.name, in_ch, out_ch, 3, spec.stride, 1.0);
        // small random biases keep the features from being positively homogeneous in the input
        let b = init.normal(&[out_ch], 0.05);
        params.tensors_mut()[conv.bias] = b;
        layers.push(Layer {
            name: spec.name.clone(),
            conv,
        });
        in_ch = out_ch;
    }
    let head = Linear::new(&mut params, &mut init, "head", in_ch, cfg.embed_dim);
    let tap_names = cfg
        .tap_layers
        .clone()
        .unwrap_or_else(|| [default_taps[0].clone(), default_taps[1].clone(), default_taps[2].clone()]);
    let taps = resolve_taps(&layers, &tap_names)?;
    Ok(EncoderState {
        config: cfg.clone(),
        params,
        layers,
        taps,
        head,
        input_norm: None,
    })
}

fn resolve_taps(layers: &[Layer], names: &[String; 3]) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = layers
            .iter()
            .position(|l| &l.name == name)
            .ok_or_else(|| SfdError::UnknownTap {
                name: name.clone(),
                available: layers.iter().map(|l| l.name.clone()).collect(),
            })?;
    }
    let strides = |upto: usize| -> usize { layers[..=upto].iter().map(|l| l.conv.stride).product() };
    if !(out[0] < out[1] && out[1] < out[2]) || !(strides(out[0]) < strides(out[1]) && strides(out[1]) < strides(out[2])) {
        return Err(SfdError::Config(format!(
            "tap layers {names:?} must be in depth order with strictly coarsening resolution"
        )));
    }
    Ok(out)
}

impl EncoderState {
    /// Builds the encoder named by `cfg.weights_source`.
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        match &cfg.weights_source {
            WeightsSource::Random { seed } => init_tiny_encoder(cfg, *seed),
            WeightsSource::File { path } => Self::from_archive_file(path, cfg),
        }
    }

    /// Loads an encoder archive. Its metadata lists the layer stack
    /// (`layers: [{name, stride}]`) and may carry `input_mean`/`input_std`;
    /// tensors are `<layer>.weight`, `<layer>.bias`, `head.weight`,
    /// `head.bias`. Taps come from `cfg.tap_layers` (required unless the
    /// archive follows the tiny encoder's naming).
    pub fn from_archive_file(path: &Path, cfg: &EncoderConfig) -> Result<Self> {
        let archive = Archive::load(path)?;
        Self::from_archive(&archive, cfg)
    }

    pub fn from_archive(archive: &Archive, cfg: &EncoderConfig) -> Result<Self> {
        if archive.kind != ENCODER_ARCHIVE_KIND {
            return Err(SfdError::Format(format!(
                "expected a `{ENCODER_ARCHIVE_KIND}` archive, found `{}`",
                archive.kind
            )));
        }
        let (mut params, layers, input_norm) = read_conv_stack(archive)?;
        let in_ch = layers.last().map_or(3, |l| l.conv.out_ch);
        let hw = archive
            .get("head.weight")
            .ok_or_else(|| SfdError::Format("missing `head.weight`".into()))?;
        let hb = archive
            .get("head.bias")
            .ok_or_else(|| SfdError::Format("missing `head.bias`".into()))?;
        if hw.shape() != [hw.shape()[0], in_ch] || hb.shape() != [hw.shape()[0]] {
            return Err(SfdError::Shape(format!("head weight {:?} vs {in_ch} channels", hw.shape())));
        }
        let embed_dim = hw.shape()[0];
        let head = Linear {
            weight: params.push("head.weight", hw.clone()),
            bias: params.push("head.bias", hb.clone()),
        };
        let tap_names = match &cfg.tap_layers {
            Some(t) => t.clone(),
            None => ["l0.refine".into(), "l1.refine".into(), "l2.refine".into()],
        };
        let taps = resolve_taps(&layers, &tap_names)?;
        let mut config = cfg.clone();
        config.embed_dim = embed_dim;
        Ok(Self {
            config,
            params,
            layers,
            taps,
            head,
            input_norm,
        })
    }

    /// Archive in the format [`from_archive`](Self::from_archive) reads.
    pub fn to_archive(&self) -> Archive {
        let layers: Vec<LayerSpec> = self
            .layers
            .iter()
            .map(|l| LayerSpec {
                name: l.name.clone(),
                stride: l.conv.stride,
            })
            .collect();
        let mut meta = serde_json::json!({ "layers": layers });
        if let Some((m, s)) = self.input_norm {
            meta["input_mean"] = serde_json::json!(m);
            meta["input_std"] = serde_json::json!(s);
        }
        let mut a = Archive::new(ENCODER_ARCHIVE_KIND, meta);
        self.params.write_into(&mut a, "");
        a
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    /// Names of the layers tapped as pyramid levels, finest first.
    pub fn tap_names(&self) -> [String; 3] {
        self.taps.map(|t| self.layers[t].name.clone())
    }

    fn stride_upto(&self, idx: usize) -> usize {
        self.layers[..=idx].iter().map(|l| l.conv.stride).product()
    }

    /// Total downsampling of the deepest layer; inputs must be multiples of it.
    pub fn coarsest_stride(&self) -> usize {
        self.stride_upto(self.layers.len() - 1)
    }

    pub fn pyramid_channels(&self) -> [usize; 3] {
        self.taps.map(|t| self.layers[t].conv.out_ch)
    }

    pub fn pyramid_shapes(&self, h: usize, w: usize) -> Result<[(usize, usize, usize); 3]> {
        self.check_input(h, w)?;
        Ok(self.taps.map(|t| {
            let s = self.stride_upto(t);
            (self.layers[t].conv.out_ch, h / s, w / s)
        }))
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let s = self.coarsest_stride();
        if h < s || w < s || !h.is_multiple_of(s) || !w.is_multiple_of(s) {
            return Err(SfdError::Shape(format!(
                "input {h}x{w} is not a positive multiple of the coarsest stride {s}"
            )));
        }
        Ok(())
    }

    /// Batched forward. `p` are this encoder's params bound on the same tape
    /// (normally as constants); `x` is `[N, 3, H, W]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: Var<'t>) -> EncoderVars<'t> {
        let mut h = match self.input_norm {
            Some((mean, std)) => normalize_channels(x, mean, std),
            None => x,
        };
        let mut taps = Vec::with_capacity(3);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.conv.forward(p, h).leaky_relu(LRELU_SLOPE);
            if self.taps.contains(&i) {
                taps.push(h);
            }
        }
        let embedding = self.head.forward(p, global_avg_pool(h));
        EncoderVars {
            levels: [taps[0], taps[1], taps[2]],
            embedding,
        }
    }

    /// Runs the frozen encoder on `[N, 3, H, W]` values outside of training.
    pub fn encode_batch(&self, batch: &sfd_autograd::Tensor) -> Result<(Vec<FeaturePyramid>, Vec<GlobalEmbedding>)> {
        let s = batch.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(SfdError::Shape(format!("expected [N, 3, H, W], got {s:?}")));
        }
        self.check_input(s[2], s[3])?;
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out = self.forward(&p, tape.constant(batch.clone()));
        let levels: Vec<_> = out
            .levels
            .iter()
            .map(|v| (*v.value()).clone().into_dimensionality::<Ix4>().unwrap())
            .collect();
        let emb = (*out.embedding.value()).clone().into_dimensionality::<Ix2>().unwrap();
        let mut pyramids = Vec::new();
        let mut embeddings = Vec::new();
        for n in 0..s[0] {
            let pyr = FeaturePyramid {
                levels: [0, 1, 2].map(|i| levels[i].index_axis(Axis(0), n).to_owned()),
            };
            if pyr.levels.iter().any(|l| l.iter().any(|v| !v.is_finite()))
                || emb.row(n).iter().any(|v| !v.is_finite())
            {
                return Err(SfdError::NonFinite {
                    term: "encoder output (corrupt weights?)".into(),
                });
            }
            pyramids.push(pyr);
            embeddings.push(GlobalEmbedding::new(emb.row(n).to_owned()));
        }
        Ok((pyramids, embeddings))
    }
}

/// Per-channel input mean and std.
type InputNorm = ([f64; 3], [f64; 3]);

/// Reads the `layers` stack of an encoder-format archive: conv parameters in
/// order plus the optional input normalization.
pub(crate) fn read_conv_stack(archive: &Archive) -> Result<(ParamStore, Vec<Layer>, Option<InputNorm>)> {
    let specs: Vec<LayerSpec> = serde_json::from_value(archive.meta["layers"].clone())
        .map_err(|e| SfdError::Format(format!("encoder layer list: {e}")))?;
    let mut params = ParamStore::new();
    let mut layers = Vec::new();
    let mut in_ch = 3;
    for spec in &specs {
        let w = archive
            .get(&format!("{}.weight", spec.name))
            .ok_or_else(|| SfdError::Format(format!("missing `{}.weight`", spec.name)))?;
        let b = archive
            .get(&format!("{}.bias", spec.name))
            .ok_or_else(|| SfdError::Format(format!("missing `{}.bias`", spec.name)))?;
        let s = w.shape().to_vec();
        if s.len() != 4 || s[1] != in_ch || s[2] != s[3] || b.shape() != [s[0]] {
            return Err(SfdError::Shape(format!(
                "layer `{}` weight {:?} does not follow {in_ch} input channels",
                spec.name, s
            )));
        }
        let weight = params.push(format!("{}.weight", spec.name), w.clone());
        let bias = params.push(format!("{}.bias", spec.name), b.clone());
        layers.push(Layer {
            name: spec.name.clone(),
            conv: Conv {
                weight,
                bias,
                stride: spec.stride,
                pad: s[2] / 2,
                in_ch,
                out_ch: s[0],
                kernel: s[2],
            },
        });
        in_ch = s[0];
    }
    let norm = |key: &str| -> Option<[f64; 3]> {
        serde_json::from_value(archive.meta.get(key)?.clone()).ok()
    };
    let input_norm = match (norm("input_mean"), norm("input_std")) {
    (Some(m), Some(s)) => Some((m, s)),
    _ => None,
    };
    Ok((params, layers, input_norm))
}

pub(crate) fn normalize_channels<'t>(x: Var<'t>, mean: [f64; 3], std: [f64; 3]) -> Var<'t> {
    let shape = x.shape();
    let mut shift = ndarray::ArrayD::zeros(shape.clone());
    let mut scale = ndarray::ArrayD::zeros(shape);
    for c in 0..3 {
        shift.index_axis_mut(Axis(1), c).fill(-mean[c] / std[c]);
        scale.index_axis_mut(Axis(1), c).fill(1.0 / std[c]);
    }
    let tape = x.tape();
    x.mul(tape.constant(scale)).add(tape.constant(shift))
}

pub fn encode_image(img: &ImageTensor, enc: &EncoderState) -> Result<(FeaturePyramid, GlobalEmbedding)> {
    let (mut p, mut e) = enc.encode_batch(&img.to_batch())?;
    Ok((p.remove(0), e.remove(0)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TextEmbedderConfig {
    #[default]
    None,
    /// Hashed bag-of-words token table followed by a frozen linear map.
    Hashed {
        seed: u64,
        vocab_size: usize,
        token_dim: usize,
    },
    File {
        path: PathBuf,
    },
}

/// A frozen text encoder: token embedding table `[V, T]`, mean over the
/// prompt's tokens, then a linear map `[L, T]` into the image embedding space.
#[derive(Clone, Debug)]
pub struct TextEmbedder {
    params: ParamStore,
    vocab_size: usize,
    token_dim: usize,
    embed_dim: usize,
}

impl TextEmbedder {
    pub fn from_config(cfg: &TextEmbedderConfig, embed_dim: usize) -> Result<Option<Self>> {
        match cfg {
            TextEmbedderConfig::None => Ok(None),
            TextEmbedderConfig::Hashed {
                seed,
                vocab_size,
                token_dim,
            } => {
                if *vocab_size == 0 || *token_dim == 0 {
                    return Err(SfdError::Config(
                        "text.vocab_size and text.token_dim must be positive".into(),
                    ));
                }
                let mut init = Init::new(*seed);
                let mut params = ParamStore::new();
                params.push("table", init.normal(&[*vocab_size, *token_dim], 1.0));
                params.push(
                    "proj",
                    init.normal(&[embed_dim, *token_dim], (1.0 / *token_dim as f64).sqrt()),
                );
                Ok(Some(Self {
                    params,
                    vocab_size: *vocab_size,
                    token_dim: *token_dim,
                    embed_dim,
                }))
            }
            TextEmbedderConfig::File { path } => {
                let archive = Archive::load(path)?;
                Self::from_archive(&archive, embed_dim).map(Some)
            }
        }
    }

    pub fn from_archive(archive: &Archive, embed_dim: usize) -> Result<Self> {
        if archive.kind != TEXT_ARCHIVE_KIND {
            return Err(SfdError::Format(format!(
                "expected a `{TEXT_ARCHIVE_KIND}` archive, found `{}`",
                archive.kind
            )));
        }
        let table = archive
            .get("table")
            .ok_or_else(|| SfdError::Format("missing `table`".into()))?;
        let proj = archive
            .get("proj")
            .ok_or_else(|| SfdError::Format("missing `proj`".into()))?;
        if table.ndim() != 2 || proj.shape() != [embed_dim, table.shape()[1]] {
            return Err(SfdError::Shape(format!(
                "text table {:?} / proj {:?} incompatible with embed_dim {embed_dim}",
                table.shape(),
                proj.shape()
            )));
        }
        let mut params = ParamStore::new();
        params.push("table", table.clone());
        params.push("proj", proj.clone());
        Ok(Self {
            vocab_size: table.shape()[0],
            token_dim: table.shape()[1],
            embed_dim,
            params,
        })
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(TEXT_ARCHIVE_KIND, serde_json::Value::Null);
        self.params.write_into(&mut a, "");
        a
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Lower-cased alphanumeric words hashed (FNV-1a) into the vocabulary.
    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| {
                let mut h: u64 = 0xcbf29ce484222325;
                for b in w.to_lowercase().bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
                (h % self.vocab_size as u64) as usize
            })
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    /// `[n, T]` rows of the token table for `text`.
    pub fn token_embeddings(&self, text: &str) -> Array2<f64> {
        let table = self.params.get("table").unwrap();
        let ids = self.token_ids(text);
        let mut out = Array2::zeros((ids.len(), self.token_dim));
        for (r, id) in ids.iter().enumerate() {
            for t in 0..self.token_dim {
                out[[r, t]] = table[[*id, t]];
            }
        }
        out
    }

    /// Text feature from token embeddings `[n, T]` on a tape, through the
    /// frozen projection. Returns `[L]`.
    pub fn encode_tokens<'t>(&self, tokens: Var<'t>) -> Var<'t> {
        let tape = tokens.tape();
        let proj = tape.constant(self.params.get("proj").unwrap().clone());
        let pooled = mean_rows(tokens).reshape(&[1, self.token_dim]);
        sfd_autograd::linear(pooled, proj, None).reshape(&[self.embed_dim])
    }

    pub fn embed(&self, text: &str) -> GlobalEmbedding {
        let tape = Tape::new();
        let tokens = tape.constant(self.token_embeddings(text).into_dyn());
        let v = self.encode_tokens(tokens).value();
        GlobalEmbedding::new((*v).clone().into_dimensionality().unwrap())
    }
}

pub fn embed_text_prompts(
    prompts: (&str, &str),
    txt: Option<&TextEmbedder>,
) -> Result<(GlobalEmbedding, GlobalEmbedding)> {
    let txt = txt.ok_or(SfdError::TextEmbedderUnavailable)?;
    Ok((txt.embed(prompts.0), txt.embed(prompts.1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let t = Init::new(seed).normal(&[3, h, w], 1.0);
        let data = t.mapv(|v| 0.5 + 0.2 * v.tanh()).into_dimensionality().unwrap();
        ImageTensor::new(data).unwrap()
    }

    #[test]
    fn tiny_config_shapes() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 0).unwrap();
        let (pyr, emb) = encode_image(&random_image(64, 64, 1), &enc).unwrap();
        assert_eq!(pyr.shapes(), [(16, 16, 16), (32, 8, 8), (64, 4, 4)]);
        assert_eq!(emb.len(), 64);
        assert_eq!(enc.pyramid_shapes(64, 64).unwrap(), pyr.shapes());
    }

    #[test]
    fn shapes_do_not_depend_on_content() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 3).unwrap();
        let a = encode_image(&ImageTensor::filled(32, 48, 0.0).unwrap(), &enc).unwrap();
        let b = encode_image(&random_image(32, 48, 9), &enc).unwrap();
        assert_eq!(a.0.shapes(), b.0.shapes());
    }

    #[test]
    fn zero_image_is_bitwise_deterministic() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 0).unwrap();
        let img = ImageTensor::filled(64, 64, 0.0).unwrap();
        let a = encode_image(&img, &enc).unwrap();
        let b = encode_image(&img, &enc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 0).unwrap();
        let img = random_image(63, 63, 2);
        assert!(matches!(encode_image(&img, &enc), Err(SfdError::Shape(_))));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = EncoderConfig::default();
        let a = init_tiny_encoder(&cfg, 0).unwrap().checksum();
        let b = init_tiny_encoder(&cfg, 0).unwrap().checksum();
        let c = init_tiny_encoder(&cfg, 1).unwrap().checksum();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        let cfg = EncoderConfig {
            embed_dim: 0,
            ..Default::default()
        };
        assert!(matches!(init_tiny_encoder(&cfg, 0), Err(SfdError::Config(_))));
        let cfg = EncoderConfig {
            pyramid_strides: [4, 4, 16],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(SfdError::Config(_))));
    }

    #[test]
    fn scaling_the_input_changes_the_output() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 0).unwrap();
        let img = random_image(32, 32, 4);
        let half = ImageTensor::new(img.data().mapv(|v| v * 0.5)).unwrap();
        let (pa, ea) = encode_image(&img, &enc).unwrap();
        let (pb, eb) = encode_image(&half, &enc).unwrap();
        assert_ne!(pa, pb);
        assert_ne!(ea, eb);
        // not merely a rescaling either
        let ratio = &ea.vector / &eb.vector;
        assert!(ratio.iter().any(|r| (r - ratio[0]).abs() > 1e-6));
    }

    #[test]
    fn custom_taps_and_unknown_tap() {
        let cfg = EncoderConfig {
            tap_layers: Some(["l0.down1".into(), "l1.down0".into(), "l2.refine".into()]),
            ..Default::default()
        };
        let enc = init_tiny_encoder(&cfg, 0).unwrap();
        assert_eq!(enc.pyramid_channels(), [16, 32, 64]);
        let bad = EncoderConfig {
            tap_layers: Some(["l0.refine".into(), "nope".into(), "l2.refine".into()]),
            ..Default::default()
        };
        match init_tiny_encoder(&bad, 0) {
            Err(SfdError::UnknownTap { name, available }) => {
                assert_eq!(name, "nope");
                assert!(available.contains(&"l1.refine".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn archive_adapter_reproduces_tiny_encoder() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 5).unwrap();
        let back = EncoderState::from_archive(&enc.to_archive(), &EncoderConfig::default()).unwrap();
        let img = random_image(32, 32, 6);
        assert_eq!(encode_image(&img, &enc).unwrap(), encode_image(&img, &back).unwrap());
        assert_eq!(enc.checksum(), back.checksum());
    }

    #[test]
    fn adapter_applies_input_normalization() {
        let enc = init_tiny_encoder(&EncoderConfig::default(), 5).unwrap();
        let mut a = enc.to_archive();
        a.meta["input_mean"] = serde_json::json!([0.5, 0.5, 0.5]);
        a.meta["input_std"] = serde_json::json!([0.25, 0.25, 0.25]);
        let normed = EncoderState::from_archive(&a, &EncoderConfig::default()).unwrap();
        let img = random_image(32, 32, 7).to_batch();
        let manual = img.mapv(|v| (v - 0.5) / 0.25);
        let (_, e_norm) = normed.encode_batch(&img).unwrap();
        let (_, e_manual) = enc.encode_batch(&manual).unwrap();
        for (a, b) in e_norm[0].vector.iter().zip(e_manual[0].vector.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn text_embedder_contract() {
        assert!(matches!(
            embed_text_prompts(("Good photo", "Bad photo"), None),
            Err(SfdError::TextEmbedderUnavailable)
        ));
        let txt = TextEmbedder::from_config(
            &TextEmbedderConfig::Hashed {
                seed: 1,
                vocab_size: 512,
                token_dim: 32,
            },
            64,
        )
        .unwrap()
        .unwrap();
        let (g, b) = embed_text_prompts(("Good photo", "Bad photo"), Some(&txt)).unwrap();
        assert_eq!(g.len(), 64);
        assert_ne!(g, b);
        let (x, y) = embed_text_prompts(("same", "same"), Some(&txt)).unwrap();
        assert_eq!(x, y);
        assert!(TextEmbedder::from_config(&TextEmbedderConfig::None, 64).unwrap().is_none());
    }
}
