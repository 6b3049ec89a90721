//! Text-guided discrimination: a learnable positive/negative prompt pair
//! scored against the image embedding by cosine similarity, a two-way
//! softmax over the pair, and the adversarial losses on that score.

use ndarray::{Array1, Ix1};
use serde::{Deserialize, Serialize};
use sfd_autograd::{cosine_rows, Tape, Tensor, Var};

use crate::archive::Archive;
use crate::encoders::{GlobalEmbedding, TextEmbedder};
use crate::error::{Result, SfdError};
use crate::nn::{Init, ParamStore};

/// Clamp applied to scores before any logarithm.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LppInit {
    #[default]
    FromText,
    RandomUnit,
}

/// Where the learnable parameters live: the text features themselves, or
/// token embeddings fed through the frozen text embedder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LppParameterization {
    #[default]
    Direct,
    Tokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LppConfig {
    pub init: LppInit,
    pub parameterization: LppParameterization,
    pub positive_prompt: String,
    pub negative_prompt: String,
    /// Seed for `random_unit` init and its fallback.
    pub seed: u64,
}

impl Default for LppConfig {
    fn default() -> Self {
        Self {
            init: LppInit::FromText,
            parameterization: LppParameterization::Direct,
            positive_prompt: "Good photo".into(),
            negative_prompt: "Bad photo".into(),
            seed: 0,
        }
    }
}

/// Softmax score of the positive prompt, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct RelScore {
    pub value: f64,
}

impl RelScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SfdError::NonFinite {
                term: format!("relative score {value} outside [0, 1]"),
            });
        }
        Ok(Self { value })
    }
}

#[derive(Clone, Debug)]
pub struct PromptPair {
    parameterization: LppParameterization,
    init: LppInit,
    params: ParamStore,
    embed_dim: usize,
    text: Option<TextEmbedder>,
}

const POSITIVE: usize = 0;
const NEGATIVE: usize = 1;

impl PromptPair {
    /// Builds the pair; returns warnings for any fallback taken.
    pub fn from_config(
        cfg: &LppConfig,
        embed_dim: usize,
        text: Option<&TextEmbedder>,
    ) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        let mut init = cfg.init;
        if init == LppInit::FromText && text.is_none() {
            warnings.push(format!(
                "no text embedder configured; prompt pair initialized as random unit vectors (seed {})",
                cfg.seed
            ));
            init = LppInit::RandomUnit;
        }
        if cfg.parameterization == LppParameterization::Tokens && text.is_none() {
            return Err(SfdError::Config(
                "lpp.parameterization = \"tokens\" requires a text embedder".into(),
            ));
        }
        let mut rng = Init::new(cfg.seed);
        let mut params = ParamStore::new();
        match (cfg.parameterization, init) {
            (LppParameterization::Direct, LppInit::RandomUnit) => {
                params.push("positive", Tensor::from_shape_vec(vec![embed_dim], rng.unit_vector(embed_dim)).unwrap());
                params.push("negative", Tensor::from_shape_vec(vec![embed_dim], rng.unit_vector(embed_dim)).unwrap());
            }
            (LppParameterization::Direct, LppInit::FromText) => {
                let txt = text.unwrap();
                params.push("positive", txt.embed(&cfg.positive_prompt).vector.into_dyn());
                params.push("negative", txt.embed(&cfg.negative_prompt).vector.into_dyn());
            }
            (LppParameterization::Tokens, LppInit::FromText) => {
                let txt = text.unwrap();
                params.push("positive_tokens", txt.token_embeddings(&cfg.positive_prompt).into_dyn());
                params.push("negative_tokens", txt.token_embeddings(&cfg.negative_prompt).into_dyn());
            }
            (LppParameterization::Tokens, LppInit::RandomUnit) => {
                let t = text.unwrap().token_dim();
                params.push("positive_tokens", rng.normal(&[1, t], 1.0));
                params.push("negative_tokens", rng.normal(&[1, t], 1.0));
            }
        }
        let pair = Self {
            parameterization: cfg.parameterization,
            init,
            params,
            embed_dim,
            text: text.cloned(),
        };
        pair.check_nonzero()?;
        Ok((pair, warnings))
    }

    /// Direct pair from explicit vectors.
    pub fn from_vectors(positive: GlobalEmbedding, negative: GlobalEmbedding) -> Result<Self> {
        if positive.len() != negative.len() || positive.is_empty() {
            return Err(SfdError::Shape(format!(
                "prompt vectors must share a nonzero length, got {} and {}",
                positive.len(),
                negative.len()
            )));
        }
        let mut params = ParamStore::new();
        let embed_dim = positive.len();
        params.push("positive", positive.vector.into_dyn());
        params.push("negative", negative.vector.into_dyn());
        let pair = Self {
            parameterization: LppParameterization::Direct,
            init: LppInit::RandomUnit,
            params,
            embed_dim,
            text: None,
        };
        pair.check_nonzero()?;
        Ok(pair)
    }

    fn check_nonzero(&self) -> Result<()> {
        let (p, n) = self.embeddings();
        if p.norm() == 0.0 || n.norm() == 0.0 {
            return Err(SfdError::ZeroNorm("prompt pair".into()));
        }
        Ok(())
    }

    pub fn init_mode(&self) -> LppInit {
        self.init
    }

    pub fn parameterization(&self) -> LppParameterization {
        self.parameterization
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `(F_t+, F_t-)` on a tape, each `[L]`.
    pub fn vectors<'t>(&self, p: &[Var<'t>]) -> (Var<'t>, Var<'t>) {
        match self.parameterization {
            LppParameterization::Direct => (p[POSITIVE], p[NEGATIVE]),
            LppParameterization::Tokens => {
                let txt = self.text.as_ref().expect("token path keeps its embedder");
                (txt.encode_tokens(p[POSITIVE]), txt.encode_tokens(p[NEGATIVE]))
            }
        }
    }

    /// Current text features.
    pub fn embeddings(&self) -> (GlobalEmbedding, GlobalEmbedding) {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let (a, b) = self.vectors(&p);
        let to_emb = |v: Var<'_>| GlobalEmbedding::new((*v.value()).clone().into_dimensionality::<Ix1>().unwrap());
        (to_emb(a), to_emb(b))
    }

    /// Relative scores `[N]` of embeddings `[N, L]` on a tape.
    pub fn score_var<'t>(&self, p: &[Var<'t>], f_out: Var<'t>) -> Var<'t> {
        let (pos, neg) = self.vectors(p);
        cosine_rows(f_out, pos).sub(cosine_rows(f_out, neg)).sigmoid()
    }

    pub fn write_into(&self, archive: &mut Archive, prefix: &str) {
        self.params.write_into(archive, prefix);
    }

    pub fn read_from(&mut self, archive: &Archive, prefix: &str) -> Result<()> {
        self.params.read_from(archive, prefix)?;
        self.check_nonzero()
    }
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SfdError::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(SfdError::ZeroNorm("cosine similarity".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `(s+, s-)`: cosine similarity of the embedding with each prompt.
pub fn cosine_pair(f_out: &GlobalEmbedding, lpp: &PromptPair) -> Result<(f64, f64)> {
    let (pos, neg) = lpp.embeddings();
    Ok((cosine(&f_out.vector, &pos.vector)?, cosine(&f_out.vector, &neg.vector)?))
}

/// `e^{s+} / (e^{s+} + e^{s-})`, evaluated as `sigmoid(s+ - s-)`.
pub fn relative_score(s_plus: f64, s_minus: f64) -> RelScore {
    RelScore {
        value: sfd_autograd::sigmoid(s_plus - s_minus),
    }
}

/// Discriminator loss on the tape: `E[log(1 - s_hr)] + E[log s_sr]`.
pub fn tg_d_loss_var<'t>(s_hr: Var<'t>, s_sr: Var<'t>) -> Var<'t> {
    let hr = s_hr.clamp(SCORE_EPS, 1.0 - SCORE_EPS).one_minus().ln().mean_all();
    let sr = s_sr.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln().mean_all();
    hr.add(sr)
}

/// Generator-side loss on the tape: `E[log s_hr] + E[log(1 - s_sr)]`.
pub fn tg_g_loss_var<'t>(s_hr: Var<'t>, s_sr: Var<'t>) -> Var<'t> {
    let hr = s_hr.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln().mean_all();
    let sr = s_sr.clamp(SCORE_EPS, 1.0 - SCORE_EPS).one_minus().ln().mean_all();
    hr.add(sr)
}

/// Non-saturating counterpart of [`tg_d_loss_var`]:
/// `-E[log s_hr] - E[log(1 - s_sr)]`.
pub fn tg_d_loss_ns_var<'t>(s_hr: Var<'t>, s_sr: Var<'t>) -> Var<'t> {
    tg_g_loss_var(s_hr, s_sr).neg()
}

/// Non-saturating counterpart of [`tg_g_loss_var`]:
/// `-E[log(1 - s_hr)] - E[log s_sr]`.
pub fn tg_g_loss_ns_var<'t>(s_hr: Var<'t>, s_sr: Var<'t>) -> Var<'t> {
    tg_d_loss_var(s_hr, s_sr).neg()
}

fn scores_tensor(s: &[RelScore]) -> Result<Tensor> {
    if s.is_empty() {
        return Err(SfdError::Shape("empty score batch".into()));
    }
    for r in s {
        RelScore::new(r.value)?;
    }
    Ok(Tensor::from_shape_vec(vec![s.len()], s.iter().map(|r| r.value).collect()).unwrap())
}

fn eval_scores(s_hr: &[RelScore], s_sr: &[RelScore], f: for<'t> fn(Var<'t>, Var<'t>) -> Var<'t>) -> Result<f64> {
    let tape = Tape::new();
    let hr = tape.constant(scores_tensor(s_hr)?);
    let sr = tape.constant(scores_tensor(s_sr)?);
    Ok(f(hr, sr).item())
}

pub fn loss_tg_d(s_hr: &[RelScore], s_sr: &[RelScore]) -> Result<f64> {
    eval_scores(s_hr, s_sr, tg_d_loss_var)
}

pub fn loss_tg_g(s_hr: &[RelScore], s_sr: &[RelScore]) -> Result<f64> {
    eval_scores(s_hr, s_sr, tg_g_loss_var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::TextEmbedderConfig;
    use ndarray::array;
    use sfd_autograd::check::{central_difference, rel_error};

    fn emb(v: &[f64]) -> GlobalEmbedding {
        GlobalEmbedding::new(Array1::from(v.to_vec()))
    }

    fn axes() -> PromptPair {
        PromptPair::from_vectors(emb(&[1.0, 0.0]), emb(&[0.0, 1.0])).unwrap()
    }

    fn rs(v: f64) -> RelScore {
        RelScore::new(v).unwrap()
    }

    #[test]
    fn cosine_pair_examples() {
        let (a, b) = cosine_pair(&emb(&[1.0, 0.0]), &axes()).unwrap();
        assert_eq!((a, b), (1.0, 0.0));
        let (a, b) = cosine_pair(&emb(&[1.0, 1.0]), &axes()).unwrap();
        assert!((a - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12 && (b - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let (c, d) = cosine_pair(&emb(&[10.0, 10.0]), &axes()).unwrap();
        assert!((a - c).abs() < 1e-15 && (b - d).abs() < 1e-15);
        assert!(matches!(cosine_pair(&emb(&[0.0, 0.0]), &axes()), Err(SfdError::ZeroNorm(_))));
        assert!(matches!(
            PromptPair::from_vectors(emb(&[0.0, 0.0]), emb(&[0.0, 1.0])),
            Err(SfdError::ZeroNorm(_))
        ));
    }

    #[test]
    fn relative_score_examples() {
        assert_eq!(relative_score(0.3, 0.3).value, 0.5);
        let e = std::f64::consts::E;
        assert!((relative_score(1.0, 0.0).value - e / (e + 1.0)).abs() < 1e-15);
        assert!((relative_score(1.0, 0.0).value - 0.731059).abs() < 1e-6);
        assert!((relative_score(0.5, -0.5).value - 0.731059).abs() < 1e-6);
    }

    #[test]
    fn tg_loss_examples() {
        assert!((loss_tg_d(&[rs(0.5)], &[rs(0.5)]).unwrap() + 1.386294).abs() < 1e-6);
        assert!((loss_tg_g(&[rs(0.5)], &[rs(0.5)]).unwrap() + 1.386294).abs() < 1e-6);
        let d = loss_tg_d(&[rs(0.731059)], &[rs(0.268941)]).unwrap();
        assert!((d + 2.62652).abs() < 1e-5, "{d}");
        let g = loss_tg_g(&[rs(0.9)], &[rs(0.9)]).unwrap();
        assert!((g + 2.40795).abs() < 1e-5, "{g}");
    }

    #[test]
    fn clamped_endpoints_stay_finite() {
        let d = loss_tg_d(&[rs(0.5)], &[rs(1.0)]).unwrap();
        let expected = (0.5f64).ln() + (1.0 - SCORE_EPS).ln();
        assert!((d - expected).abs() < 1e-12);
        for (a, b) in [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)] {
            assert!(loss_tg_d(&[rs(a)], &[rs(b)]).unwrap().is_finite());
            assert!(loss_tg_g(&[rs(a)], &[rs(b)]).unwrap().is_finite());
        }
        assert!(RelScore::new(f64::NAN).is_err());
        assert!(loss_tg_d(&[], &[rs(0.5)]).is_err());
    }

    #[test]
    fn generator_loss_derivative_at_half() {
        let tape = Tape::new();
        let hr = tape.constant(array![0.5].into_dyn());
        let sr = tape.param(array![0.5].into_dyn());
        let g = tape.backward(tg_g_loss_var(hr, sr));
        let analytic = g.get(sr).unwrap()[[0]];
        assert!((analytic + 2.0).abs() < 1e-12);
        let x = array![0.5].into_dyn();
        let numeric = central_difference(
            &mut |x: &Tensor| {
                let t = Tape::new();
                tg_g_loss_var(t.constant(array![0.5].into_dyn()), t.constant(x.clone())).item()
            },
            &x,
            0,
            1e-6,
        );
        assert!(rel_error(analytic, numeric, 1e-8) < 1e-6);
    }

    #[test]
    fn end_to_end_gradient_wrt_embedding() {
        let pair = PromptPair::from_vectors(emb(&[0.3, -0.2, 0.9, 0.1]), emb(&[-0.5, 0.4, 0.2, 0.7])).unwrap();
        let hr = array![[0.2, 0.1, -0.3, 0.5], [0.9, -0.4, 0.1, 0.2]].into_dyn();
        let f = array![[0.4, 0.3, 0.2, -0.1], [-0.2, 0.8, 0.5, 0.3]].into_dyn();
        let loss = |f: &Tensor, track: bool| {
            let tape = Tape::new();
            let p = pair.params().bind(&tape, false);
            let fv = tape.leaf(f.clone(), track);
            let s_hr = pair.score_var(&p, tape.constant(hr.clone()));
            let s_sr = pair.score_var(&p, fv);
            let l = tg_g_loss_var(s_hr, s_sr);
            let grad = track.then(|| tape.backward(l).get_or_zeros(fv));
            (l.item(), grad)
        };
        let (_, grad) = loss(&f, true);
        let grad = grad.unwrap();
        for i in 0..f.len() {
            let numeric = central_difference(&mut |x: &Tensor| loss(x, false).0, &f, i, 1e-6);
            let analytic = grad.iter().nth(i).copied().unwrap();
            assert!(rel_error(analytic, numeric, 1e-8) < 1e-3, "{i}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn from_text_falls_back_without_embedder() {
        let (pair, warnings) = PromptPair::from_config(&LppConfig::default(), 8, None).unwrap();
        assert_eq!(pair.init_mode(), LppInit::RandomUnit);
        assert_eq!(warnings.len(), 1);
        let (p, n) = pair.embeddings();
        assert!((p.norm() - 1.0).abs() < 1e-12 && (n.norm() - 1.0).abs() < 1e-12);
        let (again, _) = PromptPair::from_config(&LppConfig::default(), 8, None).unwrap();
        assert_eq!(pair.params().checksum(), again.params().checksum());
        let tokens = LppConfig {
            parameterization: LppParameterization::Tokens,
            ..Default::default()
        };
        assert!(matches!(PromptPair::from_config(&tokens, 8, None), Err(SfdError::Config(_))));
    }

    #[test]
    fn token_path_matches_embedder_at_init() {
        let txt = TextEmbedder::from_config(
            &TextEmbedderConfig::Hashed {
                seed: 3,
                vocab_size: 64,
                token_dim: 12,
            },
            8,
        )
        .unwrap()
        .unwrap();
        let direct = PromptPair::from_config(&LppConfig::default(), 8, Some(&txt)).unwrap().0;
        let tokens = PromptPair::from_config(
            &LppConfig {
                parameterization: LppParameterization::Tokens,
                ..Default::default()
            },
            8,
            Some(&txt),
        )
        .unwrap()
        .0;
        let (a, b) = direct.embeddings();
        let (c, d) = tokens.embeddings();
        assert!((&a.vector - &c.vector).iter().all(|v| v.abs() < 1e-12));
        assert!((&b.vector - &d.vector).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(a, txt.embed("Good photo"));
        // gradients reach the token table through the frozen projection
        let tape = Tape::new();
        let p = tokens.params().bind(&tape, true);
        let f = tape.constant(Init::new(1).normal(&[2, 8], 1.0));
        let g = tape.backward(tokens.score_var(&p, f).mean_all());
        assert!(g.get_or_zeros(p[0]).iter().any(|v| *v != 0.0));
    }

    proptest::proptest! {
        #[test]
        fn relative_score_is_antisymmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
            let s = relative_score(a, b).value + relative_score(b, a).value;
            proptest::prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn relative_score_is_scale_invariant(
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            c in 1e-3f64..1e3,
        ) {
            proptest::prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let pair = PromptPair::from_vectors(emb(&[0.3, -0.2, 0.9, 0.1]), emb(&[-0.5, 0.4, 0.2, 0.7])).unwrap();
            let (a, b) = cosine_pair(&emb(&v), &pair).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let (c2, d2) = cosine_pair(&emb(&scaled), &pair).unwrap();
            proptest::prop_assert!((relative_score(a, b).value - relative_score(c2, d2).value).abs() <= 1e-9);
        }
    }
}
