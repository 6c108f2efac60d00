use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{Mat, Scalar};
use crate::fire::{FireConfig, FireGrad, FireParams};
use crate::kernels::{BiasSpec, RopeConfig};
use crate::{Error, Result};

/// Positional encoding plugged into every attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeConfig {
    Nope,
    Rope(RopeConfig),
    /// One spec per head, or a single spec broadcast to all heads.
    Additive { heads: Vec<BiasSpec> },
    Fire(FireConfig),
}

impl PeConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PeConfig::Nope => "nope",
            PeConfig::Rope(_) => "rope",
            PeConfig::Additive { .. } => "additive",
            PeConfig::Fire(_) => "fire",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub ffn_mult: usize,
    pub vocab_size: usize,
    pub train_len: usize,
    pub pe: PeConfig,
    #[serde(default)]
    pub share_pe_across_layers: bool,
}

impl ModelConfig {
    /// Two layers, four heads of width 16, GELU FFN of width 256.
    pub fn desk(vocab_size: usize, train_len: usize, pe: PeConfig) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            d_head: 16,
            ffn_mult: 4,
            vocab_size,
            train_len,
            pe,
            share_pe_across_layers: false,
        }
    }

    pub fn d_ffn(&self) -> usize {
        self.ffn_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_head", self.d_head),
            ("ffn_mult", self.ffn_mult),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
        if self.d_model != self.num_heads * self.d_head {
            return Err(Error::InvalidParameter(format!(
                "d_model {} != num_heads {} * d_head {}",
                self.d_model, self.num_heads, self.d_head
            )));
        }
        if self.train_len < 2 {
            return Err(Error::InvalidParameter("train_len must be >= 2".into()));
        }
        match &self.pe {
            PeConfig::Rope(r) => {
                r.validate()?;
                if r.head_dim != self.d_head {
                    return Err(Error::InvalidParameter(format!(
                        "rope head_dim {} != d_head {}",
                        r.head_dim, self.d_head
                    )));
                }
            }
            PeConfig::Additive { heads } => {
                if heads.len() != 1 && heads.len() != self.num_heads {
                    return Err(Error::InvalidParameter(format!(
                        "additive PE needs 1 or {} specs, got {}",
                        self.num_heads,
                        heads.len()
                    )));
                }
                heads.iter().try_for_each(BiasSpec::validate)?;
            }
            PeConfig::Fire(_) | PeConfig::Nope => {}
        }
        Ok(())
    }
}

/// Positional-encoding state carried by the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum PeState {
    Nope,
    Rope(RopeConfig),
    Additive(Vec<BiasSpec>),
    /// One entry when shared across layers, otherwise one per layer.
    Fire(Vec<FireParams>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1: Vec<T>,
    pub wq: Mat<T>,
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    pub wo: Mat<T>,
    pub ln2: Vec<T>,
    pub w1: Mat<T>,
    pub w2: Mat<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn zeros(d: usize, f: usize) -> Self {
        LayerParams {
            ln1: vec![T::zero(); d],
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            ln2: vec![T::zero(); d],
            w1: Mat::zeros(d, f),
            w2: Mat::zeros(f, d),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a [T])) {
        f(&format!("{prefix}.ln1"), &self.ln1);
        f(&format!("{prefix}.wq"), &self.wq.data);
        f(&format!("{prefix}.wk"), &self.wk.data);
        f(&format!("{prefix}.wv"), &self.wv.data);
        f(&format!("{prefix}.wo"), &self.wo.data);
        f(&format!("{prefix}.ln2"), &self.ln2);
        f(&format!("{prefix}.w1"), &self.w1.data);
        f(&format!("{prefix}.w2"), &self.w2.data);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut [T])) {
        f(&format!("{prefix}.ln1"), &mut self.ln1);
        f(&format!("{prefix}.wq"), &mut self.wq.data);
        f(&format!("{prefix}.wk"), &mut self.wk.data);
        f(&format!("{prefix}.wv"), &mut self.wv.data);
        f(&format!("{prefix}.wo"), &mut self.wo.data);
        f(&format!("{prefix}.ln2"), &mut self.ln2);
        f(&format!("{prefix}.w1"), &mut self.w1.data);
        f(&format!("{prefix}.w2"), &mut self.w2.data);
    }

    /// Shapes as `(name suffix, dims)` in visit order.
    fn shapes(d: usize, f: usize) -> [(&'static str, Vec<usize>); 8] {
        [
            ("ln1", vec![d]),
            ("wq", vec![d, d]),
            ("wk", vec![d, d]),
            ("wv", vec![d, d]),
            ("wo", vec![d, d]),
            ("ln2", vec![d]),
            ("w1", vec![d, f]),
            ("w2", vec![f, d]),
        ]
    }
}

/// Weights of the micro-LM.
///
/// Linear maps are stored input-major (`x @ W`), so `wq` is `d_model x d_model`
/// and `unembed` is `d_model x vocab`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub embed: Mat<T>,
    pub layers: Vec<LayerParams<T>>,
    pub ln_f: Vec<T>,
    pub unembed: Mat<T>,
    pub pe: PeState,
}

/// Salt separating the PE initialization stream from the shared weights.
const PE_SEED_SALT: u64 = 0x5045_5f53_5452_4d31;

fn normal_mat<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Mat<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Mat::from_fn(rows, cols, |_, _| T::of(dist.sample(rng)))
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization. Everything except the PE state is drawn from
    /// one stream, so configs that differ only in `pe` share those weights.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, v) = (config.d_model, config.d_ffn(), config.vocab_size);
        let proj = 1.0 / (d as f64).sqrt();
        let resid = proj / (2.0 * config.num_layers as f64).sqrt();
        let embed = normal_mat(v, d, 1.0, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                ln1: vec![T::one(); d],
                wq: normal_mat(d, d, proj, &mut rng),
                wk: normal_mat(d, d, proj, &mut rng),
                wv: normal_mat(d, d, proj, &mut rng),
                wo: normal_mat(d, d, resid, &mut rng),
                ln2: vec![T::one(); d],
                w1: normal_mat(d, f, proj, &mut rng),
                w2: normal_mat(f, d, 1.0 / (f as f64).sqrt() / (2.0 * config.num_layers as f64).sqrt(), &mut rng),
            })
            .collect();
        let unembed = normal_mat(d, v, 0.02, &mut rng);
        let mut pe_rng = ChaCha8Rng::seed_from_u64(seed ^ PE_SEED_SALT);
        let pe = match &config.pe {
            PeConfig::Nope => PeState::Nope,
            PeConfig::Rope(r) => PeState::Rope(*r),
            PeConfig::Additive { heads } => PeState::Additive(if heads.len() == 1 {
                vec![heads[0].clone(); config.num_heads]
            } else {
                heads.clone()
            }),
            PeConfig::Fire(fc) => {
                let count = if config.share_pe_across_layers {
                    1
                } else {
                    config.num_layers
                };
                PeState::Fire(
                    (0..count)
                        .map(|_| FireParams::init(fc, config.num_heads, &mut pe_rng))
                        .collect(),
                )
            }
        };
        let params = ModelParams {
            config: config.clone(),
            embed,
            layers,
            ln_f: vec![T::one(); d],
            unembed,
            pe,
        };
        params.validate()?;
        Ok(params)
    }

    /// All-zero dense tensors with the given PE state.
    pub(crate) fn zeros(config: &ModelConfig, pe: PeState) -> Self {
        let (d, f, v) = (config.d_model, config.d_ffn(), config.vocab_size);
        ModelParams {
            config: config.clone(),
            embed: Mat::zeros(v, d),
            layers: (0..config.num_layers).map(|_| LayerParams::zeros(d, f)).collect(),
            ln_f: vec![T::zero(); d],
            unembed: Mat::zeros(d, v),
            pe,
        }
    }

    /// Checks tensor shapes and PE state against the config.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let (d, f, v) = (c.d_model, c.d_ffn(), c.vocab_size);
        let bad = |what: &str| Err(Error::InvalidParameter(format!("{what} has the wrong shape")));
        if (self.embed.rows, self.embed.cols) != (v, d) {
            return bad("embed");
        }
        if (self.unembed.rows, self.unembed.cols) != (d, v) || self.ln_f.len() != d {
            return bad("unembedding");
        }
        if self.layers.len() != c.num_layers {
            return bad("layer stack");
        }
        for l in &self.layers {
            let ok = l.ln1.len() == d
                && l.ln2.len() == d
                && [&l.wq, &l.wk, &l.wv, &l.wo].iter().all(|m| (m.rows, m.cols) == (d, d))
                && (l.w1.rows, l.w1.cols) == (d, f)
                && (l.w2.rows, l.w2.cols) == (f, d);
            if !ok {
                return bad("layer");
            }
        }
        match &self.pe {
            PeState::Fire(states) => {
                let want = if c.share_pe_across_layers { 1 } else { c.num_layers };
                if states.len() != want {
                    return Err(Error::InvalidParameter(format!(
                        "expected {want} FIRE states, found {}",
                        states.len()
                    )));
                }
                for s in states {
                    s.validate()?;
                    if s.heads != c.num_heads {
                        return bad("FIRE head count");
                    }
                }
            }
            PeState::Additive(specs) => {
                if specs.len() != c.num_heads {
                    return bad("additive head list");
                }
                specs.iter().try_for_each(BiasSpec::validate)?;
            }
            PeState::Rope(r) => {
                r.validate()?;
                if r.head_dim != c.d_head {
                    return bad("rope head_dim");
                }
            }
            PeState::Nope => {}
        }
        Ok(())
    }

    /// Visits every dense tensor in a fixed order.
    pub fn visit_tensors<'a>(&'a self, mut f: impl FnMut(&str, &'a [T])) {
        f("embed", &self.embed.data);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("layer{i}"), &mut f);
        }
        f("ln_f", &self.ln_f);
        f("unembed", &self.unembed.data);
    }

    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("embed", &mut self.embed.data);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("layer{i}"), &mut f);
        }
        f("ln_f", &mut self.ln_f);
        f("unembed", &mut self.unembed.data);
    }

    /// `(name, dims)` of every dense tensor, in visit order.
    pub fn tensor_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (config.d_model, config.d_ffn(), config.vocab_size);
        let mut out = vec![("embed".to_string(), vec![v, d])];
        for i in 0..config.num_layers {
            for (name, dims) in LayerParams::<T>::shapes(d, f) {
                out.push((format!("layer{i}.{name}"), dims));
            }
        }
        out.push(("ln_f".into(), vec![d]));
        out.push(("unembed".into(), vec![d, v]));
        out
    }

    pub fn fire_states(&self) -> &[FireParams] {
        match &self.pe {
            PeState::Fire(s) => s,
            _ => &[],
        }
    }

    pub fn fire_states_mut(&mut self) -> &mut [FireParams] {
        match &mut self.pe {
            PeState::Fire(s) => s,
            _ => &mut [],
        }
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        let c = &self.config;
        ModelGrads {
            embed: Mat::zeros(c.vocab_size, c.d_model),
            layers: (0..c.num_layers)
                .map(|_| LayerParams::zeros(c.d_model, c.d_ffn()))
                .collect(),
            ln_f: vec![T::zero(); c.d_model],
            unembed: Mat::zeros(c.d_model, c.vocab_size),
            fire: self.fire_states().iter().map(FireGrad::zeros_like).collect(),
        }
    }

    /// Number of scalar parameters, PE state included.
    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_tensors(|_, t| n += t.len());
        let mut fire = self.fire_states().to_vec();
        for s in &mut fire {
            s.visit_trainable_mut(|t| n += t.len());
        }
        n
    }
}

/// Gradient buffers shaped like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub embed: Mat<T>,
    pub layers: Vec<LayerParams<T>>,
    pub ln_f: Vec<T>,
    pub unembed: Mat<T>,
    /// One entry per FIRE state in the parameters.
    pub fire: Vec<FireGrad>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn visit_tensors<'a>(&'a self, mut f: impl FnMut(&str, &'a [T])) {
        f("embed", &self.embed.data);
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("layer{i}"), &mut f);
        }
        f("ln_f", &self.ln_f);
        f("unembed", &self.unembed.data);
    }

    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("embed", &mut self.embed.data);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("layer{i}"), &mut f);
        }
        f("ln_f", &mut self.ln_f);
        f("unembed", &mut self.unembed.data);
    }

    pub fn clear(&mut self) {
        self.visit_tensors_mut(|_, t| t.iter_mut().for_each(|v| *v = T::zero()));
        self.fire.iter_mut().for_each(FireGrad::clear);
    }

    /// True when every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        let mut zero = true;
        self.visit_tensors(|_, t| zero &= t.iter().all(|v| *v == T::zero()));
        for g in &self.fire {
            zero &= g.c == 0.0 && g.l_multiplier == 0.0;
            for l in &g.mlp {
                zero &= l.weight.iter().all(|v| *v == 0.0);
                zero &= l.bias.iter().flatten().all(|v| *v == 0.0);
            }
        }
        zero
    }
}
