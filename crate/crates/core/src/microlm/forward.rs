//! Pre-LN causal transformer forward pass.
//!
//! A batch of variable-length samples is stacked row-wise so every dense
//! projection runs as one GEMM; attention runs per sample and head.

use super::model::{ModelParams, PeState};
use super::task::TaskSample;
use super::tensor::{matmul_into, Mat, Scalar};
use crate::fire::{fire_bias_matrix_into, MlpScratch};
use crate::kernels::rope::RopeTable;
use crate::kernels::{build_bias_matrix_heads, BiasMatrix};
use crate::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Causal softmax of `logits[..=i]`; entries past `i` are masked to zero.
///
/// Unmasked entries equal to `-inf` also count as masked. Fails when nothing
/// in the row is left unmasked.
pub fn softmax_causal(logits: &[f64], i: usize) -> Result<Vec<f64>> {
    if logits.len() < i + 1 {
        return Err(Error::InvalidInput(format!(
            "row of length {} has no entry for query {i}",
            logits.len()
        )));
    }
    let live = &logits[..=i];
    let max = live.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateRow { row: i });
    }
    let mut out = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(live) {
        *o = (l - max).exp();
        sum += *o;
    }
    out[..=i].iter_mut().for_each(|o| *o /= sum);
    Ok(out)
}

const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// `tanh(z)` through a single `exp`, which is much cheaper than libm `tanh`.
#[inline]
fn tanh_via_exp<T: Scalar>(z: T) -> T {
    let two = T::of(2.0);
    T::one() - two / ((two * z).exp() + T::one())
}

/// The tanh term of the GELU approximation, cached between passes.
#[inline]
pub(crate) fn gelu_tanh<T: Scalar>(x: T) -> T {
    tanh_via_exp(T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x))
}

#[inline]
pub(crate) fn gelu_from_tanh<T: Scalar>(x: T, t: T) -> T {
    T::of(0.5) * x * (T::one() + t)
}

#[inline]
pub(crate) fn gelu_grad_from_tanh<T: Scalar>(x: T, t: T) -> T {
    let half = T::of(0.5);
    let k = T::of(GELU_K);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0 * GELU_C) * x * x)
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    pub xhat: Mat<T>,
    pub rstd: Vec<T>,
}

/// `out = gain * (x - mean) / sqrt(var + eps)` per row.
pub(crate) fn layer_norm<T: Scalar>(x: &Mat<T>, gain: &[T]) -> (Mat<T>, LnCache<T>) {
    let d = x.cols;
    let inv_d = T::of(1.0 / d as f64);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut out = Mat::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (o, &v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        for ((o, &h), &g) in out.row_mut(r).iter_mut().zip(xhat.row(r)).zip(gain) {
            *o = h * g;
        }
    }
    (out, LnCache { xhat, rstd })
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    pub ln1: LnCache<T>,
    pub h1: Mat<T>,
    /// Queries and keys after any rotary embedding.
    pub q: Mat<T>,
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// Attention probabilities, packed lower triangles per sample and head.
    pub probs: Vec<T>,
    pub o: Mat<T>,
    pub ln2: LnCache<T>,
    pub h2: Mat<T>,
    pub u: Mat<T>,
    /// GELU tanh term of `u`.
    pub t: Mat<T>,
    pub g: Mat<T>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `(row offset, length)` per sample.
    pub(crate) segments: Vec<(usize, usize)>,
    pub(crate) tokens: Vec<usize>,
    pub(crate) mask: Vec<bool>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) ln_f: LnCache<T>,
    pub(crate) hf: Mat<T>,
    /// Bias matrices: one for additive PE, one per FIRE state.
    pub(crate) biases: Vec<BiasMatrix>,
    pub(crate) rope: Option<RopeTable>,
    /// Start of each sample's block inside `LayerCache::probs`.
    pub(crate) prob_offsets: Vec<usize>,
}

impl<T> ForwardCache<T> {
    pub fn num_samples(&self) -> usize {
        self.segments.len()
    }

    /// Index into `biases` used by `layer`, if any.
    pub(crate) fn bias_index(&self, layer: usize) -> Option<usize> {
        match self.biases.len() {
            0 => None,
            1 => Some(0),
            _ => Some(layer),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `rows x vocab`, samples stacked in input order.
    pub logits: Mat<T>,
    pub cache: ForwardCache<T>,
}

impl<T: Scalar> ForwardOutput<T> {
    /// Logits of sample `s`.
    pub fn sample_logits(&self, s: usize) -> Vec<&[T]> {
        let (off, n) = self.cache.segments[s];
        (off..off + n).map(|r| self.logits.row(r)).collect()
    }

    /// Attention weights of query `i` over keys `0..=i` for one sample and head.
    pub fn attention_row(&self, layer: usize, sample: usize, head: usize, i: usize) -> Option<&[T]> {
        let (_, n) = *self.cache.segments.get(sample)?;
        let probs = &self.cache.layers.get(layer)?.probs;
        let start = self.cache.prob_offsets[sample];
        let end = self.cache.prob_offsets.get(sample + 1).copied().unwrap_or(probs.len());
        if i >= n || head >= (end - start) / tri(n) {
            return None;
        }
        let base = start + head * tri(n) + tri(i);
        probs.get(base..base + i + 1)
    }
}

#[inline]
fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

fn check_tokens<T: Scalar>(params: &ModelParams<T>, samples: &[TaskSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("forward needs at least one sample".into()));
    }
    let vocab = params.config.vocab_size;
    for (s, sample) in samples.iter().enumerate() {
        if sample.tokens.is_empty() || sample.tokens.len() != sample.loss_mask.len() {
            return Err(Error::InvalidInput(format!(
                "sample {s}: {} tokens with {} mask entries",
                sample.tokens.len(),
                sample.loss_mask.len()
            )));
        }
        if let Some(t) = sample.tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidInput(format!(
                "sample {s}: token id {t} outside vocabulary of {vocab}"
            )));
        }
    }
    Ok(())
}

/// Builds the bias matrices for sequences up to `n` positions.
pub(crate) fn build_biases(pe: &PeState, n: usize) -> Result<Vec<BiasMatrix>> {
    Ok(match pe {
        PeState::Nope | PeState::Rope(_) => Vec::new(),
        PeState::Additive(specs) => vec![build_bias_matrix_heads(specs, n)?],
        PeState::Fire(states) => {
            let mut scratch = MlpScratch::default();
            states
                .iter()
                .map(|s| {
                    let mut m = BiasMatrix::zeros(s.heads, n);
                    fire_bias_matrix_into(n, s, &mut m, &mut scratch)?;
                    Ok(m)
                })
                .collect::<Result<_>>()?
        }
    })
}

/// Runs the model on a batch of samples.
pub fn forward_lm<T: Scalar>(params: &ModelParams<T>, samples: &[TaskSample]) -> Result<ForwardOutput<T>> {
    check_tokens(params, samples)?;
    let cfg = &params.config;
    let (d, dh, heads) = (cfg.d_model, cfg.d_head, cfg.num_heads);
    let mut segments = Vec::with_capacity(samples.len());
    let mut prob_offsets = Vec::with_capacity(samples.len());
    let (mut rows, mut probs_len, mut n_max) = (0, 0, 0);
    for s in samples {
        let n = s.tokens.len();
        segments.push((rows, n));
        prob_offsets.push(probs_len);
        rows += n;
        probs_len += heads * tri(n);
        n_max = n_max.max(n);
    }
    let tokens: Vec<usize> = samples.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    let mask: Vec<bool> = samples.iter().flat_map(|s| s.loss_mask.iter().copied()).collect();

    let biases = build_biases(&params.pe, n_max)?;
    let rope = match &params.pe {
        PeState::Rope(r) => Some(RopeTable::new(r, n_max)?),
        _ => None,
    };

    let mut x = Mat::from_fn(rows, d, |r, c| params.embed.row(tokens[r])[c]);
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut layer_caches = Vec::with_capacity(cfg.num_layers);

    for (li, lp) in params.layers.iter().enumerate() {
        let (h1, ln1) = layer_norm(&x, &lp.ln1);
        let mut q = Mat::zeros(rows, d);
        let mut k = Mat::zeros(rows, d);
        let mut v = Mat::zeros(rows, d);
        matmul_into(h1.view(), lp.wq.view(), &mut q, false);
        matmul_into(h1.view(), lp.wk.view(), &mut k, false);
        matmul_into(h1.view(), lp.wv.view(), &mut v, false);
        if let Some(table) = &rope {
            for &(off, n) in &segments {
                for i in 0..n {
                    for h in 0..heads {
                        table.rotate(&mut q.row_mut(off + i)[h * dh..(h + 1) * dh], i, false);
                        table.rotate(&mut k.row_mut(off + i)[h * dh..(h + 1) * dh], i, false);
                    }
                }
            }
        }
        let bias = match biases.len() {
            0 => None,
            1 => Some(&biases[0]),
            _ => Some(&biases[li]),
        };
        let mut probs = vec![T::zero(); probs_len];
        let mut o = Mat::zeros(rows, d);
        let mut scores: Vec<T> = Vec::with_capacity(n_max);
        for (s, &(off, n)) in segments.iter().enumerate() {
            for h in 0..heads {
                let base = prob_offsets[s] + h * tri(n);
                let cols = h * dh..(h + 1) * dh;
                for i in 0..n {
                    let qi = &q.row(off + i)[cols.clone()];
                    scores.clear();
                    for j in 0..=i {
                        let kj = &k.row(off + j)[cols.clone()];
                        let dot = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                        scores.push(match bias {
                            Some(b) => dot + T::of(b.row(h, i)[j]),
                            None => dot,
                        });
                    }
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut sum = T::zero();
                    for sc in scores.iter_mut() {
                        *sc = (*sc - max).exp();
                        sum += *sc;
                    }
                    let inv = T::one() / sum;
                    let prow = &mut probs[base + tri(i)..base + tri(i) + i + 1];
                    for (p, &sc) in prow.iter_mut().zip(&scores) {
                        *p = sc * inv;
                    }
                    let orow = &mut o.row_mut(off + i)[cols.clone()];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &v.row(off + j)[cols.clone()];
                        for (acc, &vv) in orow.iter_mut().zip(vj) {
                            *acc += p * vv;
                        }
                    }
                }
            }
        }
        // residual: x += o @ wo
        matmul_into(o.view(), lp.wo.view(), &mut x, true);
        let (h2, ln2) = layer_norm(&x, &lp.ln2);
        let mut u = Mat::zeros(rows, cfg.d_ffn());
        matmul_into(h2.view(), lp.w1.view(), &mut u, false);
        let mut t = Mat::zeros(u.rows, u.cols);
        let mut g = Mat::zeros(u.rows, u.cols);
        for ((tv, gv), &z) in t.data.iter_mut().zip(g.data.iter_mut()).zip(&u.data) {
            *tv = gelu_tanh(z);
            *gv = gelu_from_tanh(z, *tv);
        }
        matmul_into(g.view(), lp.w2.view(), &mut x, true);
        layer_caches.push(LayerCache {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            h2,
            u,
            t,
            g,
        });
    }

    let (hf, ln_f) = layer_norm(&x, &params.ln_f);
    let mut logits = Mat::zeros(rows, cfg.vocab_size);
    matmul_into(hf.view(), params.unembed.view(), &mut logits, false);
    Ok(ForwardOutput {
        logits,
        cache: ForwardCache {
            segments,
            tokens,
            mask,
            layers: layer_caches,
            ln_f,
            hf,
            biases,
            rope,
            prob_offsets,
        },
    })
}

/// Logits for a single unsupervised token sequence.
pub fn forward_tokens<T: Scalar>(params: &ModelParams<T>, tokens: &[usize]) -> Result<Mat<T>> {
    let sample = TaskSample {
        tokens: tokens.to_vec(),
        loss_mask: vec![false; tokens.len()],
    };
    Ok(forward_lm(params, std::slice::from_ref(&sample))?.logits)
}

/// Masked next-token statistics of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossStats {
    /// Mean cross-entropy over supervised targets (0 when there are none).
    pub loss: f64,
    /// Supervised targets whose argmax prediction is correct.
    pub correct: usize,
    pub count: usize,
}

impl LossStats {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

/// Row `r` predicts token `r + 1` of its sample; it is supervised when that
/// token's mask bit is set. Calls `f(row, target)` for every supervised row.
pub(crate) fn for_each_target<T>(cache: &ForwardCache<T>, mut f: impl FnMut(usize, usize)) {
    for &(off, n) in &cache.segments {
        for p in 0..n.saturating_sub(1) {
            if cache.mask[off + p + 1] {
                f(off + p, cache.tokens[off + p + 1]);
            }
        }
    }
}

/// Cross-entropy and accuracy over supervised targets, accumulated in `f64`.
pub fn masked_loss<T: Scalar>(out: &ForwardOutput<T>) -> LossStats {
    let mut total = 0.0;
    let mut correct = 0;
    let mut count = 0;
    for_each_target(&out.cache, |row, target| {
        let l = out.logits.row(row);
        let max = l.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
        total += lse - l[target].f64();
        let argmax = l
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
                if v.f64() > best.1 {
                    (i, v.f64())
                } else {
                    best
                }
            })
            .0;
        correct += usize::from(argmax == target);
        count += 1;
    });
    LossStats {
        loss: if count == 0 { 0.0 } else { total / count as f64 },
        correct,
        count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        let p = softmax_causal(&[0.0, 0.0, 0.0], 2).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = softmax_causal(&[2f64.ln(), 0.0], 1).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(softmax_causal(&[5.0, 1.0, 2.0], 0).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_degenerate_rows() {
        assert!(matches!(
            softmax_causal(&[f64::NEG_INFINITY, 3.0], 0),
            Err(Error::DegenerateRow { row: 0 })
        ));
        assert!(softmax_causal(&[1.0], 2).is_err());
        // large logits stay finite thanks to max subtraction
        let p = softmax_causal(&[1000.0, 999.0], 1).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_matches_reference() {
        for x in [-30.0, -2.0, -0.3, 0.0, 1e-9, 0.8, 3.1, 40.0] {
            let t = gelu_tanh(x);
            assert_abs_diff_eq!(gelu_from_tanh(x, t), crate::fire::gelu(x), epsilon = 1e-14);
            assert_abs_diff_eq!(gelu_grad_from_tanh(x, t), crate::fire::gelu_grad(x), epsilon = 1e-14);
        }
        let t = gelu_tanh(200.0f32);
        assert_eq!(gelu_from_tanh(200.0f32, t), 200.0);
    }
}
