//! Reverse pass of [`forward_lm`](super::forward::forward_lm).

use super::forward::{for_each_target, gelu_grad_from_tanh, masked_loss, ForwardOutput, LnCache, LossStats};
use super::model::{ModelGrads, ModelParams, PeState};
use super::tensor::{matmul_into, Mat, Scalar};
use crate::fire::{fire_bias_matrix_backward, MlpScratch};
use crate::kernels::BiasMatrix;
use crate::{Error, Result};

/// Adds the LayerNorm input gradient to `dx` and the gain gradient to `dgain`.
fn layer_norm_backward<T: Scalar>(dy: &Mat<T>, cache: &LnCache<T>, gain: &[T], dgain: &mut [T], dx: &mut Mat<T>) {
    let d = dy.cols;
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows {
        let xh = cache.xhat.row(r);
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for c in 0..d {
            let g = dy.row(r)[c];
            dgain[c] += g * xh[c];
            dxhat[c] = g * gain[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let rs = cache.rstd[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o += rs * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

/// Gradient of the masked mean cross-entropy with respect to the logits.
fn logits_grad<T: Scalar>(out: &ForwardOutput<T>) -> Mat<T> {
    let mut count = 0usize;
    for_each_target(&out.cache, |_, _| count += 1);
    let mut dlogits = Mat::zeros(out.logits.rows, out.logits.cols);
    if count == 0 {
        return dlogits;
    }
    let inv = 1.0 / count as f64;
    let mut p = vec![0.0; out.logits.cols];
    for_each_target(&out.cache, |row, target| {
        let l = out.logits.row(row);
        let max = l.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (pv, v) in p.iter_mut().zip(l) {
            *pv = (v.f64() - max).exp();
            sum += *pv;
        }
        let g = dlogits.row_mut(row);
        for (c, (o, pv)) in g.iter_mut().zip(&p).enumerate() {
            let one_hot = if c == target { 1.0 } else { 0.0 };
            *o = T::of((pv / sum - one_hot) * inv);
        }
    });
    dlogits
}

/// Rejects PE states whose parameters cannot be differentiated.
fn check_differentiable<T: Scalar>(params: &ModelParams<T>) -> Result<()> {
    if let PeState::Fire(states) = &params.pe {
        for s in states {
            s.mlp.check_differentiable().map_err(|e| {
                Error::NonDifferentiable(format!("FIRE state cannot be trained: {e}"))
            })?;
        }
    }
    Ok(())
}

/// Computes every parameter gradient of the masked mean cross-entropy,
/// overwriting `grads`. Additive PE specs are fixed and receive no gradient.
pub fn backward_into<T: Scalar>(
    params: &ModelParams<T>,
    out: &ForwardOutput<T>,
    grads: &mut ModelGrads<T>,
) -> Result<LossStats> {
    check_differentiable(params)?;
    let cache = &out.cache;
    let cfg = &params.config;
    let (d, dh, heads) = (cfg.d_model, cfg.d_head, cfg.num_heads);
    let rows = out.logits.rows;
    if cache.layers.len() != cfg.num_layers || grads.layers.len() != cfg.num_layers {
        return Err(Error::InvalidInput("forward cache does not match the model".into()));
    }
    grads.clear();
    let stats = masked_loss(out);

    let dlogits = logits_grad(out);
    matmul_into(cache.hf.view().t(), dlogits.view(), &mut grads.unembed, false);
    let mut dhf = Mat::zeros(rows, d);
    matmul_into(dlogits.view(), params.unembed.view().t(), &mut dhf, false);
    let mut dx = Mat::zeros(rows, d);
    layer_norm_backward(&dhf, &cache.ln_f, &params.ln_f, &mut grads.ln_f, &mut dx);

    let fire = matches!(params.pe, PeState::Fire(_));
    let mut dbias: Vec<BiasMatrix> = if fire {
        cache.biases.iter().map(|b| BiasMatrix::zeros(b.heads(), b.len())).collect()
    } else {
        Vec::new()
    };
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut dp: Vec<T> = Vec::new();

    for li in (0..cfg.num_layers).rev() {
        let lc = &cache.layers[li];
        let lp = &params.layers[li];
        let lg = &mut grads.layers[li];

        matmul_into(lc.g.view().t(), dx.view(), &mut lg.w2, false);
        let mut du = Mat::zeros(rows, cfg.d_ffn());
        matmul_into(dx.view(), lp.w2.view().t(), &mut du, false);
        for ((g, &u), &t) in du.data.iter_mut().zip(&lc.u.data).zip(&lc.t.data) {
            *g *= gelu_grad_from_tanh(u, t);
        }
        matmul_into(lc.h2.view().t(), du.view(), &mut lg.w1, false);
        let mut dh2 = Mat::zeros(rows, d);
        matmul_into(du.view(), lp.w1.view().t(), &mut dh2, false);
        layer_norm_backward(&dh2, &lc.ln2, &lp.ln2, &mut lg.ln2, &mut dx);

        matmul_into(lc.o.view().t(), dx.view(), &mut lg.wo, false);
        let mut d_o = Mat::zeros(rows, d);
        matmul_into(dx.view(), lp.wo.view().t(), &mut d_o, false);

        let mut dq = Mat::zeros(rows, d);
        let mut dk = Mat::zeros(rows, d);
        let mut dv = Mat::zeros(rows, d);
        let bias_slot = if fire { cache.bias_index(li) } else { None };
        for (s, &(off, n)) in cache.segments.iter().enumerate() {
            for h in 0..heads {
                let base = cache.prob_offsets[s] + h * n * (n + 1) / 2;
                let cols = h * dh..(h + 1) * dh;
                for i in 0..n {
                    let prow = &lc.probs[base + i * (i + 1) / 2..base + i * (i + 1) / 2 + i + 1];
                    let doi = &d_o.row(off + i)[cols.clone()];
                    dp.clear();
                    let mut weighted = T::zero();
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &lc.v.row(off + j)[cols.clone()];
                        let g = doi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                        weighted += p * g;
                        dp.push(g);
                        for (acc, &o) in dv.row_mut(off + j)[cols.clone()].iter_mut().zip(doi) {
                            *acc += p * o;
                        }
                    }
                    for (j, &p) in prow.iter().enumerate() {
                        let ds = p * (dp[j] - weighted);
                        if ds == T::zero() {
                            continue;
                        }
                        if let Some(slot) = bias_slot {
                            dbias[slot].row_mut(h, i)[j] += ds.f64();
                        }
                        let ds = ds * scale;
                        let kj = &lc.k.row(off + j)[cols.clone()];
                        for (acc, &kv) in dq.row_mut(off + i)[cols.clone()].iter_mut().zip(kj) {
                            *acc += ds * kv;
                        }
                        let qi = &lc.q.row(off + i)[cols.clone()];
                        for (acc, &qv) in dk.row_mut(off + j)[cols.clone()].iter_mut().zip(qi) {
                            *acc += ds * qv;
                        }
                    }
                }
            }
        }
        if let Some(table) = &cache.rope {
            for &(off, n) in &cache.segments {
                for i in 0..n {
                    for h in 0..heads {
                        table.rotate(&mut dq.row_mut(off + i)[h * dh..(h + 1) * dh], i, true);
                        table.rotate(&mut dk.row_mut(off + i)[h * dh..(h + 1) * dh], i, true);
                    }
                }
            }
        }
        matmul_into(lc.h1.view().t(), dq.view(), &mut lg.wq, false);
        matmul_into(lc.h1.view().t(), dk.view(), &mut lg.wk, false);
        matmul_into(lc.h1.view().t(), dv.view(), &mut lg.wv, false);
        let mut dh1 = Mat::zeros(rows, d);
        matmul_into(dq.view(), lp.wq.view().t(), &mut dh1, false);
        matmul_into(dk.view(), lp.wk.view().t(), &mut dh1, true);
        matmul_into(dv.view(), lp.wv.view().t(), &mut dh1, true);
        layer_norm_backward(&dh1, &lc.ln1, &lp.ln1, &mut lg.ln1, &mut dx);
    }

    for (r, &tok) in cache.tokens.iter().enumerate() {
        for (e, &g) in grads.embed.row_mut(tok).iter_mut().zip(dx.row(r)) {
            *e += g;
        }
    }

    if let PeState::Fire(states) = &params.pe {
        let mut scratch = MlpScratch::default();
        for ((state, db), g) in states.iter().zip(&dbias).zip(grads.fire.iter_mut()) {
            fire_bias_matrix_backward(state, db, g, &mut scratch)?;
        }
    }
    Ok(stats)
}

/// Allocating wrapper around [`backward_into`].
pub fn backward_lm<T: Scalar>(params: &ModelParams<T>, out: &ForwardOutput<T>) -> Result<(LossStats, ModelGrads<T>)> {
    let mut grads = params.zero_grads();
    let stats = backward_into(params, out, &mut grads)?;
    Ok((stats, grads))
}
