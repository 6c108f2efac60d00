//! Analytic gradients of the FIRE bias with respect to the MLP weights,
//! the log-transform scale `c` and the threshold multiplier.

use super::{sign, FireParams, Layer, MlpScratch, Psi};
use crate::kernels::BiasMatrix;
use crate::{Error, Result};

/// Gradient buffer shaped like a [`FireParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FireGrad {
    pub mlp: Vec<Layer>,
    pub c: f64,
    pub l_multiplier: f64,
}

impl FireGrad {
    pub fn zeros_like(params: &FireParams) -> Self {
        FireGrad {
            mlp: params.mlp.zeros_like(),
            c: 0.0,
            l_multiplier: 0.0,
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.mlp {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().flatten().for_each(|b| *b = 0.0);
        }
        self.c = 0.0;
        self.l_multiplier = 0.0;
    }

    /// Visits gradient slices in the order of [`FireParams::visit_trainable_mut`].
    pub fn visit(&self, mut f: impl FnMut(&[f64])) {
        for l in &self.mlp {
            f(&l.weight);
            if let Some(b) = &l.bias {
                f(b);
            }
        }
        f(std::slice::from_ref(&self.c));
        f(std::slice::from_ref(&self.l_multiplier));
    }

    pub fn add_assign(&mut self, other: &FireGrad) {
        for (a, b) in self.mlp.iter_mut().zip(&other.mlp) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            if let (Some(x), Some(y)) = (a.bias.as_mut(), b.bias.as_ref()) {
                x.iter_mut().zip(y).for_each(|(p, q)| *p += q);
            }
        }
        self.c += other.c;
        self.l_multiplier += other.l_multiplier;
    }
}

/// Visits every trainable slice in a fixed order: per layer weight then
/// bias, then `c`, then `l_multiplier`.
pub(crate) fn visit_fire_mut(
    mlp: &mut [Layer],
    c: &mut f64,
    l_multiplier: &mut f64,
    mut f: impl FnMut(&mut [f64]),
) {
    for l in mlp {
        f(&mut l.weight);
        if let Some(b) = l.bias.as_mut() {
            f(b);
        }
    }
    f(std::slice::from_mut(c));
    f(std::slice::from_mut(l_multiplier));
}

impl FireParams {
    pub fn visit_trainable_mut(&mut self, f: impl FnMut(&mut [f64])) {
        visit_fire_mut(&mut self.mlp.layers, &mut self.c, &mut self.l_multiplier, f)
    }

    pub(crate) fn check_trainable(&self) -> Result<()> {
        self.validate()?;
        self.mlp.check_differentiable()
    }

    #[inline]
    fn psi_derivative_x(&self, x: f64) -> f64 {
        match self.psi {
            Psi::Identity => 1.0,
            Psi::Log => self.c.abs() / (1.0 + self.c.abs() * x),
        }
    }

    #[inline]
    fn psi_derivative_c(&self, x: f64) -> f64 {
        match self.psi {
            Psi::Identity => 0.0,
            Psi::Log => sign(self.c) * x / (1.0 + self.c.abs() * x),
        }
    }

    /// Backpropagates upstream `dy` at distance `d` for query `i` into `grad`.
    fn accumulate_entry(
        &self,
        d: usize,
        i: usize,
        dy: &[f64],
        grad: &mut FireGrad,
        scratch: &mut MlpScratch,
    ) -> Result<()> {
        let m = self.normalizer_position(i)?;
        let num = self.psi_at(d as f64);
        let den = self.psi_at(m) + self.eps;
        let x = num / den;
        let dx = self.mlp.backward_into(x, dy, &mut grad.mlp, scratch)?;
        if dx == 0.0 {
            return Ok(());
        }
        // x = num / den
        let dnum_dc = self.psi_derivative_c(d as f64);
        let dden_dc = self.psi_derivative_c(m);
        grad.c += dx * (dnum_dc - x * dden_dc) / den;
        // m = max(L, i) only moves with L while L > i
        let l = self.threshold();
        if self.use_threshold && l > i as f64 {
            let dm_dmult = sign(self.l_multiplier * self.init_l) * self.init_l;
            let dx_dm = -x * self.psi_derivative_x(m) / den;
            grad.l_multiplier += dx * dx_dm * dm_dmult;
        }
        Ok(())
    }
}

/// Gradients of `upstream . fire_bias(i, j)` with respect to every trainable value.
pub fn fire_grad(i: usize, j: usize, params: &FireParams, upstream: &[f64]) -> Result<FireGrad> {
    params.check_trainable()?;
    if upstream.len() != params.heads {
        return Err(Error::InvalidParameter(format!(
            "upstream has {} entries for {} heads",
            upstream.len(),
            params.heads
        )));
    }
    let d = i
        .checked_sub(j)
        .ok_or_else(|| Error::InvalidInput(format!("key {j} is after query {i}")))?;
    let mut g = FireGrad::zeros_like(params);
    params.accumulate_entry(d, i, upstream, &mut g, &mut MlpScratch::default())?;
    Ok(g)
}

/// Accumulates into `grad` the gradient of `sum_{h,i,j} dbias[h,i,j] * B[h,i,j]`
/// where `B` is the FIRE bias matrix over `dbias.len()` positions.
///
/// Entries sharing a normalized distance are summed first so the MLP is
/// backpropagated once per distinct input.
pub fn fire_bias_matrix_backward(
    params: &FireParams,
    dbias: &BiasMatrix,
    grad: &mut FireGrad,
    scratch: &mut MlpScratch,
) -> Result<()> {
    params.check_trainable()?;
    let heads = params.heads;
    if dbias.heads() != heads {
        return Err(Error::InvalidParameter(format!(
            "bias gradient has {} heads, FIRE has {heads}",
            dbias.heads()
        )));
    }
    let n = dbias.len();
    let shared = params.thresholded_rows(n);
    let mut dy = vec![0.0; heads];
    for d in 0..shared {
        for (h, g) in dy.iter_mut().enumerate() {
            *g = (d..shared).map(|i| dbias.row(h, i)[i - d]).sum();
        }
        if dy.iter().any(|&g| g != 0.0) {
            params.accumulate_entry(d, d, &dy, grad, scratch)?;
        }
    }
    for i in shared..n {
        for j in 0..=i {
            for (h, g) in dy.iter_mut().enumerate() {
                *g = dbias.row(h, i)[j];
            }
            if dy.iter().any(|&g| g != 0.0) {
                params.accumulate_entry(i - j, i, &dy, grad, scratch)?;
            }
        }
    }
    Ok(())
}
