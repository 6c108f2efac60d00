//! Tiny scalar-input MLP used as the FIRE function approximator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Elementwise activation.
///
/// `Step`, `Power` and `Cos` only appear in exact constructions; gradients
/// are not defined for them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
    /// `1{x >= 0}`
    Step,
    /// `x^exponent` for `x >= 0`
    Power { exponent: f64 },
    Cos,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl Activation {
    pub fn is_differentiable(&self) -> bool {
        matches!(self, Activation::Relu | Activation::Gelu | Activation::Identity)
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
            Activation::Step => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Power { exponent } => x.powf(exponent),
            Activation::Cos => x.cos(),
        }
    }

    /// Derivative at `x`; relu uses subgradient 0 at 0.
    #[inline]
    fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => gelu_grad(x),
            Activation::Identity => 1.0,
            // guarded by is_differentiable
            _ => f64::NAN,
        }
    }
}

/// Affine map `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<Vec<f64>>,
    bias: Option<Vec<f64>>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        let weight = (0..l.out_dim)
            .map(|r| l.weight[r * l.in_dim..(r + 1) * l.in_dim].to_vec())
            .collect();
        LayerRepr {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight,
            bias: l.bias,
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        if r.weight.len() != r.out_dim || r.weight.iter().any(|row| row.len() != r.in_dim) {
            return Err(format!(
                "weight is not a {}x{} matrix",
                r.out_dim, r.in_dim
            ));
        }
        if r.bias.as_ref().is_some_and(|b| b.len() != r.out_dim) {
            return Err(format!("bias must have {} entries", r.out_dim));
        }
        Ok(Layer {
            in_dim: r.in_dim,
            out_dim: r.out_dim,
            weight: r.weight.concat(),
            bias: r.bias,
        })
    }
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        Layer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: with_bias.then(|| vec![0.0; out_dim]),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, with_bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = || rng.gen_range(-bound..=bound);
        let weight = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = with_bias.then(|| (0..out_dim).map(|_| draw()).collect());
        Layer {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    #[inline]
    fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias.as_ref().map_or(0.0, |b| b[r]);
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *o = acc;
        }
    }
}

/// Stack of affine layers mapping a scalar to `H` outputs.
///
/// `hidden_activation[k]` follows layer `k`; the last layer is followed by
/// `final_activation` when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub hidden_activation: Vec<Activation>,
    #[serde(default)]
    pub final_activation: Option<Activation>,
}

/// Reusable buffers for evaluating an [`MlpParams`] without allocating.
#[derive(Debug, Default, Clone)]
pub struct MlpScratch {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    grad: Vec<f64>,
    grad_next: Vec<f64>,
    sink: Vec<f64>,
}

impl MlpParams {
    /// Scalar-in MLP with the given hidden widths and `out_dim` outputs, each layer biased.
    pub fn init<R: Rng + ?Sized>(
        hidden: &[usize],
        out_dim: usize,
        activation: Activation,
        final_activation: Option<Activation>,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![1];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .map(|w| Layer::init(w[0], w[1], true, rng))
            .collect();
        MlpParams {
            layers,
            hidden_activation: vec![activation; hidden.len()],
            final_activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("mlp needs at least one layer".into()));
        }
        if self.in_dim() != 1 {
            return Err(Error::InvalidParameter(format!(
                "mlp input width must be 1, got {}",
                self.in_dim()
            )));
        }
        if self.hidden_activation.len() + 1 != self.layers.len() {
            return Err(Error::InvalidParameter(format!(
                "{} layers need {} hidden activations, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.hidden_activation.len()
            )));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim
                || l.bias.as_ref().is_some_and(|b| b.len() != l.out_dim)
            {
                return Err(Error::InvalidParameter(format!("layer {k} has inconsistent shapes")));
            }
            if let Some(next) = self.layers.get(k + 1) {
                if next.in_dim != l.out_dim {
                    return Err(Error::InvalidParameter(format!(
                        "layer {k} outputs {} values but layer {} expects {}",
                        l.out_dim,
                        k + 1,
                        next.in_dim
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn activation_after(&self, k: usize) -> Option<&Activation> {
        self.hidden_activation.get(k).or(if k + 1 == self.layers.len() {
            self.final_activation.as_ref()
        } else {
            None
        })
    }

    fn activations(&self) -> impl Iterator<Item = Option<&Activation>> {
        self.hidden_activation
            .iter()
            .map(Some)
            .chain(std::iter::once(self.final_activation.as_ref()))
    }

    /// Fails on step, power or cos activations.
    pub fn check_differentiable(&self) -> Result<()> {
        match self.activations().flatten().find(|a| !a.is_differentiable()) {
            Some(a) => Err(Error::NonDifferentiable(format!(
                "activation {a:?} has no usable gradient"
            ))),
            None => Ok(()),
        }
    }

    pub fn zeros_like(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.in_dim, l.out_dim, l.bias.is_some()))
            .collect()
    }

    fn has_power(&self) -> bool {
        self.activations()
            .flatten()
            .any(|a| matches!(a, Activation::Power { .. }))
    }

    /// Forward pass into `out` (length `H`), reusing `scratch`. Assumes a validated MLP.
    pub(crate) fn forward_into(&self, x: f64, scratch: &mut MlpScratch, out: &mut [f64]) -> Result<()> {
        let n = self.layers.len();
        scratch.pre.resize_with(n, Vec::new);
        scratch.post.resize_with(n, Vec::new);
        let check_power = self.has_power();
        for (k, (layer, act)) in self.layers.iter().zip(self.activations()).enumerate() {
            let (done, rest) = scratch.post.split_at_mut(k);
            let input: &[f64] = if k == 0 { std::slice::from_ref(&x) } else { &done[k - 1] };
            let pre = &mut scratch.pre[k];
            pre.resize(layer.out_dim, 0.0);
            layer.apply(input, pre);
            if check_power {
                if let Some(Activation::Power { exponent }) = act {
                    if exponent.fract() != 0.0 {
                        if let Some(v) = pre.iter().find(|v| **v < 0.0) {
                            return Err(Error::Domain(format!(
                                "power activation {exponent} on negative preactivation {v}"
                            )));
                        }
                    }
                }
            }
            let post = &mut rest[0];
            post.clear();
            post.extend(pre.iter().map(|&p| act.map_or(p, |a| a.apply(p))));
        }
        out.copy_from_slice(&scratch.post[n - 1]);
        Ok(())
    }

    /// Accumulates parameter gradients for input `x` and upstream `dy`
    /// into `grad`, returning `d out / d x` contracted with `dy`.
    ///
    /// Assumes a validated, differentiable MLP.
    pub(crate) fn backward_into(
        &self,
        x: f64,
        dy: &[f64],
        grad: &mut [Layer],
        scratch: &mut MlpScratch,
    ) -> Result<f64> {
        let mut sink = std::mem::take(&mut scratch.sink);
        sink.resize(self.out_dim(), 0.0);
        let fwd = self.forward_into(x, scratch, &mut sink);
        scratch.sink = sink;
        fwd?;
        let n = self.layers.len();
        scratch.grad.clear();
        scratch.grad.extend_from_slice(dy);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            // through the activation
            if let Some(a) = self.activation_after(k) {
                for (g, &p) in scratch.grad.iter_mut().zip(&scratch.pre[k]) {
                    *g *= a.derivative(p);
                }
            }
            let input: &[f64] = if k == 0 {
                std::slice::from_ref(&x)
            } else {
                &scratch.post[k - 1]
            };
            let gl = &mut grad[k];
            for (r, &g) in scratch.grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &mut gl.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (w, &inp) in row.iter_mut().zip(input) {
                    *w += g * inp;
                }
                if let Some(b) = gl.bias.as_mut() {
                    b[r] += g;
                }
            }
            scratch.grad_next.clear();
            scratch.grad_next.resize(layer.in_dim, 0.0);
            for (r, &g) in scratch.grad.iter().enumerate() {
                let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (gn, &w) in scratch.grad_next.iter_mut().zip(row) {
                    *gn += g * w;
                }
            }
            std::mem::swap(&mut scratch.grad, &mut scratch.grad_next);
        }
        Ok(scratch.grad[0])
    }
}

/// Evaluates `mlp` at scalar `x`.
pub fn mlp_forward(x: f64, mlp: &MlpParams) -> Result<Vec<f64>> {
    mlp.validate()?;
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("mlp input must be finite, got {x}")));
    }
    let mut out = vec![0.0; mlp.out_dim()];
    mlp.forward_into(x, &mut MlpScratch::default(), &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn one_hidden_relu() -> MlpParams {
        MlpParams {
            layers: vec![
                Layer {
                    in_dim: 1,
                    out_dim: 1,
                    weight: vec![2.0],
                    bias: Some(vec![-0.5]),
                },
                Layer {
                    in_dim: 1,
                    out_dim: 1,
                    weight: vec![1.0],
                    bias: None,
                },
            ],
            hidden_activation: vec![Activation::Relu],
            final_activation: None,
        }
    }

    #[test]
    fn hand_examples() {
        let m = one_hidden_relu();
        assert_eq!(mlp_forward(0.5, &m).unwrap(), vec![0.5]);
        assert_eq!(mlp_forward(0.1, &m).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut m = MlpParams::init(&[4, 4], 3, Activation::Gelu, None, &mut rng);
        for l in &mut m.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().flatten().for_each(|b| *b = 0.0);
        }
        assert_eq!(mlp_forward(0.7, &m).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn shape_errors() {
        let mut m = one_hidden_relu();
        m.layers[1].in_dim = 2;
        m.layers[1].weight = vec![1.0, 1.0];
        assert!(matches!(mlp_forward(0.1, &m), Err(Error::InvalidParameter(_))));
        let mut m = one_hidden_relu();
        m.hidden_activation.clear();
        assert!(mlp_forward(0.1, &m).is_err());
        assert!(mlp_forward(f64::NAN, &one_hidden_relu()).is_err());
    }

    #[test]
    fn final_activation_applies() {
        let mut m = one_hidden_relu();
        m.layers[1].bias = Some(vec![-1.0]);
        assert_eq!(mlp_forward(0.5, &m).unwrap(), vec![-0.5]);
        m.final_activation = Some(Activation::Relu);
        assert_eq!(mlp_forward(0.5, &m).unwrap(), vec![0.0]);
    }

    #[test]
    fn fractional_power_rejects_negative_preactivation() {
        let m = MlpParams {
            layers: vec![
                Layer {
                    in_dim: 1,
                    out_dim: 1,
                    weight: vec![-1.0],
                    bias: None,
                },
                Layer {
                    in_dim: 1,
                    out_dim: 1,
                    weight: vec![1.0],
                    bias: None,
                },
            ],
            hidden_activation: vec![Activation::Power { exponent: 1.5 }],
            final_activation: None,
        };
        assert!(matches!(mlp_forward(0.5, &m), Err(Error::Domain(_))));
        assert_eq!(mlp_forward(0.0, &m).unwrap(), vec![0.0]);
    }

    #[test]
    fn layer_json_is_nested_row_major() {
        let l = Layer {
            in_dim: 2,
            out_dim: 2,
            weight: vec![1.0, 2.0, 3.0, 4.0],
            bias: None,
        };
        let v = serde_json::to_value(&l).unwrap();
        assert_eq!(v["weight"], serde_json::json!([[1.0, 2.0], [3.0, 4.0]]));
        let back: Layer = serde_json::from_value(v).unwrap();
        assert_eq!(back, l);
        let bad = serde_json::json!({"in_dim": 2, "out_dim": 1, "weight": [[1.0]], "bias": null});
        assert!(serde_json::from_value::<Layer>(bad).is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
