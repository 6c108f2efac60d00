//! FIRE: a learned function of the progressively interpolated distance.
//!
//! ```text
//! b(i, j) = f_theta( psi(i - j) / (psi(max(L, i)) + eps) )
//! psi(x)  = ln(|c| x + 1)          (or the identity)
//! L       = |L_multiplier * init_L|
//! ```
//!
//! Positions are 0-based. Without thresholding the normalizer is
//! `psi(i) + eps`, which is undefined at `i = 0`.

mod grad;
mod mlp;

pub use grad::{fire_bias_matrix_backward, fire_grad, FireGrad};
pub use mlp::{gelu, gelu_grad, mlp_forward, Activation, Layer, MlpParams, MlpScratch};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::BiasMatrix;
use crate::{Error, Result};

/// Schema identifier written into FIRE parameter documents.
pub const FIRE_SCHEMA: &str = "firelab.fire_params";
pub const FIRE_SCHEMA_VERSION: u32 = 1;

/// Distance transform applied to both the distance and the normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psi {
    Identity,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireParams {
    pub heads: usize,
    pub mlp: MlpParams,
    pub psi: Psi,
    /// Log-transform scale, used as `|c|`.
    pub c: f64,
    /// Fixed base threshold.
    pub init_l: f64,
    /// Trainable threshold multiplier; effective `L = |l_multiplier * init_l|`.
    pub l_multiplier: f64,
    pub eps: f64,
    pub use_threshold: bool,
}

/// Architecture and initial constants for a freshly initialized FIRE module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FireConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub final_activation: Option<Activation>,
    pub psi: Psi,
    pub init_c: f64,
    pub init_l: f64,
    pub eps: f64,
    pub use_threshold: bool,
}

impl Default for FireConfig {
    fn default() -> Self {
        FireConfig {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            final_activation: None,
            psi: Psi::Log,
            init_c: 0.1,
            init_l: 512.0,
            eps: 1e-6,
            use_threshold: true,
        }
    }
}

/// Which of the position-transformation ablations to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// `(i - j) / i`
    Raw,
    /// `psi(i - j) / psi(i)`
    LogOnly,
    /// `psi(i - j) / psi(max(L, i))`
    Full,
}

#[inline]
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FireDocument {
    schema: String,
    version: u32,
    params: FireParams,
}

impl FireParams {
    pub fn init<R: Rng + ?Sized>(cfg: &FireConfig, heads: usize, rng: &mut R) -> Self {
        FireParams {
            heads,
            mlp: MlpParams::init(&cfg.hidden, heads, cfg.activation, cfg.final_activation, rng),
            psi: cfg.psi,
            c: cfg.init_c,
            init_l: cfg.init_l,
            l_multiplier: 1.0,
            eps: cfg.eps,
            use_threshold: cfg.use_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if self.heads == 0 || self.mlp.out_dim() != self.heads {
            return Err(Error::InvalidParameter(format!(
                "mlp emits {} values for {} heads",
                self.mlp.out_dim(),
                self.heads
            )));
        }
        if self.psi == Psi::Log && !(self.c != 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "log transform needs a nonzero finite c, got {}",
                self.c
            )));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be >= 0, got {}", self.eps)));
        }
        if self.use_threshold && !(self.threshold() >= 1.0 && self.threshold().is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "threshold |l_multiplier * init_l| must be >= 1, got {}",
                self.threshold()
            )));
        }
        Ok(())
    }

    /// Effective threshold `|l_multiplier * init_l|`.
    #[inline]
    pub fn threshold(&self) -> f64 {
        (self.l_multiplier * self.init_l).abs()
    }

    #[inline]
    pub(crate) fn psi_at(&self, x: f64) -> f64 {
        match self.psi {
            Psi::Identity => x,
            Psi::Log => (self.c.abs() * x).ln_1p(),
        }
    }

    /// Position fed to the normalizer for query `i` (before `psi`).
    #[inline]
    pub(crate) fn normalizer_position(&self, i: usize) -> Result<f64> {
        if self.use_threshold {
            Ok(self.threshold().max(i as f64))
        } else if i == 0 {
            Err(Error::DegeneratePosition { i })
        } else {
            Ok(i as f64)
        }
    }

    /// `psi(normalizer position) + eps`.
    #[inline]
    pub(crate) fn denominator(&self, i: usize) -> Result<f64> {
        Ok(self.psi_at(self.normalizer_position(i)?) + self.eps)
    }

    /// Number of leading query rows (`i < L`) whose normalizer is the threshold itself.
    ///
    /// A row with `i == L` has the same normalizer but takes no threshold
    /// gradient, so it is kept out of the shared group.
    pub(crate) fn thresholded_rows(&self, n: usize) -> usize {
        if !self.use_threshold {
            return 0;
        }
        let l = self.threshold();
        (0..n).take_while(|&i| (i as f64) < l).count()
    }

    /// Serializes with the schema header.
    pub fn to_json(&self) -> Result<String> {
        let doc = FireDocument {
            schema: FIRE_SCHEMA.to_string(),
            version: FIRE_SCHEMA_VERSION,
            params: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FireDocument = serde_json::from_str(s)?;
        if doc.schema != FIRE_SCHEMA || doc.version != FIRE_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "expected {FIRE_SCHEMA} v{FIRE_SCHEMA_VERSION}, found {} v{}",
                doc.schema, doc.version
            )));
        }
        doc.params.validate()?;
        Ok(doc.params)
    }
}

/// `psi(x)`: the identity, or `ln(|c| x + 1)`.
pub fn psi(x: f64, params: &FireParams) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("psi is defined for x >= 0, got {x}")));
    }
    Ok(params.psi_at(x))
}

/// MLP input for query `i`, key `j`.
pub fn normalized_distance(i: usize, j: usize, params: &FireParams) -> Result<f64> {
    params.validate()?;
    let d = i
        .checked_sub(j)
        .ok_or_else(|| Error::InvalidInput(format!("key {j} is after query {i}")))?;
    Ok(params.psi_at(d as f64) / params.denominator(i)?)
}

/// Per-head FIRE bias for query `i`, key `j`.
pub fn fire_bias(i: usize, j: usize, params: &FireParams) -> Result<Vec<f64>> {
    let x = normalized_distance(i, j, params)?;
    let mut out = vec![0.0; params.heads];
    params.mlp.forward_into(x, &mut MlpScratch::default(), &mut out)?;
    Ok(out)
}

/// FIRE biases for every head over `n` positions.
pub fn fire_bias_matrix(n: usize, params: &FireParams) -> Result<BiasMatrix> {
    let mut m = BiasMatrix::zeros(params.heads, n);
    fire_bias_matrix_into(n, params, &mut m, &mut MlpScratch::default())?;
    Ok(m)
}

/// Writes the FIRE bias matrix into `out`, reusing its allocation.
///
/// Rows below the threshold share one normalizer, so their inputs
/// depend only on `i - j`: the MLP runs once per distance there and the
/// result is broadcast along the diagonal. Remaining rows are evaluated
/// entry by entry.
pub fn fire_bias_matrix_into(
    n: usize,
    params: &FireParams,
    out: &mut BiasMatrix,
    scratch: &mut MlpScratch,
) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyInput("bias matrix needs n >= 1".into()));
    }
    params.validate()?;
    let heads = params.heads;
    out.resize(heads, n);
    let mut y = vec![0.0; heads];
    let shared = params.thresholded_rows(n);
    if shared > 0 {
        let den = params.denominator(0)?;
        for d in 0..shared {
            let x = params.psi_at(d as f64) / den;
            params.mlp.forward_into(x, scratch, &mut y)?;
            for (h, &v) in y.iter().enumerate() {
                for i in d..shared {
                    out.row_mut(h, i)[i - d] = v;
                }
            }
        }
    }
    for i in shared..n {
        let den = params.denominator(i)?;
        for j in 0..=i {
            let x = params.psi_at((i - j) as f64) / den;
            params.mlp.forward_into(x, scratch, &mut y)?;
            for (h, &v) in y.iter().enumerate() {
                out.row_mut(h, i)[j] = v;
            }
        }
    }
    Ok(())
}

/// Returns a copy of `base` with the position transform of the chosen ablation.
pub fn make_ablation_variant(base: &FireParams, variant: AblationVariant) -> FireParams {
    let mut p = base.clone();
    let (psi, thr) = match variant {
        AblationVariant::Raw => (Psi::Identity, false),
        AblationVariant::LogOnly => (Psi::Log, false),
        AblationVariant::Full => (Psi::Log, true),
    };
    p.psi = psi;
    p.use_threshold = thr;
    p
}
