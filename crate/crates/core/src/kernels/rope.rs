//! Rotary position embedding with optional position interpolation.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeConfig {
    pub head_dim: usize,
    #[serde(default = "default_base")]
    pub base: f64,
    /// Position interpolation factor `L_train / L_test`, in `(0, 1]`.
    #[serde(default)]
    pub pi_scale: Option<f64>,
}

fn default_base() -> f64 {
    10000.0
}

impl RopeConfig {
    pub fn new(head_dim: usize) -> Self {
        RopeConfig {
            head_dim,
            base: default_base(),
            pi_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "rope head_dim must be even and positive, got {}",
                self.head_dim
            )));
        }
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rope base must be positive, got {}",
                self.base
            )));
        }
        if let Some(s) = self.pi_scale {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "rope pi_scale must lie in (0, 1], got {s}"
                )));
            }
        }
        Ok(())
    }

    /// Rotation angle of plane `k` at position `pos`.
    pub fn angle(&self, pos: usize, k: usize) -> f64 {
        let p = pos as f64 * self.pi_scale.unwrap_or(1.0);
        p / self.base.powf(2.0 * k as f64 / self.head_dim as f64)
    }
}

/// Rotates each plane `(v[2k], v[2k+1])` of `v` by the angle for `pos`.
pub fn rope_apply(v: &[f64], pos: usize, cfg: &RopeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != cfg.head_dim {
        return Err(Error::InvalidParameter(format!(
            "rope expects a vector of length {}, got {}",
            cfg.head_dim,
            v.len()
        )));
    }
    let mut out = v.to_vec();
    for k in 0..cfg.head_dim / 2 {
        let (sin, cos) = cfg.angle(pos, k).sin_cos();
        let (a, b) = (v[2 * k], v[2 * k + 1]);
        out[2 * k] = a * cos - b * sin;
        out[2 * k + 1] = a * sin + b * cos;
    }
    Ok(out)
}

/// Precomputed `(cos, sin)` for positions `0..n`, used by the attention layer.
#[derive(Debug, Clone)]
pub struct RopeTable {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(cfg: &RopeConfig, n: usize) -> Result<Self> {
        cfg.validate()?;
        let half = cfg.head_dim / 2;
        let mut cos = Vec::with_capacity(n * half);
        let mut sin = Vec::with_capacity(n * half);
        for pos in 0..n {
            for k in 0..half {
                let (s, c) = cfg.angle(pos, k).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        Ok(RopeTable { half, cos, sin })
    }

    pub fn positions(&self) -> usize {
        if self.half == 0 {
            0
        } else {
            self.cos.len() / self.half
        }
    }

    /// Rotates `v` in place; `inverse` applies the transpose rotation (used for gradients).
    pub fn rotate<T: num_traits::Float>(&self, v: &mut [T], pos: usize, inverse: bool) {
        let base = pos * self.half;
        for k in 0..self.half {
            let c = T::from(self.cos[base + k]).unwrap();
            let mut s = T::from(self.sin[base + k]).unwrap();
            if inverse {
                s = -s;
            }
            let (a, b) = (v[2 * k], v[2 * k + 1]);
            v[2 * k] = a * c - b * s;
            v[2 * k + 1] = a * s + b * c;
        }
    }
}
