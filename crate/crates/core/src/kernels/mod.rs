//! Closed-form relative positional encodings.
//!
//! Additive schemes produce a scalar `b(i, j)` added to the attention logit
//! of query `i` and key `j` (0-based, `j <= i`). RoPE is the one
//! non-additive scheme and lives in [`rope`].

mod bucket;
mod matrix;
pub mod rope;

pub use bucket::{
    logbin_boundaries, t5_bucket_general, t5_bucket_logbin, validate_boundaries, validate_logbin,
};
pub use matrix::{build_bias_matrix, build_bias_matrix_heads, build_bias_matrix_heads_into, BiasMatrix};
pub use rope::{rope_apply, RopeConfig};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Base used by the Sandwich frequencies.
pub const SANDWICH_BASE: f64 = 10000.0;

/// One additive positional-encoding variant with its parameters.
///
/// Serialized as `{"variant": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params", deny_unknown_fields)]
pub enum BiasSpec {
    /// No positional bias.
    NoPE {},
    /// `b = r[min(i - j, K)]`, `r` has `K + 1` entries.
    T5Simplified { k: usize, r: Vec<f64> },
    /// Explicit buckets: `boundaries` is `s_0 = 0 < s_1 < ... < s_K`, `values` holds `r_0..r_K`.
    T5Bucketed {
        boundaries: Vec<usize>,
        values: Vec<f64>,
    },
    /// Log-binned buckets with `num_buckets = K + 1` and max distance `L1`.
    T5LogBin {
        num_buckets: usize,
        max_distance: usize,
        values: Vec<f64>,
    },
    /// `b = -slope * (i - j)`.
    Alibi { slope: f64 },
    /// `b = -r1 * ln(1 + r2 * (i - j))`.
    KerpleLog { r1: f64, r2: f64 },
    /// `b = -r1 * (i - j)^r2`.
    KerplePower { r1: f64, r2: f64 },
    /// `b = r1 * sum_{k=1..d'} cos((i - j) / 10000^(k/d'))`.
    Sandwich { r1: f64, dprime: usize },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be a positive finite real, got {v}"
        )))
    }
}

fn finite_all(name: &str, vs: &[f64]) -> Result<()> {
    match vs.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::InvalidParameter(format!("{name} contains non-finite {v}"))),
        None => Ok(()),
    }
}

impl BiasSpec {
    /// Short lowercase tag used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            BiasSpec::NoPE {} => "nope",
            BiasSpec::T5Simplified { .. } => "t5_simplified",
            BiasSpec::T5Bucketed { .. } => "t5_bucketed",
            BiasSpec::T5LogBin { .. } => "t5_logbin",
            BiasSpec::Alibi { .. } => "alibi",
            BiasSpec::KerpleLog { .. } => "kerple_log",
            BiasSpec::KerplePower { .. } => "kerple_power",
            BiasSpec::Sandwich { .. } => "sandwich",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BiasSpec::NoPE {} => Ok(()),
            BiasSpec::T5Simplified { k, r } => {
                if r.len() != k + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "T5 simplified with K={k} needs {} values, got {}",
                        k + 1,
                        r.len()
                    )));
                }
                finite_all("r", r)
            }
            BiasSpec::T5Bucketed { boundaries, values } => {
                validate_boundaries(boundaries)?;
                if values.len() != boundaries.len() {
                    return Err(Error::InvalidParameter(format!(
                        "{} boundaries need {} values, got {}",
                        boundaries.len(),
                        boundaries.len(),
                        values.len()
                    )));
                }
                finite_all("values", values)
            }
            BiasSpec::T5LogBin {
                num_buckets,
                max_distance,
                values,
            } => {
                validate_logbin(*num_buckets, *max_distance)?;
                if values.len() != *num_buckets {
                    return Err(Error::InvalidParameter(format!(
                        "{num_buckets} log bins need {num_buckets} values, got {}",
                        values.len()
                    )));
                }
                finite_all("values", values)
            }
            BiasSpec::Alibi { slope } => positive("alibi slope", *slope),
            BiasSpec::KerpleLog { r1, r2 } | BiasSpec::KerplePower { r1, r2 } => {
                positive("r1", *r1)?;
                positive("r2", *r2)
            }
            BiasSpec::Sandwich { r1, dprime } => {
                if *dprime == 0 {
                    return Err(Error::InvalidParameter("sandwich d' must be >= 1".into()));
                }
                finite_all("r1", &[*r1])
            }
        }
    }

    /// Rewrites any T5 form as explicit `(boundaries, values)` buckets.
    ///
    /// Returns `None` for non-T5 variants.
    pub fn as_bucketed(&self) -> Option<Result<(Vec<usize>, Vec<f64>)>> {
        let out = match self {
            BiasSpec::T5Simplified { k, r } => self
                .validate()
                .map(|_| ((0..=*k).collect(), r.clone())),
            BiasSpec::T5Bucketed { boundaries, values } => self
                .validate()
                .map(|_| (boundaries.clone(), values.clone())),
            BiasSpec::T5LogBin {
                num_buckets,
                max_distance,
                values,
            } => self.validate().and_then(|_| {
                let (s, ids) = logbin_boundaries(*num_buckets, *max_distance)?;
                Ok((s, ids.iter().map(|&b| values[b]).collect()))
            }),
            _ => return None,
        };
        Some(out)
    }
}

fn check_order(i: usize, j: usize) -> Result<usize> {
    i.checked_sub(j).ok_or_else(|| {
        Error::InvalidInput(format!("key position {j} is after query position {i}"))
    })
}

pub fn bias_alibi(i: usize, j: usize, r: f64) -> Result<f64> {
    positive("alibi slope", r)?;
    let d = check_order(i, j)?;
    Ok(alibi_at(d, r))
}

/// Which Kerple family member to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KerpleVariant {
    Log,
    Power,
}

pub fn bias_kerple(i: usize, j: usize, r1: f64, r2: f64, variant: KerpleVariant) -> Result<f64> {
    positive("r1", r1)?;
    positive("r2", r2)?;
    let d = check_order(i, j)?;
    Ok(match variant {
        KerpleVariant::Log => kerple_log_at(d, r1, r2),
        KerpleVariant::Power => kerple_power_at(d, r1, r2),
    })
}

pub fn bias_sandwich(i: usize, j: usize, r1: f64, dprime: usize) -> Result<f64> {
    BiasSpec::Sandwich { r1, dprime }.validate()?;
    let d = check_order(i, j)?;
    Ok(sandwich_at(d as f64, r1, dprime))
}

/// Evaluates `spec` at query `i`, key `j` (`j <= i`).
pub fn bias_from_spec(spec: &BiasSpec, i: usize, j: usize) -> Result<f64> {
    spec.validate()?;
    let d = check_order(i, j)?;
    Ok(bias_at_distance(spec, d))
}

/// Evaluates an already-validated spec at distance `d`.
pub(crate) fn bias_at_distance(spec: &BiasSpec, d: usize) -> f64 {
    match spec {
        BiasSpec::NoPE {} => 0.0,
        BiasSpec::T5Simplified { k, r } => r[d.min(*k)],
        BiasSpec::T5Bucketed { boundaries, values } => {
            values[boundaries.partition_point(|&s| s <= d) - 1]
        }
        BiasSpec::T5LogBin {
            num_buckets,
            max_distance,
            values,
        } => values[bucket::logbin_unchecked(d, *num_buckets, *max_distance)],
        BiasSpec::Alibi { slope } => alibi_at(d, *slope),
        BiasSpec::KerpleLog { r1, r2 } => kerple_log_at(d, *r1, *r2),
        BiasSpec::KerplePower { r1, r2 } => kerple_power_at(d, *r1, *r2),
        BiasSpec::Sandwich { r1, dprime } => sandwich_at(d as f64, *r1, *dprime),
    }
}

fn alibi_at(d: usize, r: f64) -> f64 {
    -r * d as f64
}

fn kerple_log_at(d: usize, r1: f64, r2: f64) -> f64 {
    -r1 * (r2 * d as f64).ln_1p()
}

fn kerple_power_at(d: usize, r1: f64, r2: f64) -> f64 {
    -r1 * (d as f64).powf(r2)
}

/// Sandwich frequency `1 / 10000^(k/d')` denominator for `k = 1..=d'`.
pub(crate) fn sandwich_denominator(k: usize, dprime: usize) -> f64 {
    SANDWICH_BASE.powf(k as f64 / dprime as f64)
}

fn sandwich_at(d: f64, r1: f64, dprime: usize) -> f64 {
    r1 * (1..=dprime)
        .map(|k| (d / sandwich_denominator(k, dprime)).cos())
        .sum::<f64>()
}

/// Geometric Alibi slope schedule `2^(-8(h+1)/H)`, one spec per head.
pub fn alibi_head_specs(num_heads: usize) -> Vec<BiasSpec> {
    (0..num_heads)
        .map(|h| BiasSpec::Alibi {
            slope: 2f64.powf(-8.0 * (h + 1) as f64 / num_heads as f64),
        })
        .collect()
}
