//! Length sweeps over the copy task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward_lm, masked_loss};
use super::model::ModelParams;
use super::task::CopyTask;
use super::tensor::Scalar;
use crate::{Error, Result};

pub const EVAL_CSV_HEADER: &str = "variant,length,loss,accuracy,seed";

/// Mixed into the seed so evaluation samples never coincide with training data.
const EVAL_SEED_SALT: u64 = 0x4556_414c_5f53_5452;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub variant: String,
    pub length: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{EVAL_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.variant, r.length, r.loss, r.accuracy, r.seed));
        }
        s
    }

    pub fn row(&self, variant: &str, length: usize, seed: u64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.length == length && r.seed == seed)
    }
}

/// Evaluates masked loss and token accuracy at each length, one row per
/// entry of `lengths`, sorted by length. Each sample is scored in a single
/// forward pass over its full length.
pub fn eval_lengths<T: Scalar>(
    params: &ModelParams<T>,
    task: &CopyTask,
    lengths: &[usize],
    samples_per_length: usize,
    variant: &str,
    seed: u64,
) -> Result<EvalReport> {
    task.validate()?;
    if samples_per_length == 0 {
        return Err(Error::InvalidParameter("samples_per_length must be positive".into()));
    }
    if let Some(&bad) = lengths.iter().find(|&&n| n < 3) {
        return Err(Error::InvalidParameter(format!(
            "length {bad} is below the minimum task size 3"
        )));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let mut rows = Vec::with_capacity(sorted.len());
    for &length in &sorted {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_SALT ^ ((length as u64) << 32));
        let samples = (0..samples_per_length)
            .map(|_| task.sample_at_length(length, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let stats = masked_loss(&forward_lm(params, &samples)?);
        rows.push(EvalRow {
            variant: variant.to_string(),
            length,
            loss: stats.loss,
            accuracy: stats.accuracy(),
            seed,
        });
    }
    Ok(EvalReport { rows })
}
