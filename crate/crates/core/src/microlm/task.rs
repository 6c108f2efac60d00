//! Synthetic copy-style tasks.
//!
//! A sample is `[a_1 .. a_k, SEP, echo]` where the echo is the prefix itself
//! (copy) or the prefix rotated left by one (shifted recall). Only the echoed
//! tokens are supervised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const SEP: usize = 1;
/// First id used for data symbols.
pub const FIRST_SYMBOL: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub tokens: Vec<usize>,
    /// `true` where the token is a supervised target.
    pub loss_mask: Vec<bool>,
}

impl TaskSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Copy,
    ShiftedRecall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopyTask {
    #[serde(default)]
    pub kind: TaskKind,
    pub k_min: usize,
    pub k_max: usize,
    pub vocab: usize,
}

impl CopyTask {
    pub fn new(kind: TaskKind, k_min: usize, k_max: usize, vocab: usize) -> Result<Self> {
        let t = CopyTask {
            kind,
            k_min,
            k_max,
            vocab,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 {
            return Err(Error::InvalidParameter(format!(
                "vocab {} leaves no data symbols besides PAD and SEP",
                self.vocab
            )));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= k_min <= k_max, got {}..{}",
                self.k_min, self.k_max
            )));
        }
        Ok(())
    }

    /// Largest training sequence length.
    pub fn max_len(&self) -> usize {
        2 * self.k_max + 1
    }

    /// Builds one sample with a prefix of length `k`.
    pub fn sample_with_k<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> TaskSample {
        let prefix: Vec<usize> = (0..k).map(|_| rng.gen_range(FIRST_SYMBOL..self.vocab)).collect();
        let mut tokens = Vec::with_capacity(2 * k + 1);
        tokens.extend_from_slice(&prefix);
        tokens.push(SEP);
        match self.kind {
            TaskKind::Copy => tokens.extend_from_slice(&prefix),
            TaskKind::ShiftedRecall => {
                tokens.extend_from_slice(&prefix[1..]);
                tokens.push(prefix[0]);
            }
        }
        let loss_mask = (0..tokens.len()).map(|p| p > k).collect();
        TaskSample { tokens, loss_mask }
    }

    /// A sample of exactly `length` tokens: the longest prefix that fits,
    /// followed by an unsupervised PAD when `length` is even. Trailing
    /// padding cannot influence earlier positions under causal attention.
    pub fn sample_at_length<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<TaskSample> {
        if length < 3 {
            return Err(Error::InvalidParameter(format!(
                "length {length} is below the minimum task size 3"
            )));
        }
        let k = (length - 1) / 2;
        let pad = length - (2 * k + 1);
        let mut s = self.sample_with_k(k, rng);
        s.tokens.extend(std::iter::repeat(PAD).take(pad));
        s.loss_mask.extend(std::iter::repeat(false).take(pad));
        Ok(s)
    }
}

/// Deterministic stream of training samples, `k` uniform in `[k_min, k_max]`.
#[derive(Debug, Clone)]
pub struct TaskStream {
    task: CopyTask,
    rng: ChaCha8Rng,
}

impl TaskStream {
    pub fn new(task: CopyTask, seed: u64) -> Result<Self> {
        task.validate()?;
        Ok(TaskStream {
            task,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn task(&self) -> &CopyTask {
        &self.task
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<TaskSample> {
        (0..size).map(|_| self.next_sample()).collect()
    }

    pub fn next_sample(&mut self) -> TaskSample {
        let k = self.rng.gen_range(self.task.k_min..=self.task.k_max);
        self.task.sample_with_k(k, &mut self.rng)
    }
}

impl Iterator for TaskStream {
    type Item = TaskSample;

    fn next(&mut self) -> Option<TaskSample> {
        Some(self.next_sample())
    }
}

/// Copy-task stream over prefix lengths `k_min..=k_max`.
pub fn generate_copy_task(k_min: usize, k_max: usize, vocab: usize, seed: u64) -> Result<TaskStream> {
    TaskStream::new(CopyTask::new(TaskKind::Copy, k_min, k_max, vocab)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_sample() {
        let task = CopyTask::new(TaskKind::Copy, 1, 1, 16).unwrap();
        let s = task.sample_with_k(1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.tokens.len(), 3);
        assert_eq!(s.tokens[1], SEP);
        assert_eq!(s.tokens[0], s.tokens[2]);
        assert_eq!(s.loss_mask, vec![false, false, true]);
    }

    #[test]
    fn shifted_recall_rotates() {
        let task = CopyTask::new(TaskKind::ShiftedRecall, 4, 4, 16).unwrap();
        let s = task.sample_with_k(4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(&s.tokens[5..8], &s.tokens[1..4]);
        assert_eq!(s.tokens[8], s.tokens[0]);
    }

    #[test]
    fn stream_is_reproducible() {
        let a: Vec<_> = generate_copy_task(1, 15, 16, 9).unwrap().take(5).collect();
        let b: Vec<_> = generate_copy_task(1, 15, 16, 9).unwrap().take(5).collect();
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.tokens.len(), s.loss_mask.len());
            assert!(s.tokens.iter().all(|&t| t < 16));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(generate_copy_task(1, 4, 2, 0).is_err());
        assert!(generate_copy_task(0, 4, 16, 0).is_err());
        assert!(generate_copy_task(5, 4, 16, 0).is_err());
    }

    #[test]
    fn padded_eval_samples() {
        let task = CopyTask::new(TaskKind::Copy, 1, 15, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = task.sample_at_length(32, &mut rng).unwrap();
        assert_eq!(s.len(), 32);
        assert_eq!(s.tokens[31], PAD);
        assert!(!s.loss_mask[31]);
        assert_eq!(s.tokens[15], SEP);
        assert_eq!(s.loss_mask.iter().filter(|&&m| m).count(), 15);
        assert_ne!(task.sample_at_length(33, &mut rng).unwrap().tokens[32], PAD);
        assert!(task.sample_at_length(2, &mut rng).is_err());
    }
}
