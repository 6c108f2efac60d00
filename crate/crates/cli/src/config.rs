//! JSON run configuration.

use std::path::{Path, PathBuf};

use fire_core::fire::{FireConfig, FireParams};
use fire_core::kernels::BiasSpec;
use fire_core::microlm::{CopyTask, ModelConfig, PeConfig, TaskKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Top-level document. Each subcommand reads its own section; missing
/// sections fall back to their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub bias: Option<BiasSection>,
    #[serde(default)]
    pub verify: Option<VerifySection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Where `bias` takes its positional encoding from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasSource {
    /// Closed-form kernels, one spec per head.
    Kernel(Vec<BiasSpec>),
    /// Explicit FIRE parameters.
    Fire(FireParams),
    /// Freshly initialized FIRE drawn from the run seed.
    FireInit {
        #[serde(default)]
        config: FireConfig,
        heads: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSection {
    pub source: BiasSource,
    pub seq_len: usize,
    /// Query position for the single-row export.
    #[serde(default)]
    pub row_slice: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub l0: usize,
    pub seeds: Vec<u64>,
    /// Perturbs every construction; the run must then fail.
    pub inject_corruption: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            l0: 128,
            seeds: (0..5).collect(),
            inject_corruption: false,
        }
    }
}

pub fn default_task() -> CopyTask {
    CopyTask {
        kind: TaskKind::Copy,
        k_min: 1,
        k_max: 15,
        vocab: 16,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub model: ModelConfig,
    pub task: CopyTask,
    pub optim: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            model: ModelConfig::desk(16, 32, PeConfig::Fire(FireConfig::default())),
            task: default_task(),
            optim: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub variant: String,
    pub path: PathBuf,
    /// Seed reported in the EvalReport; defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoints: Vec<CheckpointRef>,
    pub task: CopyTask,
    pub lengths: Vec<usize>,
    pub samples_per_length: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoints: Vec::new(),
            task: default_task(),
            lengths: vec![32, 48, 64],
            samples_per_length: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardBenchSection {
    pub seq_len: usize,
    pub reps: usize,
    /// Architecture shared by every variant; its `pe` field is ignored.
    pub model: ModelConfig,
    pub variants: Vec<PeConfig>,
}

impl Default for ForwardBenchSection {
    fn default() -> Self {
        ForwardBenchSection {
            seq_len: 128,
            reps: 10,
            model: ModelConfig::desk(16, 32, PeConfig::Nope),
            variants: vec![PeConfig::Nope],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub seq_len: usize,
    pub layers: Vec<usize>,
    pub reps: usize,
    pub heads: usize,
    pub fire: FireConfig,
    /// Closed-form kernels timed at a single layer for comparison.
    pub kernels: Vec<BiasSpec>,
    pub forward: Option<ForwardBenchSection>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            seq_len: 512,
            layers: vec![1, 2, 4, 8, 12],
            reps: 15,
            heads: 4,
            fire: FireConfig::default(),
            kernels: Vec::new(),
            forward: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_json(r#"{"seed": 1, "sede": 2}"#),
            Err(CliError::Config(_))
        ));
        assert!(RunConfig::from_json(r#"{"verify": {"l0": 8, "extra": true}}"#).is_err());
    }

    #[test]
    fn bias_source_forms() {
        let c = RunConfig::from_json(
            r#"{"bias": {"source": {"kind": "kernel", "params": [{"variant": "Alibi", "params": {"slope": 1.0}}]},
                "seq_len": 3, "row_slice": 2}}"#,
        )
        .unwrap();
        assert_eq!(c.bias.unwrap().row_slice, Some(2));
        let c = RunConfig::from_json(r#"{"bias": {"source": {"kind": "fire_init", "params": {"heads": 2}}, "seq_len": 4}}"#)
            .unwrap();
        assert!(matches!(c.bias.unwrap().source, BiasSource::FireInit { heads: 2, .. }));
    }
}
