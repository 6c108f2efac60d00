use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fire_core::bench::{self, BiasSource as BenchSource};
use fire_core::fire::{fire_bias_matrix, FireParams};
use fire_core::kernels::{build_bias_matrix_heads, BiasMatrix};
use fire_core::microlm::{
    eval_lengths, load_checkpoint, save_checkpoint, train, EvalReport, ModelConfig, ModelParams, Scalar,
};
use fire_core::representation::run_verification_suite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BiasSource, Precision, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Bias,
    Verify,
    Train,
    Eval,
    Bench,
}

/// Files written by a successful subcommand, plus a one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(&path, contents).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Failure(format!("cannot serialize report: {e}")))
}

/// Prints `-0` as `0`.
fn num(v: f64) -> f64 {
    v + 0.0
}

pub fn run(command: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    match command {
        Command::Bias => cmd_bias(cfg, out),
        Command::Verify => cmd_verify(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Eval => cmd_eval(cfg, out),
        Command::Bench => cmd_bench(cfg, out),
    }
}

/// Writes `bias.csv` (`head,i,j,bias` over the lower triangle) and, with a
/// row slice, `bias_row.csv` (`head,j,bias` for the chosen query).
pub fn cmd_bias(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let section = cfg
        .bias
        .as_ref()
        .ok_or_else(|| CliError::Config("the bias subcommand needs a \"bias\" section".into()))?;
    let n = section.seq_len;
    if n == 0 {
        return Err(CliError::Config("bias.seq_len must be positive".into()));
    }
    if let Some(i) = section.row_slice {
        if i >= n {
            return Err(CliError::Config(format!("bias.row_slice {i} must be below seq_len {n}")));
        }
    }
    let matrix: BiasMatrix = match &section.source {
        BiasSource::Kernel(specs) => build_bias_matrix_heads(specs, n)?,
        BiasSource::Fire(p) => fire_bias_matrix(n, p)?,
        BiasSource::FireInit { config, heads } => {
            if *heads == 0 {
                return Err(CliError::Config("fire_init.heads must be positive".into()));
            }
            let p = FireParams::init(config, *heads, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
            fire_bias_matrix(n, &p)?
        }
    };
    let mut csv = String::from("head,i,j,bias\n");
    for h in 0..matrix.heads() {
        for i in 0..n {
            for (j, &b) in matrix.row(h, i).iter().enumerate() {
                writeln!(csv, "{h},{i},{j},{}", num(b)).expect("string write");
            }
        }
    }
    let mut files = Vec::new();
    write(out.join("bias.csv"), csv, &mut files)?;
    if let Some(i) = section.row_slice {
        let mut row = String::from("head,j,bias\n");
        for h in 0..matrix.heads() {
            for (j, &b) in matrix.row(h, i).iter().enumerate() {
                writeln!(row, "{h},{j},{}", num(b)).expect("string write");
            }
        }
        write(out.join("bias_row.csv"), row, &mut files)?;
    }
    Ok(Outcome {
        files,
        summary: format!("{} heads x {} positions", matrix.heads(), n),
    })
}

#[derive(Serialize)]
struct VerifyReport {
    l0: usize,
    seeds: Vec<u64>,
    pass: bool,
    records: Vec<fire_core::representation::VerifyRecord>,
    failures: Vec<String>,
}

/// Runs every construction for every seed and writes `verify_report.json`.
/// Fails with exit code 1 when any case exceeds its tolerance.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let section = cfg.verify.clone().unwrap_or_default();
    if section.l0 == 0 || section.seeds.is_empty() {
        return Err(CliError::Config("verify needs l0 >= 1 and at least one seed".into()));
    }
    let records = run_verification_suite(section.l0, &section.seeds, section.inject_corruption)?;
    let failures: Vec<String> = records
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} seed {} max error {:e}", r.case, r.params_seed, r.max_abs_error))
        .collect();
    let report = VerifyReport {
        l0: section.l0,
        seeds: section.seeds.clone(),
        pass: failures.is_empty(),
        records,
        failures: failures.clone(),
    };
    let mut files = Vec::new();
    write(out.join("verify_report.json"), json(&report)?, &mut files)?;
    if !failures.is_empty() {
        return Err(CliError::Failure(format!(
            "{} of {} cases failed: {}",
            failures.len(),
            report.records.len(),
            failures.join("; ")
        )));
    }
    Ok(Outcome {
        files,
        summary: format!("{} cases passed", report.records.len()),
    })
}

#[derive(Serialize)]
struct TrainSummary {
    variant: String,
    precision: Precision,
    seed: u64,
    steps: usize,
    final_loss: f64,
    final_accuracy: f64,
}

fn train_with<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let section = cfg.train.clone().unwrap_or_default();
    section.model.validate()?;
    section.task.validate()?;
    section.optim.validate()?;
    if section.task.vocab > section.model.vocab_size {
        return Err(CliError::Config(format!(
            "task vocab {} exceeds model vocab {}",
            section.task.vocab, section.model.vocab_size
        )));
    }
    let mut params = ModelParams::<T>::init(&section.model, cfg.seed)?;
    let mut files = Vec::new();
    save_checkpoint(&params, &out.join("checkpoint_init"))?;
    files.push(out.join("checkpoint_init"));
    let report = train(&mut params, &section.task, &section.optim, cfg.seed)?;
    save_checkpoint(&params, &out.join("checkpoint"))?;
    files.push(out.join("checkpoint"));
    write(out.join("loss_curve.csv"), report.to_csv(), &mut files)?;
    let summary = TrainSummary {
        variant: section.model.pe.name().to_string(),
        precision: cfg.precision,
        seed: cfg.seed,
        steps: section.optim.steps,
        final_loss: report.final_loss,
        final_accuracy: report.final_accuracy,
    };
    write(out.join("train_summary.json"), json(&summary)?, &mut files)?;
    Ok(Outcome {
        files,
        summary: format!(
            "{} steps, final loss {:.4}, accuracy {:.4}",
            summary.steps, summary.final_loss, summary.final_accuracy
        ),
    })
}

/// Trains from the seed and writes both the initial and trained checkpoints,
/// `loss_curve.csv` and `train_summary.json`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, out),
        Precision::F64 => train_with::<f64>(cfg, out),
    }
}

fn eval_with<T: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let section = cfg.eval.clone().unwrap_or_default();
    section.task.validate()?;
    if section.checkpoints.is_empty() {
        return Err(CliError::Config("eval.checkpoints is empty".into()));
    }
    if section.lengths.is_empty() || section.samples_per_length == 0 {
        return Err(CliError::Config("eval needs lengths and samples_per_length >= 1".into()));
    }
    if let Some(bad) = section.lengths.iter().find(|&&n| n < 3) {
        return Err(CliError::Config(format!("eval length {bad} is below the minimum task size 3")));
    }
    let mut loaded = Vec::with_capacity(section.checkpoints.len());
    for c in &section.checkpoints {
        let params = load_checkpoint::<T>(&c.path).map_err(|e| match e {
            fire_core::Error::Io { path, source } => CliError::Io { path, source },
            other => CliError::Config(format!("checkpoint {}: {other}", c.path.display())),
        })?;
        if section.task.vocab > params.config.vocab_size {
            return Err(CliError::Config(format!(
                "task vocab {} exceeds vocab of checkpoint {}",
                section.task.vocab,
                c.path.display()
            )));
        }
        loaded.push((c, params));
    }
    let mut report = EvalReport::default();
    for (c, params) in &loaded {
        let seed = c.seed.unwrap_or(cfg.seed);
        report.extend(eval_lengths(
            params,
            &section.task,
            &section.lengths,
            section.samples_per_length,
            &c.variant,
            seed,
        )?);
    }
    let mut files = Vec::new();
    write(out.join("eval_report.csv"), report.to_csv(), &mut files)?;
    Ok(Outcome {
        files,
        summary: format!("{} rows", report.rows.len()),
    })
}

/// Scores each checkpoint at each length and writes `eval_report.csv`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    match cfg.precision {
        Precision::F32 => eval_with::<f32>(cfg, out),
        Precision::F64 => eval_with::<f64>(cfg, out),
    }
}

#[derive(Serialize)]
struct BenchSummary {
    seq_len: usize,
    ratio_at_max_layers: f64,
    shared_slope_ns: f64,
    unshared_slope_ns: f64,
    noise_band_ns: u64,
    shared_slope_is_flat: bool,
    checksums_agree: bool,
}

/// Times FIRE bias construction shared and unshared at each depth, plus any
/// configured kernels and forward passes. Writes `bench.csv` (timings),
/// `bench_checksums.csv` (timing-free) and `bench_summary.json`.
pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let section = cfg.bench.clone().unwrap_or_default();
    if section.reps < bench::MIN_REPS {
        return Err(CliError::Config(format!("bench.reps must be >= {}", bench::MIN_REPS)));
    }
    if section.seq_len == 0 || section.heads == 0 || section.layers.is_empty() || section.layers.contains(&0) {
        return Err(CliError::Config("bench needs positive seq_len, heads and layer counts".into()));
    }
    section.kernels.iter().try_for_each(|k| k.validate())?;
    if let Some(f) = &section.forward {
        if f.reps < bench::MIN_REPS || f.seq_len == 0 {
            return Err(CliError::Config("bench.forward needs reps >= 10 and seq_len >= 1".into()));
        }
        for pe in &f.variants {
            ModelConfig {
                pe: pe.clone(),
                ..f.model.clone()
            }
            .validate()?;
        }
    }
    let fire = FireParams::init(&section.fire, section.heads, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    fire.validate()?;
    let source = BenchSource::Fire(fire.clone());
    let mut results = Vec::new();
    let mut shared = Vec::new();
    let mut unshared = Vec::new();
    for &layers in &section.layers {
        let s = bench::time_bias_construction(&source, section.seq_len, layers, true, section.reps)?;
        let u = bench::time_bias_construction(&source, section.seq_len, layers, false, section.reps)?;
        shared.push(s.clone());
        unshared.push(u.clone());
        results.push(s);
        results.push(u);
    }
    for spec in &section.kernels {
        let src = BenchSource::Specs {
            name: spec.name().to_string(),
            specs: vec![spec.clone(); section.heads],
        };
        results.push(bench::time_bias_construction(&src, section.seq_len, 1, false, section.reps)?);
    }
    if let Some(f) = &section.forward {
        for pe in &f.variants {
            let model = ModelConfig {
                pe: pe.clone(),
                ..f.model.clone()
            };
            results.push(bench::time_attention_forward(&model, f.seq_len, f.reps, cfg.seed)?);
        }
    }
    let mut order: Vec<usize> = (0..shared.len()).collect();
    order.sort_by_key(|&k| shared[k].layers);
    let shared_sorted: Vec<_> = order.iter().map(|&k| shared[k].clone()).collect();
    let unshared_sorted: Vec<_> = order.iter().map(|&k| unshared[k].clone()).collect();
    let deepest = order.last().copied().unwrap_or(0);
    let single = shared.iter().find(|r| r.layers == 1).unwrap_or(&shared_sorted[0]);
    let report = bench::AmortizationReport {
        seq_len: section.seq_len,
        shared_slope_ns: bench::layer_slope_ns(&shared_sorted),
        unshared_slope_ns: bench::layer_slope_ns(&unshared_sorted),
        noise_band_ns: single.noise_band_ns(),
        ratio_at_max_layers: shared[deepest].median_ns as f64 / unshared[deepest].median_ns.max(1) as f64,
        shared: shared_sorted,
        unshared: unshared_sorted,
    };
    let summary = BenchSummary {
        seq_len: report.seq_len,
        ratio_at_max_layers: report.ratio_at_max_layers,
        shared_slope_ns: report.shared_slope_ns,
        unshared_slope_ns: report.unshared_slope_ns,
        noise_band_ns: report.noise_band_ns,
        shared_slope_is_flat: report.shared_slope_is_flat(),
        checksums_agree: report.checksums_agree(),
    };
    let mut files = Vec::new();
    write(out.join("bench.csv"), bench::results_csv(&results), &mut files)?;
    write(out.join("bench_checksums.csv"), bench::checksums_csv(&results), &mut files)?;
    write(out.join("bench_summary.json"), json(&summary)?, &mut files)?;
    Ok(Outcome {
        files,
        summary: format!(
            "{} rows, shared/unshared at {} layers = {:.3}",
            results.len(),
            shared[deepest].layers,
            report.ratio_at_max_layers
        ),
    })
}
