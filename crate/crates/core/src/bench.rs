//! Timing harness for bias construction and attention forward.
//!
//! Every timed region runs on the calling thread, after three discarded
//! warm-up runs. Buffers are allocated before timing starts. Checksums are
//! computed outside the timed region from the produced values, so they are
//! reproducible even though the timings are not.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fire::{fire_bias_matrix_into, FireParams, MlpScratch};
use crate::kernels::{build_bias_matrix_heads_into, BiasMatrix, BiasSpec};
use crate::microlm::{forward_lm, ModelConfig, ModelParams, TaskSample};
use crate::{Error, Result};

pub const WARMUP_RUNS: usize = 3;
pub const MIN_REPS: usize = 10;
pub const BENCH_CSV_HEADER: &str = "variant,seq_len,layers,shared,rep_median_ns,rep_mean_ns,checksum";
/// Timing-free companion of the results CSV.
pub const CHECKSUM_CSV_HEADER: &str = "variant,seq_len,layers,shared,checksum";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub variant: String,
    pub seq_len: usize,
    pub layers: usize,
    pub shared: bool,
    pub reps: usize,
    pub min_ns: u64,
    pub max_ns: u64,
    pub median_ns: u64,
    pub mean_ns: f64,
    pub checksum: u64,
    /// Raw per-rep wall times.
    pub samples_ns: Vec<u64>,
}

impl BenchResult {
    fn from_samples(
        variant: &str,
        seq_len: usize,
        layers: usize,
        shared: bool,
        samples_ns: Vec<u64>,
        checksum: u64,
    ) -> Self {
        let mut sorted = samples_ns.clone();
        sorted.sort_unstable();
        let n = sorted.len();
        let median_ns = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2
        };
        BenchResult {
            variant: variant.to_string(),
            seq_len,
            layers,
            shared,
            reps: n,
            min_ns: sorted[0],
            max_ns: sorted[n - 1],
            median_ns,
            mean_ns: samples_ns.iter().sum::<u64>() as f64 / n as f64,
            checksum,
            samples_ns,
        }
    }

    /// Spread of the per-rep times.
    pub fn noise_band_ns(&self) -> u64 {
        self.max_ns - self.min_ns
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:016x}",
            self.variant, self.seq_len, self.layers, self.shared, self.median_ns, self.mean_ns, self.checksum
        )
    }

    pub fn checksum_row(&self) -> String {
        format!(
            "{},{},{},{},{:016x}",
            self.variant, self.seq_len, self.layers, self.shared, self.checksum
        )
    }
}

pub fn results_csv(results: &[BenchResult]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn checksums_csv(results: &[BenchResult]) -> String {
    let mut s = format!("{CHECKSUM_CSV_HEADER}\n");
    for r in results {
        s.push_str(&r.checksum_row());
        s.push('\n');
    }
    s
}

/// Where a bias matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BiasSource {
    /// Closed-form kernels, one spec per head.
    Specs { name: String, specs: Vec<BiasSpec> },
    Fire(FireParams),
}

impl BiasSource {
    pub fn name(&self) -> &str {
        match self {
            BiasSource::Specs { name, .. } => name,
            BiasSource::Fire(_) => "fire",
        }
    }

    fn heads(&self) -> usize {
        match self {
            BiasSource::Specs { specs, .. } => specs.len(),
            BiasSource::Fire(p) => p.heads,
        }
    }

    fn fill(&self, n: usize, out: &mut BiasMatrix, scratch: &mut MlpScratch) -> Result<()> {
        match self {
            BiasSource::Specs { specs, .. } => build_bias_matrix_heads_into(specs, n, out),
            BiasSource::Fire(p) => fire_bias_matrix_into(n, p, out, scratch),
        }
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::InvalidParameter(format!("reps must be >= {MIN_REPS}, got {reps}")));
    }
    Ok(())
}

/// Times building the biases for a `layers`-deep stack.
///
/// With `shared` the bias is computed once and every layer reads the same
/// matrix; otherwise each layer recomputes its own.
pub fn time_bias_construction(
    source: &BiasSource,
    seq_len: usize,
    layers: usize,
    shared: bool,
    reps: usize,
) -> Result<BenchResult> {
    check_reps(reps)?;
    if layers == 0 || seq_len == 0 {
        return Err(Error::InvalidParameter("layers and seq_len must be positive".into()));
    }
    let buffers = if shared { 1 } else { layers };
    let mut mats: Vec<BiasMatrix> = (0..buffers).map(|_| BiasMatrix::zeros(source.heads(), seq_len)).collect();
    let mut scratch = MlpScratch::default();
    let mut run = |mats: &mut [BiasMatrix]| -> Result<()> {
        for m in mats.iter_mut() {
            source.fill(seq_len, m, &mut scratch)?;
            black_box(m.as_slice());
        }
        // layers consume the (possibly shared) bias
        for l in 0..layers {
            black_box(&mats[l % mats.len()]);
        }
        Ok(())
    };
    for _ in 0..WARMUP_RUNS {
        run(&mut mats)?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        run(&mut mats)?;
        samples.push(t.elapsed().as_nanos() as u64);
    }
    let checksum = mats[mats.len() - 1].checksum();
    Ok(BenchResult::from_samples(source.name(), seq_len, layers, shared, samples, checksum))
}

fn logits_checksum(data: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in data {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Times one single-precision forward pass over a random sequence of
/// `seq_len` tokens. Weights and tokens derive from `seed` only, so PE
/// variants share everything except their positional state.
pub fn time_attention_forward(config: &ModelConfig, seq_len: usize, reps: usize, seed: u64) -> Result<BenchResult> {
    check_reps(reps)?;
    if seq_len == 0 {
        return Err(Error::InvalidParameter("seq_len must be positive".into()));
    }
    let params = ModelParams::<f32>::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = TaskSample {
        tokens: (0..seq_len).map(|_| rng.gen_range(0..config.vocab_size)).collect(),
        loss_mask: vec![false; seq_len],
    };
    let batch = std::slice::from_ref(&sample);
    for _ in 0..WARMUP_RUNS {
        black_box(forward_lm(&params, batch)?);
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let out = forward_lm(&params, batch)?;
        samples.push(t.elapsed().as_nanos() as u64);
        black_box(out);
    }
    let checksum = logits_checksum(&forward_lm(&params, batch)?.logits.data);
    Ok(BenchResult::from_samples(
        config.pe.name(),
        seq_len,
        config.num_layers,
        config.share_pe_across_layers,
        samples,
        checksum,
    ))
}

/// Least-squares slope of median time against layer count.
pub fn layer_slope_ns(results: &[BenchResult]) -> f64 {
    let n = results.len() as f64;
    if results.len() < 2 {
        return 0.0;
    }
    let mx = results.iter().map(|r| r.layers as f64).sum::<f64>() / n;
    let my = results.iter().map(|r| r.median_ns as f64).sum::<f64>() / n;
    let sxy: f64 = results
        .iter()
        .map(|r| (r.layers as f64 - mx) * (r.median_ns as f64 - my))
        .sum();
    let sxx: f64 = results.iter().map(|r| (r.layers as f64 - mx).powi(2)).sum();
    sxy / sxx
}

/// Shared versus unshared FIRE bias construction over a range of depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizationReport {
    pub seq_len: usize,
    pub shared: Vec<BenchResult>,
    pub unshared: Vec<BenchResult>,
    pub shared_slope_ns: f64,
    pub unshared_slope_ns: f64,
    /// Spread of the shared single-layer reps.
    pub noise_band_ns: u64,
    /// Shared over unshared median at the deepest setting.
    pub ratio_at_max_layers: f64,
}

impl AmortizationReport {
    /// Predicted extra cost of the shared mode across the whole depth range
    /// stays within twice the single-layer noise band.
    pub fn shared_slope_is_flat(&self) -> bool {
        let lo = self.shared.first().map_or(0, |r| r.layers);
        let hi = self.shared.last().map_or(0, |r| r.layers);
        (self.shared_slope_ns * (hi - lo) as f64).abs() <= 2.0 * self.noise_band_ns as f64
    }

    pub fn checksums_agree(&self) -> bool {
        let c = self.shared.first().map(|r| r.checksum);
        self.shared.iter().chain(&self.unshared).all(|r| Some(r.checksum) == c)
    }

    pub fn results(&self) -> Vec<BenchResult> {
        self.shared.iter().chain(&self.unshared).cloned().collect()
    }
}

/// Runs shared and unshared FIRE bias construction at every depth in
/// `layers` (sorted, which must include 1). Shared and unshared runs
/// alternate per depth so slow drift affects both modes alike.
pub fn amortization_sweep(fire: &FireParams, seq_len: usize, layers: &[usize], reps: usize) -> Result<AmortizationReport> {
    let mut depths = layers.to_vec();
    depths.sort_unstable();
    depths.dedup();
    if depths.first() != Some(&1) || depths.len() < 2 {
        return Err(Error::InvalidParameter(
            "amortization sweep needs layer count 1 and at least one deeper setting".into(),
        ));
    }
    let source = BiasSource::Fire(fire.clone());
    let mut shared = Vec::new();
    let mut unshared = Vec::new();
    for &l in &depths {
        shared.push(time_bias_construction(&source, seq_len, l, true, reps)?);
        unshared.push(time_bias_construction(&source, seq_len, l, false, reps)?);
    }
    let ratio = shared.last().expect("non-empty").median_ns as f64
        / unshared.last().expect("non-empty").median_ns.max(1) as f64;
    Ok(AmortizationReport {
        seq_len,
        shared_slope_ns: layer_slope_ns(&shared),
        unshared_slope_ns: layer_slope_ns(&unshared),
        noise_band_ns: shared[0].noise_band_ns(),
        ratio_at_max_layers: ratio,
        shared,
        unshared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fire::FireConfig;

    fn fire() -> FireParams {
        FireParams::init(&FireConfig::default(), 4, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn reps_below_minimum_rejected() {
        let src = BiasSource::Fire(fire());
        assert!(matches!(
            time_bias_construction(&src, 16, 1, true, 9),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn shared_and_unshared_checksums_match() {
        let src = BiasSource::Fire(fire());
        let a = time_bias_construction(&src, 32, 4, true, 10).unwrap();
        let b = time_bias_construction(&src, 32, 4, false, 10).unwrap();
        assert_eq!(a.checksum, b.checksum);
        assert_eq!(a.reps, 10);
        assert!(a.min_ns <= a.median_ns && a.median_ns <= a.max_ns);
    }

    #[test]
    fn slope_of_linear_data() {
        let mk = |layers, median_ns| BenchResult::from_samples("x", 1, layers, false, vec![median_ns], 0);
        let rs = [mk(1, 10), mk(2, 20), mk(4, 40)];
        assert!((layer_slope_ns(&rs) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let r = BenchResult::from_samples("alibi", 8, 2, true, vec![3, 1, 2, 10], 255);
        assert_eq!(r.median_ns, 2);
        assert_eq!(r.csv_row(), "alibi,8,2,true,2,4,00000000000000ff");
        assert_eq!(results_csv(&[r]).lines().next(), Some(BENCH_CSV_HEADER));
    }
}
