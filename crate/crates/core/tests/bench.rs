use fire_core::bench::*;
use fire_core::fire::{FireConfig, FireParams};
use fire_core::kernels::{alibi_head_specs, BiasSpec};
use fire_core::microlm::{ModelConfig, PeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fire() -> FireParams {
    FireParams::init(&FireConfig::default(), 4, &mut ChaCha8Rng::seed_from_u64(1))
}

#[test]
fn checksums_ignore_timing_configuration() {
    let source = BiasSource::Fire(fire());
    let mut sums = Vec::new();
    for layers in [1, 3] {
        for shared in [true, false] {
            sums.push(time_bias_construction(&source, 48, layers, shared, MIN_REPS).unwrap().checksum);
        }
    }
    assert!(sums.windows(2).all(|w| w[0] == w[1]));
    let again = time_bias_construction(&source, 48, 2, true, 12).unwrap();
    assert_eq!(again.checksum, sums[0]);
    let other = time_bias_construction(&source, 49, 1, true, MIN_REPS).unwrap();
    assert_ne!(other.checksum, sums[0]);
}

#[test]
fn kernel_sources_time_and_checksum() {
    let source = BiasSource::Specs {
        name: "alibi".into(),
        specs: alibi_head_specs(4),
    };
    let r = time_bias_construction(&source, 64, 2, false, MIN_REPS).unwrap();
    assert_eq!((r.variant.as_str(), r.layers, r.reps), ("alibi", 2, MIN_REPS));
    assert_eq!(r.samples_ns.len(), MIN_REPS);
    assert!(r.min_ns <= r.median_ns && r.median_ns <= r.max_ns);
}

#[test]
fn forward_checksum_depends_only_on_inputs() {
    let cfg = ModelConfig::desk(16, 32, PeConfig::Nope);
    let a = time_attention_forward(&cfg, 24, MIN_REPS, 3).unwrap();
    let b = time_attention_forward(&cfg, 24, MIN_REPS + 2, 3).unwrap();
    assert_eq!(a.checksum, b.checksum);
    assert_eq!(a.variant, "nope");
    let rope = ModelConfig {
        pe: PeConfig::Rope(fire_core::kernels::RopeConfig::new(16)),
        ..cfg
    };
    assert_ne!(time_attention_forward(&rope, 24, MIN_REPS, 3).unwrap().checksum, a.checksum);
}

#[test]
fn too_few_reps_rejected() {
    let spec = BiasSpec::Alibi { slope: 1.0 };
    let source = BiasSource::Specs {
        name: "alibi".into(),
        specs: vec![spec],
    };
    assert!(time_bias_construction(&source, 8, 1, true, MIN_REPS - 1).is_err());
    let cfg = ModelConfig::desk(16, 32, PeConfig::Nope);
    assert!(time_attention_forward(&cfg, 8, 3, 0).is_err());
}

#[test]
fn csv_rows_match_header() {
    let source = BiasSource::Fire(fire());
    let r = time_bias_construction(&source, 16, 1, true, MIN_REPS).unwrap();
    let csv = results_csv(&[r.clone()]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(BENCH_CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), BENCH_CSV_HEADER.split(',').count());
    assert_eq!(row[..4], ["fire", "16", "1", "true"]);
    assert_eq!(u64::from_str_radix(row[6], 16).unwrap(), r.checksum);
    assert_eq!(checksums_csv(&[r]).lines().next(), Some(CHECKSUM_CSV_HEADER));
}
