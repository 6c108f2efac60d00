//! Wall-clock comparisons. Kept in a single test so nothing else competes
//! for the CPU while they run.
//!
//! Each comparison alternates short blocks of the two series being compared
//! and pools their per-rep samples, so slow changes in machine load land on
//! both sides equally.

use fire_core::bench::{time_attention_forward, MIN_REPS};
use fire_core::kernels::{alibi_head_specs, BiasSpec};
use fire_core::microlm::{ModelConfig, PeConfig};

const SEQ_LEN: usize = 256;
const ROUNDS: usize = 8;

fn narrow_heads(pe: PeConfig) -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        num_heads: 16,
        d_head: 2,
        d_model: 32,
        ffn_mult: 1,
        ..ModelConfig::desk(16, 32, pe)
    }
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Pooled medians of two series measured in alternating blocks.
fn paired_medians(a: &ModelConfig, b: &ModelConfig) -> (u64, u64) {
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    for _ in 0..ROUNDS {
        sa.extend(time_attention_forward(a, SEQ_LEN, MIN_REPS, 0).unwrap().samples_ns);
        sb.extend(time_attention_forward(b, SEQ_LEN, MIN_REPS, 0).unwrap().samples_ns);
    }
    (median(sa), median(sb))
}

#[test]
fn forward_timing_properties() {
    let nope = narrow_heads(PeConfig::Nope);

    let (first, second) = paired_medians(&nope, &nope);
    let drift = second as f64 / first as f64;
    assert!((0.8..=1.2).contains(&drift), "same-seed medians drifted by {drift:.3}");

    let additive = [
        vec![BiasSpec::Alibi { slope: 0.5 }],
        alibi_head_specs(16),
        vec![BiasSpec::KerpleLog { r1: 1.0, r2: 0.5 }],
        vec![BiasSpec::T5Simplified { k: 8, r: (0..9).map(|v| v as f64 * 0.1).collect() }],
    ];
    for heads in additive {
        let cfg = narrow_heads(PeConfig::Additive { heads: heads.clone() });
        let (base, with_bias) = paired_medians(&nope, &cfg);
        assert!(base <= with_bias, "NoPE {base} ns > additive {with_bias} ns for {:?}", heads[0]);
    }
}
