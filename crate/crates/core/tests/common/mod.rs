#![allow(dead_code)]

use fire_core::fire::{Activation, FireConfig, Psi};
use fire_core::kernels::{alibi_head_specs, RopeConfig};
use fire_core::microlm::{forward_lm, masked_loss, ModelConfig, ModelParams, PeConfig, Scalar, TaskSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2 layers, 2 heads of width 4, vocab 7.
pub fn tiny_config(pe: PeConfig) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        num_heads: 2,
        d_model: 8,
        d_head: 4,
        ffn_mult: 2,
        vocab_size: 7,
        train_len: 6,
        pe,
        share_pe_across_layers: false,
    }
}

pub fn small_fire(psi: Psi, init_l: f64) -> FireConfig {
    FireConfig {
        hidden: vec![6, 5],
        activation: Activation::Gelu,
        psi,
        init_c: 0.7,
        init_l,
        ..FireConfig::default()
    }
}

/// Named PE variants exercised by the full-model gradient check.
pub fn pe_variants(num_heads: usize, d_head: usize) -> Vec<(&'static str, PeConfig, bool)> {
    vec![
        ("nope", PeConfig::Nope, false),
        ("rope", PeConfig::Rope(RopeConfig::new(d_head)), false),
        ("alibi", PeConfig::Additive { heads: alibi_head_specs(num_heads) }, false),
        ("fire_log", PeConfig::Fire(small_fire(Psi::Log, 512.0)), false),
        ("fire_identity_short_threshold", PeConfig::Fire(small_fire(Psi::Identity, 2.5)), false),
        ("fire_relu", PeConfig::Fire(FireConfig { hidden: vec![8], init_l: 3.5, ..FireConfig::default() }), false),
        ("fire_shared", PeConfig::Fire(small_fire(Psi::Log, 4.5)), true),
    ]
}

/// Random sequences of the given lengths with a random non-empty mask.
pub fn random_samples(lengths: &[usize], vocab: usize, seed: u64) -> Vec<TaskSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&n| {
            let tokens = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
            let mut loss_mask: Vec<bool> = (0..n).map(|p| p > 0 && rng.gen_bool(0.6)).collect();
            loss_mask[n - 1] = true;
            TaskSample { tokens, loss_mask }
        })
        .collect()
}

pub fn loss<T: Scalar>(params: &ModelParams<T>, samples: &[TaskSample]) -> f64 {
    masked_loss(&forward_lm(params, samples).unwrap()).loss
}

/// Number of dense tensors followed by FIRE trainable slices, in visit order.
pub fn slice_lengths<T: Scalar>(params: &ModelParams<T>) -> Vec<usize> {
    let mut out = Vec::new();
    params.visit_tensors(|_, t| out.push(t.len()));
    let mut p = params.clone();
    for s in p.fire_states_mut() {
        s.visit_trainable_mut(|t| out.push(t.len()));
    }
    out
}

/// Adds `delta` to element `elem` of slice `slice` (visit order) and returns the old value.
pub fn nudge(params: &mut ModelParams<f64>, slice: usize, elem: usize, delta: f64) {
    let mut k = 0;
    params.visit_tensors_mut(|_, t| {
        if k == slice {
            t[elem] += delta;
        }
        k += 1;
    });
    for s in params.fire_states_mut() {
        s.visit_trainable_mut(|t| {
            if k == slice {
                t[elem] += delta;
            }
            k += 1;
        });
    }
}
