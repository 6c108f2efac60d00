mod common;

use common::*;
use fire_core::microlm::{backward_lm, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Denominator floor so gradients near zero are compared absolutely.
const FLOOR: f64 = 1e-6;

fn analytic_slices(params: &ModelParams<f64>, samples: &[fire_core::microlm::TaskSample]) -> Vec<Vec<f64>> {
    let out = fire_core::microlm::forward_lm(params, samples).unwrap();
    let (_, grads) = backward_lm(params, &out).unwrap();
    let mut slices = Vec::new();
    grads.visit_tensors(|_, t| slices.push(t.to_vec()));
    for g in &grads.fire {
        g.visit(|t| slices.push(t.to_vec()));
    }
    slices
}

fn check_model(name: &str, params: &ModelParams<f64>, seed: u64) -> f64 {
    let samples = random_samples(&[6, 4], params.config.vocab_size, seed);
    let analytic = analytic_slices(params, &samples);
    let lens = slice_lengths(params);
    assert_eq!(analytic.len(), lens.len(), "{name}: slice layout");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut worst: f64 = 0.0;
    for (s, &len) in lens.iter().enumerate() {
        assert_eq!(analytic[s].len(), len);
        let picks: Vec<usize> = if len <= 10 {
            (0..len).collect()
        } else {
            (0..10).map(|_| rng.gen_range(0..len)).collect()
        };
        for e in picks {
            let mut p = params.clone();
            nudge(&mut p, s, e, H);
            let up = loss(&p, &samples);
            nudge(&mut p, s, e, -2.0 * H);
            let down = loss(&p, &samples);
            let numeric = (up - down) / (2.0 * H);
            let a = analytic[s][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            assert!(
                rel < TOL,
                "{name}: slice {s} elem {e}: analytic {a:e} numeric {numeric:e} rel {rel:e}"
            );
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn full_model_matches_finite_differences_for_every_pe() {
    let base = tiny_config(fire_core::microlm::PeConfig::Nope);
    for (name, pe, shared) in pe_variants(base.num_heads, base.d_head) {
        let mut cfg = tiny_config(pe);
        cfg.share_pe_across_layers = shared;
        for seed in 0..2 {
            let params = ModelParams::<f64>::init(&cfg, 100 + seed).unwrap();
            let worst = check_model(name, &params, seed);
            assert!(worst < TOL);
        }
    }
}

#[test]
fn zero_mask_gives_zero_gradients() {
    let cfg = tiny_config(fire_core::microlm::PeConfig::Fire(small_fire(fire_core::fire::Psi::Log, 3.5)));
    let params = ModelParams::<f64>::init(&cfg, 1).unwrap();
    let mut samples = random_samples(&[6], 7, 2);
    samples[0].loss_mask.iter_mut().for_each(|m| *m = false);
    let out = fire_core::microlm::forward_lm(&params, &samples).unwrap();
    let (stats, grads) = backward_lm(&params, &out).unwrap();
    assert_eq!(stats.count, 0);
    assert_eq!(stats.loss, 0.0);
    assert!(grads.is_zero());
}
