use fire_core::fire::*;
use fire_core::kernels::BiasMatrix;
use fire_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(psi: Psi, c: f64, init_l: f64, use_threshold: bool, seed: u64) -> FireParams {
    let cfg = FireConfig {
        hidden: vec![8],
        psi,
        init_c: c,
        init_l,
        use_threshold,
        ..FireConfig::default()
    };
    FireParams::init(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn psi_strategy() -> impl Strategy<Value = Psi> {
    prop_oneof![Just(Psi::Log), Just(Psi::Identity)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn normalized_distance_is_a_fraction(
        psi in psi_strategy(),
        c in 0.001f64..10.0,
        init_l in 1.0f64..2000.0,
        i in 0usize..5000,
        frac in 0.0f64..=1.0,
    ) {
        let p = params(psi, c, init_l, true, 0);
        let j = ((i as f64) * frac).floor() as usize;
        let x = normalized_distance(i, j, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&x), "x = {x}");
    }

    #[test]
    fn normalized_distance_grows_with_distance(
        psi in psi_strategy(),
        c in 0.001f64..10.0,
        init_l in 1.0f64..2000.0,
        thr in any::<bool>(),
        i in 1usize..3000,
        j in 0usize..3000,
    ) {
        let j = j % i;
        let p = params(psi, c, init_l, thr, 0);
        // moving the key back lengthens the distance
        let near = normalized_distance(i, j + 1, &p).unwrap();
        let far = normalized_distance(i, j, &p).unwrap();
        prop_assert!(far > near);
        // a later query at the same distance never sees a larger input
        let next = normalized_distance(i + 1, j + 1, &p).unwrap();
        prop_assert!(next <= far);
    }

    #[test]
    fn bias_is_position_free_below_threshold(
        c in 0.01f64..2.0,
        d in 0usize..100,
        i in 0usize..100,
        shift in 0usize..100,
    ) {
        let p = params(Psi::Log, c, 400.5, true, 1);
        let i = i + d;
        prop_assert_eq!(fire_bias(i, i - d, &p).unwrap(), fire_bias(i + shift, i + shift - d, &p).unwrap());
    }
}

/// Random trainable FIRE configuration; thresholds are kept off integers.
fn random_params(rng: &mut ChaCha8Rng) -> FireParams {
    let depth = rng.gen_range(1..=3);
    let hidden = (0..depth).map(|_| rng.gen_range(1..=6)).collect();
    let acts = [Activation::Gelu, Activation::Relu, Activation::Identity];
    let cfg = FireConfig {
        hidden,
        activation: acts[rng.gen_range(0..acts.len())],
        final_activation: None,
        psi: if rng.gen_bool(0.5) { Psi::Log } else { Psi::Identity },
        init_c: rng.gen_range(0.05..2.0) * if rng.gen_bool(0.3) { -1.0 } else { 1.0 },
        init_l: rng.gen_range(2..12) as f64 + rng.gen_range(0.1..0.9),
        eps: if rng.gen_bool(0.5) { 0.0 } else { 1e-3 },
        use_threshold: true,
    };
    let heads = rng.gen_range(1..=3);
    let mut p = FireParams::init(&cfg, heads, rng);
    p.l_multiplier = rng.gen_range(0.6..1.6);
    p
}

fn weighted_sum(p: &FireParams, dbias: &BiasMatrix) -> f64 {
    let b = fire_bias_matrix(dbias.len(), p).unwrap();
    b.as_slice().iter().zip(dbias.as_slice()).map(|(x, y)| x * y).sum()
}

fn flat_grad(g: &FireGrad) -> Vec<f64> {
    let mut out = Vec::new();
    g.visit(|s| out.extend_from_slice(s));
    out
}

fn nudge(p: &FireParams, k: usize, delta: f64) -> FireParams {
    let mut q = p.clone();
    let mut idx = 0;
    q.visit_trainable_mut(|s| {
        for v in s {
            if idx == k {
                *v += delta;
            }
            idx += 1;
        }
    });
    q
}

#[test]
fn matrix_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    for case in 0..24 {
        let p = random_params(&mut rng);
        let n = rng.gen_range(1..=14);
        let mut dbias = BiasMatrix::zeros(p.heads, n);
        for i in 0..n {
            for hd in 0..p.heads {
                for v in &mut dbias.row_mut(hd, i)[..=i] {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
        }
        let mut grad = FireGrad::zeros_like(&p);
        fire_bias_matrix_backward(&p, &dbias, &mut grad, &mut MlpScratch::default()).unwrap();
        let analytic = flat_grad(&grad);
        for (k, &a) in analytic.iter().enumerate() {
            let fd = (weighted_sum(&nudge(&p, k, h), &dbias) - weighted_sum(&nudge(&p, k, -h), &dbias)) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            assert!(err < 1e-5, "case {case} param {k}: analytic {a} vs fd {fd}");
        }
    }
}

#[test]
fn pointwise_gradient_matches_matrix_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let p = random_params(&mut rng);
        let n = rng.gen_range(1..=12);
        let mut dbias = BiasMatrix::zeros(p.heads, n);
        let mut want = FireGrad::zeros_like(&p);
        for i in 0..n {
            for j in 0..=i {
                let up: Vec<f64> = (0..p.heads).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for (hd, &u) in up.iter().enumerate() {
                    dbias.row_mut(hd, i)[j] = u;
                }
                want.add_assign(&fire_grad(i, j, &p, &up).unwrap());
            }
        }
        let mut got = FireGrad::zeros_like(&p);
        fire_bias_matrix_backward(&p, &dbias, &mut got, &mut MlpScratch::default()).unwrap();
        for (a, b) in flat_grad(&got).iter().zip(flat_grad(&want)) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }
}

#[test]
fn threshold_gradient_vanishes_past_threshold() {
    let p = params(Psi::Log, 0.3, 2.5, true, 3);
    let g = fire_grad(6, 2, &p, &[1.0, -0.5]).unwrap();
    assert_eq!(g.l_multiplier, 0.0);
    let g = fire_grad(2, 0, &p, &[1.0, -0.5]).unwrap();
    assert_ne!(g.l_multiplier, 0.0);
}

#[test]
fn construction_activations_are_not_trainable() {
    let mut p = params(Psi::Log, 0.3, 8.5, true, 4);
    p.mlp.hidden_activation[0] = Activation::Step;
    assert!(matches!(fire_grad(3, 1, &p, &[1.0, 1.0]), Err(Error::NonDifferentiable(_))));
}

#[test]
fn matrix_agrees_with_entries_across_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let p = random_params(&mut rng);
        let n = 16;
        let m = fire_bias_matrix(n, &p).unwrap();
        for i in 0..n {
            for j in 0..=i {
                let e = fire_bias(i, j, &p).unwrap();
                for (hd, v) in e.iter().enumerate() {
                    assert_eq!(m.get(hd, i, j).unwrap().to_bits(), v.to_bits());
                }
            }
        }
    }
}

#[test]
fn json_document_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(&mut rng);
    let text = p.to_json().unwrap();
    assert_eq!(FireParams::from_json(&text).unwrap(), p);
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["schema"], FIRE_SCHEMA);
    let bad = text.replacen("\"use_threshold\"", "\"unknown\": 1, \"use_threshold\"", 1);
    assert!(FireParams::from_json(&bad).is_err());
}
