use fire_core::kernels::*;
use fire_core::Error;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = BiasSpec> {
    prop_oneof![
        Just(BiasSpec::NoPE {}),
        (0.01f64..4.0).prop_map(|slope| BiasSpec::Alibi { slope }),
        (0.01f64..4.0, 0.01f64..4.0).prop_map(|(r1, r2)| BiasSpec::KerpleLog { r1, r2 }),
        (0.01f64..4.0, 0.05f64..2.0).prop_map(|(r1, r2)| BiasSpec::KerplePower { r1, r2 }),
        (0.01f64..4.0, 1usize..32).prop_map(|(r1, dprime)| BiasSpec::Sandwich { r1, dprime }),
        prop::collection::vec(-5.0f64..5.0, 1..10).prop_map(|r| BiasSpec::T5Simplified { k: r.len() - 1, r }),
        prop::collection::vec(-5.0f64..5.0, 32).prop_map(|values| BiasSpec::T5LogBin {
            num_buckets: 32,
            max_distance: 128,
            values
        }),
    ]
}

proptest! {
    #[test]
    fn bias_depends_only_on_distance(spec in spec_strategy(), i in 0usize..300, j in 0usize..300, shift in 0usize..500) {
        let (i, j) = if j <= i { (i, j) } else { (j, i) };
        let a = bias_from_spec(&spec, i, j).unwrap();
        let b = bias_from_spec(&spec, i + shift, j + shift).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn future_keys_rejected(spec in spec_strategy(), i in 0usize..100, gap in 1usize..10) {
        prop_assert!(matches!(bias_from_spec(&spec, i, i + gap), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matrix_matches_pointwise(spec in spec_strategy(), n in 1usize..40) {
        let m = build_bias_matrix(&spec, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if j <= i { Some(bias_from_spec(&spec, i, j).unwrap()) } else { None };
                prop_assert_eq!(m.get(0, i, j), want);
            }
        }
    }

    #[test]
    fn decaying_kernels_are_monotone(r1 in 0.01f64..4.0, r2 in 0.05f64..2.0, d in 0usize..2000) {
        prop_assert!(bias_alibi(d + 1, 0, r1).unwrap() < bias_alibi(d, 0, r1).unwrap());
        let log = |d| bias_kerple(d, 0, r1, r2, KerpleVariant::Log).unwrap();
        let pow = |d| bias_kerple(d, 0, r1, r2, KerpleVariant::Power).unwrap();
        prop_assert!(log(d + 1) <= log(d));
        prop_assert!(pow(d + 1) <= pow(d));
    }

    #[test]
    fn logbin_buckets_are_monotone_and_bounded(half in 1usize..20, extra in 1usize..200, d in 0usize..3000) {
        let nb = 2 * half;
        let l1 = half + extra;
        let b0 = t5_bucket_logbin(d, nb, l1).unwrap();
        let b1 = t5_bucket_logbin(d + 1, nb, l1).unwrap();
        prop_assert!(b0 <= b1);
        prop_assert!(b1 < nb);
        if d < half {
            prop_assert_eq!(b0, d);
        }
    }

    #[test]
    fn rope_preserves_norm(v in prop::collection::vec(-10.0f64..10.0, 16), pos in 0usize..5000) {
        let cfg = RopeConfig::new(16);
        let r = rope_apply(&v, pos, &cfg).unwrap();
        let n0: f64 = v.iter().map(|x| x * x).sum();
        let n1: f64 = r.iter().map(|x| x * x).sum();
        prop_assert!((n0 - n1).abs() <= 1e-9 * n0.max(1.0));
    }

    #[test]
    fn rope_dot_depends_on_offset(
        q in prop::collection::vec(-1.0f64..1.0, 8),
        k in prop::collection::vec(-1.0f64..1.0, 8),
        m in 0usize..200, n in 0usize..200, shift in 0usize..300,
    ) {
        let cfg = RopeConfig::new(8);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let a = dot(&rope_apply(&q, m, &cfg).unwrap(), &rope_apply(&k, n, &cfg).unwrap());
        let b = dot(&rope_apply(&q, m + shift, &cfg).unwrap(), &rope_apply(&k, n + shift, &cfg).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn documented_examples() {
    assert_eq!(bias_alibi(5, 2, 0.5).unwrap(), -1.5);
    assert_eq!(bias_kerple(3, 3, 2.0, 0.7, KerpleVariant::Log).unwrap(), 0.0);
    let want = -2.0 * 3f64.ln();
    assert!((bias_kerple(6, 2, 2.0, 0.5, KerpleVariant::Log).unwrap() - want).abs() < 1e-15);
    assert_eq!(bias_kerple(6, 2, 1.5, 0.5, KerpleVariant::Power).unwrap(), -3.0);
    // all cosines are 1 at distance 0
    assert!((bias_sandwich(9, 9, 0.25, 8).unwrap() - 2.0).abs() < 1e-15);
    let spec = BiasSpec::T5Simplified { k: 2, r: vec![1.0, 2.0, 3.0] };
    let row: Vec<f64> = (0..=5).map(|j| bias_from_spec(&spec, 5, j).unwrap()).collect();
    assert_eq!(row, vec![3.0, 3.0, 3.0, 3.0, 2.0, 1.0]);
}

#[test]
fn sandwich_matches_direct_sum() {
    let (r1, dp) = (0.8, 5);
    for d in [0usize, 1, 7, 100, 1000] {
        let direct: f64 = (1..=dp)
            .map(|k| (d as f64 * 10000f64.powf(-(k as f64) / dp as f64)).cos())
            .sum::<f64>()
            * r1;
        assert!((bias_sandwich(d, 0, r1, dp).unwrap() - direct).abs() < 1e-12);
    }
}

#[test]
fn alibi_head_slopes_are_geometric() {
    let specs = alibi_head_specs(8);
    let slopes: Vec<f64> = specs
        .iter()
        .map(|s| match s {
            BiasSpec::Alibi { slope } => *slope,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(slopes[0], 0.5);
    assert_eq!(slopes[7], 1.0 / 256.0);
    for w in slopes.windows(2) {
        assert!((w[1] / w[0] - 0.5).abs() < 1e-15);
    }
}

#[test]
fn spec_json_roundtrip_and_strictness() {
    let spec = BiasSpec::T5LogBin {
        num_buckets: 32,
        max_distance: 128,
        values: (0..32).map(|v| v as f64 * 0.1).collect(),
    };
    let s = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<BiasSpec>(&s).unwrap(), spec);
    let bad = r#"{"variant": "Alibi", "params": {"slope": 1.0, "bonus": 2}}"#;
    assert!(serde_json::from_str::<BiasSpec>(bad).is_err());
}

#[test]
fn heads_into_reuses_buffer() {
    let specs = alibi_head_specs(3);
    let mut m = BiasMatrix::zeros(1, 2);
    build_bias_matrix_heads_into(&specs, 10, &mut m).unwrap();
    assert_eq!(m, build_bias_matrix_heads(&specs, 10).unwrap());
    assert_eq!(m.heads(), 3);
    assert_eq!(m.len(), 10);
}
