use std::collections::BTreeSet;

use fire_core::fire::{Activation, FireConfig, FireParams, FIRE_SCHEMA, FIRE_SCHEMA_VERSION};
use fire_core::kernels::BiasSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIAS_SCHEMA: &str = include_str!("../../../schemas/bias_spec.schema.json");
const FIRE_PARAMS_SCHEMA: &str = include_str!("../../../schemas/fire_params.schema.json");

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

fn resolve<'a>(root: &'a Value, v: &'a Value) -> &'a Value {
    match v.get("$ref").and_then(Value::as_str) {
        Some(r) => root.pointer(r.trim_start_matches('#')).unwrap(),
        None => v,
    }
}

#[test]
fn bias_spec_schema_lists_serialized_fields() {
    let schema: Value = serde_json::from_str(BIAS_SCHEMA).unwrap();
    let examples = [
        BiasSpec::NoPE {},
        BiasSpec::T5Simplified { k: 1, r: vec![0.0, 1.0] },
        BiasSpec::T5Bucketed { boundaries: vec![0, 2], values: vec![0.0, 1.0] },
        BiasSpec::T5LogBin { num_buckets: 4, max_distance: 8, values: vec![0.0; 4] },
        BiasSpec::Alibi { slope: 1.0 },
        BiasSpec::KerpleLog { r1: 1.0, r2: 1.0 },
        BiasSpec::KerplePower { r1: 1.0, r2: 1.0 },
        BiasSpec::Sandwich { r1: 1.0, dprime: 2 },
    ];
    let branches = schema["oneOf"].as_array().unwrap();
    assert_eq!(branches.len(), examples.len());
    for spec in examples {
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(keys(&v), keys(&schema["properties"]));
        let name = v["variant"].as_str().unwrap();
        let branch = branches
            .iter()
            .find(|b| b["properties"]["variant"]["const"] == name)
            .unwrap_or_else(|| panic!("schema has no branch for {name}"));
        let params = resolve(&schema, &branch["properties"]["params"]);
        assert_eq!(keys(&v["params"]), keys(&params["properties"]), "{name}");
    }
}

#[test]
fn fire_schema_lists_serialized_fields() {
    let schema: Value = serde_json::from_str(FIRE_PARAMS_SCHEMA).unwrap();
    assert_eq!(schema["properties"]["schema"]["const"], FIRE_SCHEMA);
    assert_eq!(schema["properties"]["version"]["const"], FIRE_SCHEMA_VERSION);
    let cfg = FireConfig {
        hidden: vec![3],
        final_activation: Some(Activation::Power { exponent: 2.0 }),
        ..FireConfig::default()
    };
    let p = FireParams::init(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(0));
    let doc: Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    let defs = &schema["$defs"];
    assert_eq!(keys(&doc), keys(&schema["properties"]));
    assert_eq!(keys(&doc["params"]), keys(&defs["params"]["properties"]));
    assert_eq!(keys(&doc["params"]["mlp"]), keys(&defs["mlp"]["properties"]));
    for layer in doc["params"]["mlp"]["layers"].as_array().unwrap() {
        assert_eq!(keys(layer), keys(&defs["layer"]["properties"]));
        let rows = layer["weight"].as_array().unwrap();
        assert_eq!(rows.len() as u64, layer["out_dim"].as_u64().unwrap());
        assert!(rows.iter().all(|r| r.as_array().unwrap().len() as u64 == layer["in_dim"].as_u64().unwrap()));
    }
    let psi = doc["params"]["psi"].as_str().unwrap();
    assert!(defs["params"]["properties"]["psi"]["enum"].as_array().unwrap().iter().any(|e| e == psi));
    assert_eq!(doc["params"]["mlp"]["hidden_activation"][0], serde_json::json!({"kind": "relu"}));
    assert_eq!(doc["params"]["mlp"]["final_activation"], serde_json::json!({"kind": "power", "exponent": 2.0}));
}
