//! Exact FIRE parameterizations of the additive baselines.
//!
//! Every construction uses the identity transform (except Kerple-log, which
//! uses `ln(r2 x + 1)`), threshold `L = L0` and `eps = 0`. For positions up
//! to `L0` the normalizer is then the constant `psi(L0)`, and the MLP only
//! has to undo that scaling.
//!
//! The verifier scans the 1-based grid `0 < j <= i <= L0`; 1-based `(i, j)`
//! maps to 0-based `(i - 1, j - 1)`, which keeps `i - j` and stays below the
//! threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fire::{fire_bias_matrix, Activation, FireParams, Layer, MlpParams, Psi};
use crate::kernels::{bias_at_distance, sandwich_denominator, BiasSpec};
use crate::{Error, Result};

/// Which baseline a construction reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionCase {
    T5,
    Alibi,
    KerpleLog,
    KerplePower,
    Sandwich,
}

impl ConstructionCase {
    pub const ALL: [ConstructionCase; 5] = [
        ConstructionCase::T5,
        ConstructionCase::Alibi,
        ConstructionCase::KerpleLog,
        ConstructionCase::KerplePower,
        ConstructionCase::Sandwich,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConstructionCase::T5 => "t5",
            ConstructionCase::Alibi => "alibi",
            ConstructionCase::KerpleLog => "kerple_log",
            ConstructionCase::KerplePower => "kerple_power",
            ConstructionCase::Sandwich => "sandwich",
        }
    }

    /// Largest accepted verification error on an `l0` grid.
    pub fn tolerance(&self, l0: usize) -> f64 {
        match self {
            ConstructionCase::T5 => 0.0,
            _ if l0 <= 128 => 1e-10,
            _ => 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionRequest {
    pub target: BiasSpec,
    pub l0: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionResult {
    pub fire: FireParams,
    pub case: ConstructionCase,
}

fn construction_params(mlp: MlpParams, psi: Psi, c: f64, l0: usize) -> FireParams {
    FireParams {
        heads: 1,
        mlp,
        psi,
        c,
        init_l: l0 as f64,
        l_multiplier: 1.0,
        eps: 0.0,
        use_threshold: true,
    }
}

fn linear(weight: f64) -> MlpParams {
    MlpParams {
        layers: vec![Layer {
            in_dim: 1,
            out_dim: 1,
            weight: vec![weight],
            bias: None,
        }],
        hidden_activation: vec![],
        final_activation: None,
    }
}

fn check_l0(l0: usize) -> Result<()> {
    if l0 == 0 {
        return Err(Error::InvalidParameter("grid bound L0 must be >= 1".into()));
    }
    Ok(())
}

/// Step-activation MLP summing bucket increments.
///
/// Hidden unit `k` fires once `i - j >= s_k`; its outgoing weight is
/// `r_k - r_{k-1}` and the output bias is `r_0`. The hidden bias is
/// `1/2 - s_k` so integer distances never sit on the step edge.
pub fn construct_t5(target: &BiasSpec, l0: usize) -> Result<ConstructionResult> {
    check_l0(l0)?;
    let (s, r) = target.as_bucketed().ok_or_else(|| {
        Error::InvalidParameter(format!("{} is not a T5 variant", target.name()))
    })??;
    let last = *s.last().unwrap();
    if last > l0 {
        return Err(Error::ConstructionOutOfRange(format!(
            "largest bucket boundary {last} exceeds L0 = {l0}"
        )));
    }
    let k = s.len() - 1;
    let mlp = MlpParams {
        layers: vec![
            Layer {
                in_dim: 1,
                out_dim: k,
                weight: vec![l0 as f64; k],
                bias: Some(s[1..].iter().map(|&sk| 0.5 - sk as f64).collect()),
            },
            Layer {
                in_dim: k,
                out_dim: 1,
                weight: r.windows(2).map(|w| w[1] - w[0]).collect(),
                bias: Some(vec![r[0]]),
            },
        ],
        hidden_activation: vec![Activation::Step],
        final_activation: None,
    };
    Ok(ConstructionResult {
        fire: construction_params(mlp, Psi::Identity, 1.0, l0),
        case: ConstructionCase::T5,
    })
}

/// `f(x) = -r L0 x`.
pub fn construct_alibi(r: f64, l0: usize) -> Result<ConstructionResult> {
    check_l0(l0)?;
    BiasSpec::Alibi { slope: r }.validate()?;
    Ok(ConstructionResult {
        fire: construction_params(linear(-r * l0 as f64), Psi::Identity, 1.0, l0),
        case: ConstructionCase::Alibi,
    })
}

/// `psi(x) = ln(r2 x + 1)` and `f(x) = -r1 ln(1 + r2 L0) x`.
pub fn construct_kerple_log(r1: f64, r2: f64, l0: usize) -> Result<ConstructionResult> {
    check_l0(l0)?;
    BiasSpec::KerpleLog { r1, r2 }.validate()?;
    let v1 = -r1 * (r2 * l0 as f64).ln_1p();
    Ok(ConstructionResult {
        fire: construction_params(linear(v1), Psi::Log, r2, l0),
        case: ConstructionCase::KerpleLog,
    })
}

/// One hidden unit with activation `x^r2`: `f(x) = -(r1^(1/r2) L0 x)^r2`.
pub fn construct_kerple_power(r1: f64, r2: f64, l0: usize) -> Result<ConstructionResult> {
    check_l0(l0)?;
    BiasSpec::KerplePower { r1, r2 }.validate()?;
    let mlp = MlpParams {
        layers: vec![
            Layer {
                in_dim: 1,
                out_dim: 1,
                weight: vec![r1.powf(1.0 / r2) * l0 as f64],
                bias: None,
            },
            Layer {
                in_dim: 1,
                out_dim: 1,
                weight: vec![-1.0],
                bias: None,
            },
        ],
        hidden_activation: vec![Activation::Power { exponent: r2 }],
        final_activation: None,
    };
    Ok(ConstructionResult {
        fire: construction_params(mlp, Psi::Identity, 1.0, l0),
        case: ConstructionCase::KerplePower,
    })
}

/// `d'` cosine units with frequencies `L0 / 10000^(k/d')` and output weights `r1`.
pub fn construct_sandwich(r1: f64, dprime: usize, l0: usize) -> Result<ConstructionResult> {
    check_l0(l0)?;
    BiasSpec::Sandwich { r1, dprime }.validate()?;
    let mlp = MlpParams {
        layers: vec![
            Layer {
                in_dim: 1,
                out_dim: dprime,
                weight: (1..=dprime)
                    .map(|k| l0 as f64 / sandwich_denominator(k, dprime))
                    .collect(),
                bias: None,
            },
            Layer {
                in_dim: dprime,
                out_dim: 1,
                weight: vec![r1; dprime],
                bias: None,
            },
        ],
        hidden_activation: vec![Activation::Cos],
        final_activation: None,
    };
    Ok(ConstructionResult {
        fire: construction_params(mlp, Psi::Identity, 1.0, l0),
        case: ConstructionCase::Sandwich,
    })
}

/// Dispatches on the target variant.
pub fn construct(req: &ConstructionRequest) -> Result<ConstructionResult> {
    match req.target {
        BiasSpec::T5Simplified { .. } | BiasSpec::T5Bucketed { .. } | BiasSpec::T5LogBin { .. } => {
            construct_t5(&req.target, req.l0)
        }
        BiasSpec::Alibi { slope } => construct_alibi(slope, req.l0),
        BiasSpec::KerpleLog { r1, r2 } => construct_kerple_log(r1, r2, req.l0),
        BiasSpec::KerplePower { r1, r2 } => construct_kerple_power(r1, r2, req.l0),
        BiasSpec::Sandwich { r1, dprime } => construct_sandwich(r1, dprime, req.l0),
        BiasSpec::NoPE {} => Err(Error::InvalidParameter(
            "NoPE has no construction target".into(),
        )),
    }
}

/// Max `|b_FIRE - b_target|` over the 1-based grid `0 < j <= i <= l0`.
///
/// Non-finite discrepancies report as infinity.
pub fn verify_representation(result: &ConstructionResult, target: &BiasSpec, l0: usize) -> Result<f64> {
    check_l0(l0)?;
    target.validate()?;
    let fire = fire_bias_matrix(l0, &result.fire)?;
    let by_distance: Vec<f64> = (0..l0).map(|d| bias_at_distance(target, d)).collect();
    let mut worst = 0.0f64;
    for i in 0..l0 {
        for (j, &b) in fire.row(0, i).iter().enumerate() {
            let err = (b - by_distance[i - j]).abs();
            if !err.is_finite() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Seeded random target for `case` on an `l0` grid.
///
/// The T5 case rotates through log-binned, explicit and simplified buckets
/// with the seed.
pub fn sample_target(case: ConstructionCase, seed: u64, l0: usize) -> BiasSpec {
    let salt = case as u64 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt);
    let values = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    };
    match case {
        ConstructionCase::T5 => match seed % 3 {
            0 if l0 >= 2 => {
                let choices: Vec<usize> = [4, 8, 16, 32]
                    .into_iter()
                    .filter(|nb| nb / 2 < l0)
                    .collect();
                let nb = choices[rng.gen_range(0..choices.len())];
                let max_distance = rng.gen_range(nb / 2 + 1..=l0);
                BiasSpec::T5LogBin {
                    num_buckets: nb,
                    max_distance,
                    values: values(nb, &mut rng),
                }
            }
            1 => {
                let k = rng.gen_range(1..=8.min(l0));
                let mut pool: Vec<usize> = (1..=l0).collect();
                for slot in 0..k {
                    let pick = rng.gen_range(slot..pool.len());
                    pool.swap(slot, pick);
                }
                let mut boundaries = vec![0];
                let mut chosen = pool[..k].to_vec();
                chosen.sort_unstable();
                boundaries.extend(chosen);
                BiasSpec::T5Bucketed {
                    values: values(k + 1, &mut rng),
                    boundaries,
                }
            }
            _ => {
                let k = rng.gen_range(1..=16.min(l0));
                BiasSpec::T5Simplified {
                    k,
                    r: values(k + 1, &mut rng),
                }
            }
        },
        ConstructionCase::Alibi => BiasSpec::Alibi {
            slope: rng.gen_range(0.01..2.0),
        },
        ConstructionCase::KerpleLog => BiasSpec::KerpleLog {
            r1: rng.gen_range(0.1..3.0),
            r2: rng.gen_range(0.05..3.0),
        },
        ConstructionCase::KerplePower => BiasSpec::KerplePower {
            r1: rng.gen_range(0.1..2.0),
            r2: rng.gen_range(0.2..1.8),
        },
        ConstructionCase::Sandwich => BiasSpec::Sandwich {
            r1: rng.gen_range(0.1..2.0),
            dprime: rng.gen_range(1..=16),
        },
    }
}

/// Adds `1e-3` to the output layer (bias when present, else the first
/// weight). Used as a negative control for the verifier.
pub fn corrupt(params: &mut FireParams) {
    if let Some(last) = params.mlp.layers.last_mut() {
        match last.bias.as_mut() {
            Some(b) => b[0] += 1e-3,
            None => last.weight[0] += 1e-3,
        }
    }
}

/// One row of the verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRecord {
    pub case: String,
    #[serde(rename = "L0")]
    pub l0: usize,
    pub params_seed: u64,
    pub max_abs_error: f64,
    pub pass: bool,
}

/// Constructs and verifies every case for each seed in `seeds`.
pub fn run_verification_suite(l0: usize, seeds: &[u64], corrupt_params: bool) -> Result<Vec<VerifyRecord>> {
    let mut out = Vec::with_capacity(ConstructionCase::ALL.len() * seeds.len());
    for case in ConstructionCase::ALL {
        for &seed in seeds {
            let target = sample_target(case, seed, l0);
            let mut result = construct(&ConstructionRequest {
                target: target.clone(),
                l0,
            })?;
            if corrupt_params {
                corrupt(&mut result.fire);
            }
            let err = verify_representation(&result, &target, l0)?;
            out.push(VerifyRecord {
                case: case.name().to_string(),
                l0,
                params_seed: seed,
                max_abs_error: err,
                pass: err <= case.tolerance(l0),
            });
        }
    }
    Ok(out)
}
