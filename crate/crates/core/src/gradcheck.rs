//! Finite-difference checks of every differentiable op and of the full
//! model, run over many seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{finite_difference_check, Graph, Tensor, Var};
use crate::capsule::{dynamic_route, route_with_couplings, transform_shared_var};
use crate::error::Result;
use crate::model::{focal_loss_var, forward_graph, Couplings, ModelConfig, ModelParams, ResidualMode, SeqCapsConfig};
use crate::sequence::{attention_var, lstm_var};

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Contracts `y` with fixed random weights so every output entry matters.
fn contract(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w)?;
    g.sum_all(prod)
}

/// Checks `op` on random inputs of the given shapes and ranges.
fn op_case(
    shapes: Vec<Vec<usize>>,
    range: (f64, f64),
    op: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Box::new(move |rng| {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| uniform(rng, s, range.0, range.1)).collect();
        let mut probe = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
        let probe_out = op(&mut probe, &vars)?;
        let out_shape = probe.shape(probe_out).to_vec();
        let weights = uniform(rng, &out_shape, -1.0, 1.0);
        finite_difference_check(
            |g, p| {
                let y = op(g, p)?;
                contract(g, y, &weights)
            },
            &inputs,
            STEP,
        )
    })
}

fn primitive_cases() -> Vec<(&'static str, Case)> {
    let sym = (-1.5, 1.5);
    let pos = (0.2, 2.0);
    vec![
        ("matmul", op_case(vec![vec![3, 4], vec![4, 2]], sym, |g, p| g.matmul(p[0], p[1]))),
        ("add", op_case(vec![vec![2, 3], vec![2, 3]], sym, |g, p| g.add(p[0], p[1]))),
        ("sub", op_case(vec![vec![2, 3], vec![2, 3]], sym, |g, p| g.sub(p[0], p[1]))),
        ("mul", op_case(vec![vec![2, 3], vec![2, 3]], sym, |g, p| g.mul(p[0], p[1]))),
        ("broadcast_to", op_case(vec![vec![1, 3]], sym, |g, p| g.broadcast_to(p[0], &[4, 3]))),
        ("scale", op_case(vec![vec![5]], sym, |g, p| g.scale(p[0], -2.5))),
        ("add_scalar", op_case(vec![vec![5]], sym, |g, p| g.add_scalar(p[0], 0.7))),
        ("tanh", op_case(vec![vec![2, 3]], sym, |g, p| g.tanh(p[0]))),
        ("sigmoid", op_case(vec![vec![2, 3]], sym, |g, p| g.sigmoid(p[0]))),
        ("log", op_case(vec![vec![2, 3]], pos, |g, p| g.log(p[0]))),
        ("exp", op_case(vec![vec![2, 3]], sym, |g, p| g.exp(p[0]))),
        ("powf", op_case(vec![vec![2, 3]], pos, |g, p| g.powf(p[0], 2.5))),
        ("softmax", op_case(vec![vec![3, 4]], sym, |g, p| g.softmax(p[0], 1))),
        ("softmax_axis0", op_case(vec![vec![3, 4]], sym, |g, p| g.softmax(p[0], 0))),
        ("sum", op_case(vec![vec![2, 3, 2]], sym, |g, p| g.sum(p[0], 1))),
        ("mean", op_case(vec![vec![2, 3, 2]], sym, |g, p| g.mean(p[0], 2))),
        ("sum_all", op_case(vec![vec![2, 3]], sym, |g, p| g.sum_all(p[0]))),
        (
            "concat",
            op_case(vec![vec![2, 3], vec![2, 1]], sym, |g, p| g.concat(&[p[0], p[1]], 1)),
        ),
        ("slice", op_case(vec![vec![3, 5]], sym, |g, p| g.slice(p[0], 1, 1, 4))),
        ("reshape", op_case(vec![vec![2, 6]], sym, |g, p| g.reshape(p[0], &[3, 4]))),
        ("transpose", op_case(vec![vec![2, 5]], sym, |g, p| g.transpose(p[0]))),
        ("l2_norm", op_case(vec![vec![3, 4]], sym, |g, p| g.l2_norm(p[0], 1))),
        ("squash", op_case(vec![vec![3, 4]], sym, |g, p| g.squash(p[0], 1))),
        ("gather_rows", op_case(vec![vec![5, 3]], sym, |g, p| g.gather_rows(p[0], &[4, 0, 4, 2]))),
        ("clamp", op_case(vec![vec![2, 4]], (-2.0, 2.0), |g, p| g.clamp(p[0], -1.0, 1.0))),
        ("max", op_case(vec![vec![3, 4]], sym, |g, p| g.max(p[0], 1))),
    ]
}

fn composite_cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "softmax_log_likelihood",
            Box::new(|rng| {
                let target = rng.gen_range(0..5);
                let logits = uniform(rng, &[5, 1], -2.0, 2.0);
                finite_difference_check(
                    |g, p| {
                        let probs = g.softmax(p[0], 0)?;
                        let y = g.slice(probs, 0, target, target + 1)?;
                        let ll = g.log(y)?;
                        let nll = g.neg(ll)?;
                        g.sum_all(nll)
                    },
                    &[logits],
                    STEP,
                )
            }),
        ),
        (
            "four_op_composite",
            Box::new(|rng| {
                let a = uniform(rng, &[3, 3], -1.0, 1.0);
                let x = uniform(rng, &[3, 1], -1.0, 1.0);
                finite_difference_check(
                    |g, p| {
                        let y = g.matmul(p[0], p[1])?;
                        let y = g.tanh(y)?;
                        let y = g.mul(y, p[1])?;
                        g.sum_all(y)
                    },
                    &[a, x],
                    STEP,
                )
            }),
        ),
        (
            "fan_out",
            Box::new(|rng| {
                let x = uniform(rng, &[4], -1.0, 1.0);
                finite_difference_check(
                    |g, p| {
                        let a = g.tanh(p[0])?;
                        let b = g.sigmoid(p[0])?;
                        let c = g.mul(a, b)?;
                        let d = g.add(c, p[0])?;
                        g.sum_all(d)
                    },
                    &[x],
                    STEP,
                )
            }),
        ),
        (
            "squash_vector",
            Box::new(|rng| {
                let s = uniform(rng, &[6], -2.0, 2.0);
                let w = uniform(rng, &[6], -1.0, 1.0);
                finite_difference_check(
                    |g, p| {
                        let v = g.squash(p[0], 0)?;
                        contract(g, v, &w)
                    },
                    &[s],
                    STEP,
                )
            }),
        ),
        (
            "routing_final_iteration",
            Box::new(|rng| {
                let (n, m, p, r) = (rng.gen_range(1..=6), rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=5));
                let pred = uniform(rng, &[n, m, p], -1.0, 1.0);
                let (_, state) = dynamic_route(&pred, r)?;
                let w = uniform(rng, &[m, p], -1.0, 1.0);
                finite_difference_check(
                    |g, vars| {
                        let v = route_with_couplings(g, vars[0], &state.couplings)?;
                        contract(g, v, &w)
                    },
                    &[pred],
                    STEP,
                )
            }),
        ),
        (
            "shared_transform",
            Box::new(|rng| {
                let u = uniform(rng, &[4, 3], -1.0, 1.0);
                let w = uniform(rng, &[2, 5, 3], -1.0, 1.0);
                let out = uniform(rng, &[4, 2, 5], -1.0, 1.0);
                finite_difference_check(
                    |g, p| {
                        let y = transform_shared_var(g, p[0], p[1])?;
                        contract(g, y, &out)
                    },
                    &[u, w],
                    STEP,
                )
            }),
        ),
        (
            "lstm",
            Box::new(|rng| {
                let (n, d, h) = (rng.gen_range(1..=4), 3, 2);
                let x = uniform(rng, &[n, d], -1.0, 1.0);
                let w = uniform(rng, &[4 * h, d + h], -0.8, 0.8);
                let b = uniform(rng, &[4 * h, 1], -0.5, 0.5);
                let out = uniform(rng, &[n, h], -1.0, 1.0);
                finite_difference_check(
                    |g, p| {
                        let y = lstm_var(g, p[0], p[1], p[2])?;
                        contract(g, y, &out)
                    },
                    &[x, w, b],
                    STEP,
                )
            }),
        ),
        (
            "attention",
            Box::new(|rng| {
                let n = rng.gen_range(1..=5);
                let t = uniform(rng, &[n, 4], -1.0, 1.0);
                let w = uniform(rng, &[1, 4], -1.0, 1.0);
                let b = uniform(rng, &[1, 1], -0.5, 0.5);
                let out = uniform(rng, &[1, 4], -1.0, 1.0);
                finite_difference_check(
                    |g, p| {
                        let c = attention_var(g, p[0], p[1], p[2])?;
                        contract(g, c, &out)
                    },
                    &[t, w, b],
                    STEP,
                )
            }),
        ),
        (
            "focal_loss",
            Box::new(|rng| {
                let target = rng.gen_range(0..4);
                let gamma = rng.gen_range(0.0..3.0);
                let logits = uniform(rng, &[4, 1], -2.0, 2.0);
                finite_difference_check(
                    |g, p| {
                        let probs = g.softmax(p[0], 0)?;
                        focal_loss_var(g, probs, target, gamma, 0.25)
                    },
                    &[logits],
                    STEP,
                )
            }),
        ),
    ]
}

/// Configuration used for the end-to-end check: vocabulary 20, embeddings
/// of 8, capsules 3 x 4, LSTM width 6, dense layers 16 and 8, 4 classes.
pub fn tiny_model_config(residual_mode: ResidualMode) -> ModelConfig {
    let layer = SeqCapsConfig {
        caps_num: 3,
        caps_dim: 4,
        routing_iters: 3,
        lstm_hidden: 6,
    };
    let mut c = ModelConfig::new(20, 4);
    c.embed_dim = 8;
    c.max_len = 5;
    c.layers = vec![layer, layer];
    c.fc1_dim = 16;
    c.fc2_dim = 8;
    c.residual_mode = residual_mode;
    c
}

/// Checks focal loss of the full model with respect to every parameter.
/// Routing couplings are frozen at the base point, matching the gradient
/// path training uses.
pub fn model_case(seed: u64, residual_mode: ResidualMode) -> Result<f64> {
    let mut config = tiny_model_config(residual_mode);
    config.seed = seed;
    config.embedding_init = 0.5;
    let params = ModelParams::init(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let len = rng.gen_range(1..=config.max_len);
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.vocab_size)).collect();
    let target = rng.gen_range(0..config.num_classes);

    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let couplings = forward_graph(&mut g, &tokens, &vars, &config, Couplings::Dynamic)?.couplings;

    let values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    finite_difference_check(
        |g, vars| {
            let out = forward_graph(g, &tokens, vars, &config, Couplings::Frozen(&couplings))?;
            focal_loss_var(g, out.probs, target, config.focal_gamma, config.focal_alpha)
        },
        &values,
        STEP,
    )
}

fn run(name: &str, cases: usize, tolerance: f64, mut case: impl FnMut(u64) -> Result<f64>) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for seed in 0..cases as u64 {
        worst = worst.max(case(seed)?);
    }
    Ok(CheckOutcome {
        name: name.to_owned(),
        cases,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

/// Runs every op check over `seeds` seeds and the end-to-end model check
/// over `model_seeds` seeds per residual mode.
pub fn run_suite(seeds: usize, model_seeds: usize) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for (name, case) in primitive_cases().into_iter().chain(composite_cases()) {
        out.push(run(name, seeds, OP_TOLERANCE, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            case(&mut rng)
        })?);
    }
    for mode in [ResidualMode::Attention, ResidualMode::Sum, ResidualMode::None] {
        out.push(run(&format!("model_{mode}"), model_seeds, MODEL_TOLERANCE, |seed| model_case(seed, mode))?);
    }
    Ok(out)
}
