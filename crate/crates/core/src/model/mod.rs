//! The sequence-enhanced capsule classifier.
//!
//! Tokens are embedded into primary capsules, passed through the seq-caps
//! layers (LSTM, shared-weight transform, dynamic routing), flattened,
//! joined with the residual vector, and classified by two `tanh` fully
//! connected layers followed by a linear softmax layer.

mod config;
mod loss;
mod params;

pub use config::{ModelConfig, ResidualMode, SeqCapsConfig};
pub use loss::{focal_loss, focal_loss_var, PROBABILITY_CLAMP};
pub use params::ModelParams;

use crate::autograd::{Graph, Tensor, Var};
use crate::capsule::{route_var, route_with_couplings, transform_shared_var};
use crate::error::{Error, Result};
use crate::sequence::{attention_var, lstm_var};

/// Where the routing couplings of each seq-caps layer come from.
#[derive(Clone, Copy, Debug)]
pub enum Couplings<'a> {
    /// Run dynamic routing.
    Dynamic,
    /// Reuse couplings recorded from an earlier pass, one `n x m` tensor per
    /// layer. The forward pass is then a smooth function of the parameters
    /// whose gradient equals the one training uses.
    Frozen(&'a [Tensor]),
}

/// Vars produced by [`forward_graph`].
pub struct ForwardVars {
    pub logits: Var,
    pub probs: Var,
    /// Final-iteration couplings of each seq-caps layer.
    pub couplings: Vec<Tensor>,
}

fn check_tokens(tokens: &[usize], config: &ModelConfig) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::contract("empty token sequence"));
    }
    if tokens.len() > config.max_len {
        return Err(Error::contract(format!(
            "sequence of {} tokens exceeds max_len {}",
            tokens.len(),
            config.max_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::contract(format!("token id {bad} outside vocabulary of {}", config.vocab_size)));
    }
    Ok(())
}

/// Builds the forward pass on `g` over parameter leaves `vars` (bound in
/// [`ModelParams`] order).
pub fn forward_graph(
    g: &mut Graph,
    tokens: &[usize],
    vars: &[Var],
    config: &ModelConfig,
    couplings: Couplings<'_>,
) -> Result<ForwardVars> {
    check_tokens(tokens, config)?;
    let shapes = config.parameter_shapes();
    if vars.len() != shapes.len() {
        return Err(Error::contract(format!(
            "{} parameter vars bound, config needs {}",
            vars.len(),
            shapes.len()
        )));
    }
    let param = |name: &str| -> Var {
        let i = shapes.iter().position(|(n, _)| n == name).expect("name from config layout");
        vars[i]
    };
    if let Couplings::Frozen(frozen) = couplings {
        if frozen.len() != config.layers.len() {
            return Err(Error::contract("one frozen coupling tensor per layer required"));
        }
    }

    let primaries = g.gather_rows(param("embedding"), tokens)?;
    let mut capsules = primaries;
    let mut used = Vec::with_capacity(config.layers.len());
    for (l, layer) in config.layers.iter().enumerate() {
        let hidden = lstm_var(
            g,
            capsules,
            param(&format!("seqcaps{l}.lstm.weight")),
            param(&format!("seqcaps{l}.lstm.bias")),
        )?;
        let predictions = transform_shared_var(g, hidden, param(&format!("seqcaps{l}.routing.weight")))?;
        capsules = match couplings {
            Couplings::Dynamic => {
                let (v, state) = route_var(g, predictions, layer.routing_iters)?;
                used.push(state.couplings);
                v
            }
            Couplings::Frozen(frozen) => {
                used.push(frozen[l].clone());
                route_with_couplings(g, predictions, &frozen[l])?
            }
        };
    }

    let flat = g.reshape(capsules, &[config.capsule_features(), 1])?;
    let features = match config.residual_mode {
        ResidualMode::None => flat,
        ResidualMode::Attention => {
            let context = attention_var(g, primaries, param("attention.weight"), param("attention.bias"))?;
            let context = g.reshape(context, &[config.embed_dim, 1])?;
            g.concat(&[flat, context], 0)?
        }
        ResidualMode::Sum => {
            let total = g.sum(primaries, 0)?;
            let total = g.reshape(total, &[config.embed_dim, 1])?;
            g.concat(&[flat, total], 0)?
        }
    };

    let dense = |g: &mut Graph, name: &str, x: Var| -> Result<Var> {
        let y = g.matmul(param(&format!("{name}.weight")), x)?;
        g.add(y, param(&format!("{name}.bias")))
    };
    let h1 = dense(g, "fc1", features)?;
    let h1 = g.tanh(h1)?;
    let h2 = dense(g, "fc2", h1)?;
    let h2 = g.tanh(h2)?;
    let logits = dense(g, "output", h2)?;
    let probs = g.softmax(logits, 0)?;
    Ok(ForwardVars {
        logits,
        probs,
        couplings: used,
    })
}

/// Class probabilities for one token sequence.
pub fn forward(tokens: &[usize], params: &ModelParams, config: &ModelConfig) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let out = forward_graph(&mut g, tokens, &vars, config, Couplings::Dynamic)?;
    Ok(g.value(out.probs).data().to_vec())
}

/// Pre-softmax scores for one token sequence.
pub fn forward_logits(tokens: &[usize], params: &ModelParams, config: &ModelConfig) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let out = forward_graph(&mut g, tokens, &vars, config, Couplings::Dynamic)?;
    Ok(g.value(out.logits).data().to_vec())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

/// Most probable class.
pub fn predict(tokens: &[usize], params: &ModelParams, config: &ModelConfig) -> Result<usize> {
    Ok(argmax(&forward(tokens, params, config)?))
}

/// Result of one example's forward and backward pass.
pub struct ExampleGradients {
    pub loss: f64,
    pub probs: Vec<f64>,
    /// One gradient per parameter, in [`ModelParams`] order.
    pub grads: Vec<Tensor>,
}

/// Focal loss of one labelled sequence and its gradient with respect to
/// every parameter.
pub fn loss_and_gradients(
    tokens: &[usize],
    target: usize,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ExampleGradients> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let out = forward_graph(&mut g, tokens, &vars, config, Couplings::Dynamic)?;
    let loss = focal_loss_var(&mut g, out.probs, target, config.focal_gamma, config.alpha_for(target))?;
    let mut grads = g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok(ExampleGradients {
        loss: g.value(loss).item()?,
        probs: g.value(out.probs).data().to_vec(),
        grads,
    })
}
