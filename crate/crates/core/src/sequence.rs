//! LSTM sequence encoder and the attention residual unit.

use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::capsule::CapsuleSet;
use crate::error::{Error, Result};

/// Single-layer unidirectional LSTM.
///
/// `weight` is `4h x (d_in + h)` acting on `[x_t; h_{t-1}]`, `bias` is
/// `4h x 1`. Gate blocks are stacked in the order input, forget, output,
/// candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let params = LstmParams { weight, bias };
        params.dims()?;
        Ok(params)
    }

    /// Weights uniform in `[-1/sqrt(h), 1/sqrt(h)]`, forget-gate bias set to
    /// `forget_bias`.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, forget_bias: f64, rng: &mut R) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let weight = Tensor::uniform(vec![4 * hidden_dim, input_dim + hidden_dim], -k, k, rng);
        let mut bias = Tensor::uniform(vec![4 * hidden_dim, 1], -k, k, rng);
        bias.data_mut()[hidden_dim..2 * hidden_dim].fill(forget_bias);
        LstmParams { weight, bias }
    }

    /// `(input_dim, hidden_dim)`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let ws = self.weight.shape();
        let bs = self.bias.shape();
        let ok = ws.len() == 2 && ws[0].is_multiple_of(4) && ws[1] > ws[0] / 4 && bs == [ws[0], 1];
        if !ok {
            return Err(Error::shape(
                "lstm",
                format!("weight {ws:?} / bias {bs:?} are not 4h x (d+h) / 4h x 1"),
            ));
        }
        let h = ws[0] / 4;
        Ok((ws[1] - h, h))
    }
}

/// Scalar scoring `e_i = tanh(W t_i + b)` with `W` of shape `1 x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl AttentionParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || weight.shape()[0] != 1 || bias.shape() != [1, 1] {
            return Err(Error::shape(
                "attention",
                format!("weight {:?} / bias {:?} are not 1 x d / 1 x 1", weight.shape(), bias.shape()),
            ));
        }
        Ok(AttentionParams { weight, bias })
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, bound: f64, rng: &mut R) -> Self {
        AttentionParams {
            weight: Tensor::uniform(vec![1, dim], -bound, bound, rng),
            bias: Tensor::uniform(vec![1, 1], -bound, bound, rng),
        }
    }
}

/// LSTM over the rows of `inputs` (`n x d_in`), returning `n x h` hidden
/// states. Initial hidden and cell states are zero.
pub fn lstm_var(g: &mut Graph, inputs: Var, weight: Var, bias: Var) -> Result<Var> {
    let (xs, ws, bs) = (g.shape(inputs).to_vec(), g.shape(weight).to_vec(), g.shape(bias).to_vec());
    let valid = xs.len() == 2 && ws.len() == 2 && ws[0] % 4 == 0 && ws[1] == xs[1] + ws[0] / 4 && bs == [ws[0], 1];
    if !valid {
        return Err(Error::shape(
            "lstm",
            format!("inputs {xs:?}, weight {ws:?}, bias {bs:?}"),
        ));
    }
    let (n, d) = (xs[0], xs[1]);
    let h = ws[0] / 4;
    let mut hidden = g.constant(Tensor::zeros(vec![h, 1]));
    let mut cell = g.constant(Tensor::zeros(vec![h, 1]));
    let mut outputs = Vec::with_capacity(n);
    for t in 0..n {
        let x = g.slice(inputs, 0, t, t + 1)?;
        let x = g.reshape(x, &[d, 1])?;
        let z = g.concat(&[x, hidden], 0)?;
        let pre = g.matmul(weight, z)?;
        let pre = g.add(pre, bias)?;
        let gates = g.slice(pre, 0, 0, 3 * h)?;
        let gates = g.sigmoid(gates)?;
        let input_gate = g.slice(gates, 0, 0, h)?;
        let forget_gate = g.slice(gates, 0, h, 2 * h)?;
        let output_gate = g.slice(gates, 0, 2 * h, 3 * h)?;
        let candidate = g.slice(pre, 0, 3 * h, 4 * h)?;
        let candidate = g.tanh(candidate)?;
        let kept = g.mul(forget_gate, cell)?;
        let written = g.mul(input_gate, candidate)?;
        cell = g.add(kept, written)?;
        let squashed = g.tanh(cell)?;
        hidden = g.mul(output_gate, squashed)?;
        outputs.push(g.reshape(hidden, &[1, h])?);
    }
    g.concat(&outputs, 0)
}

/// Hidden states `h_1..h_n` of the LSTM over `inputs`.
pub fn lstm_forward(inputs: &CapsuleSet, params: &LstmParams) -> Result<CapsuleSet> {
    let (d_in, _) = params.dims()?;
    if inputs.dim() != d_in {
        return Err(Error::shape(
            "lstm",
            format!("input dim {} but parameters expect {d_in}", inputs.dim()),
        ));
    }
    let mut g = Graph::new();
    let x = g.constant(inputs.vectors().clone());
    let w = g.constant(params.weight.clone());
    let b = g.constant(params.bias.clone());
    let out = lstm_var(&mut g, x, w, b)?;
    CapsuleSet::new(g.value(out).clone())
}

/// Attention weights `alpha = softmax(tanh(t W^T + b))` over the rows of
/// `primaries` (`n x d`), as an `n x 1` var.
pub fn attention_weights_var(g: &mut Graph, primaries: Var, weight: Var, bias: Var) -> Result<Var> {
    let (ts, ws) = (g.shape(primaries).to_vec(), g.shape(weight).to_vec());
    if ts.len() != 2 || ws != [1, ts[1]] || g.shape(bias) != [1, 1] {
        return Err(Error::shape("attention", format!("primaries {ts:?}, weight {ws:?}")));
    }
    let n = ts[0];
    let wt = g.transpose(weight)?;
    let scores = g.matmul(primaries, wt)?;
    let b = g.broadcast_to(bias, &[n, 1])?;
    let scores = g.add(scores, b)?;
    let scores = g.tanh(scores)?;
    g.softmax(scores, 0)
}

/// Context vector `c = sum_i alpha_i t_i`, as a `1 x d` var.
pub fn attention_var(g: &mut Graph, primaries: Var, weight: Var, bias: Var) -> Result<Var> {
    let shape = g.shape(primaries).to_vec();
    let alpha = attention_weights_var(g, primaries, weight, bias)?;
    let alpha = g.broadcast_to(alpha, &shape)?;
    let weighted = g.mul(primaries, alpha)?;
    g.sum(weighted, 0)
}

fn attention_graph(primaries: &CapsuleSet, params: &AttentionParams) -> (Graph, Var, Var, Var) {
    let mut g = Graph::new();
    let t = g.constant(primaries.vectors().clone());
    let w = g.constant(params.weight.clone());
    let b = g.constant(params.bias.clone());
    (g, t, w, b)
}

/// Attention weights over the primaries.
pub fn attention_weights(primaries: &CapsuleSet, params: &AttentionParams) -> Result<Vec<f64>> {
    let (mut g, t, w, b) = attention_graph(primaries, params);
    let a = attention_weights_var(&mut g, t, w, b)?;
    Ok(g.value(a).data().to_vec())
}

/// Attention-pooled context vector of the primaries.
pub fn attention_pool(primaries: &CapsuleSet, params: &AttentionParams) -> Result<Vec<f64>> {
    let (mut g, t, w, b) = attention_graph(primaries, params);
    let c = attention_var(&mut g, t, w, b)?;
    Ok(g.value(c).data().to_vec())
}
