use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// True-class probabilities are clamped to `[CLAMP, 1 - CLAMP]` before the log.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

/// Focal loss `-alpha (1 - y_t)^gamma ln(y_t)` on a graph, where `y_t` is
/// entry `target` of the `k x 1` probability column `probs`.
pub fn focal_loss_var(g: &mut Graph, probs: Var, target: usize, gamma: f64, alpha: f64) -> Result<Var> {
    let k = g.shape(probs).first().copied().unwrap_or(0);
    if target >= k {
        return Err(Error::contract(format!("true class {target} out of range for {k} classes")));
    }
    let y = g.slice(probs, 0, target, target + 1)?;
    let y = g.clamp(y, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)?;
    let neg = g.scale(y, -1.0)?;
    let miss = g.add_scalar(neg, 1.0)?;
    let modulating = g.powf(miss, gamma)?;
    let log_y = g.log(y)?;
    let weighted = g.mul(modulating, log_y)?;
    let loss = g.scale(weighted, -alpha)?;
    g.sum_all(loss)
}

/// Focal loss of one probability vector. With `gamma = 0` and `alpha = 1`
/// this is cross entropy.
pub fn focal_loss(probs: &[f64], target: usize, gamma: f64, alpha: f64) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::contract(format!(
            "true class {target} out of range for {} classes",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::contract("probabilities must form a distribution"));
    }
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(vec![probs.len(), 1], probs.to_vec())?);
    let loss = focal_loss_var(&mut g, p, target, gamma, alpha)?;
    g.value(loss).item()
}
