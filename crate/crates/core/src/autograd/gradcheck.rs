use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients against central differences.
///
/// `f` builds a scalar-valued function of the parameters on a fresh graph.
/// Returns the maximum over every parameter entry of
/// `|analytic - central| / max(|analytic|, |central|, GRADIENT_FLOOR)`.
/// The floor keeps roundoff in the difference quotient, roughly
/// `f64::EPSILON * |f| / step`, from dominating entries whose gradient is
/// itself near zero.
///
/// Fails with [`Error::NonDeterministic`] if two identical forward passes
/// disagree, and with [`Error::NonDifferentiablePoint`] if the stencil around
/// an entry changes a discrete branch (an argmax or clamp decision).
pub fn finite_difference_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let eval = |values: &[Tensor]| -> Result<(f64, Vec<u64>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok((g.value(root).item()?, g.trace().to_vec()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let base_value = g.value(root).item()?;
    let base_trace = g.trace().to_vec();
    let grads = g.backward(root)?;

    let (again, again_trace) = eval(params)?;
    if again.to_bits() != base_value.to_bits() || again_trace != base_trace {
        return Err(Error::NonDeterministic);
    }

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (p, var) in vars.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(*var) {
            Some(t) => t.data(),
            None => {
                zeros = vec![0.0; params[p].numel()];
                &zeros
            }
        };
        for index in 0..params[p].numel() {
            let original = params[p].data()[index];
            probe[p].data_mut()[index] = original + step;
            let (plus, plus_trace) = eval(&probe)?;
            probe[p].data_mut()[index] = original - step;
            let (minus, minus_trace) = eval(&probe)?;
            probe[p].data_mut()[index] = original;
            if plus_trace != base_trace || minus_trace != base_trace {
                return Err(Error::NonDifferentiablePoint { param: p, index });
            }
            let central = (plus - minus) / (2.0 * step);
            let a = analytic[index];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(GRADIENT_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
