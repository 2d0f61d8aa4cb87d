//! Capsule primitives: squashing, shared-weight prediction vectors, dynamic
//! routing by agreement and the clustering objective that routing descends.
//!
//! # Gradient flow through routing
//!
//! Routing runs its iterations numerically. Only the last iteration is
//! recorded on the graph, with that iteration's coupling coefficients taken
//! as constants: gradients reach every prediction vector through
//! `s_j = sum_i c_ij u_{j|i}` and `v_j = squash(s_j)`, but not through the
//! coupling updates of earlier iterations. [`route_with_couplings`] exposes
//! that final-iteration path with caller-supplied couplings, which is what a
//! finite-difference check has to freeze to compare like with like.

use crate::autograd::{squash_factor, Graph, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;

/// `n` capsules of dimension `d`, stored as an `n x d` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleSet {
    vectors: Tensor,
}

impl CapsuleSet {
    pub fn new(vectors: Tensor) -> Result<Self> {
        if vectors.rank() != 2 {
            return Err(Error::shape(
                "capsule_set",
                format!("expected n x d, got {:?}", vectors.shape()),
            ));
        }
        Ok(CapsuleSet { vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        CapsuleSet::new(Tensor::from_rows(rows)?)
    }

    pub fn count(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn into_tensor(self) -> Tensor {
        self.vectors
    }

    pub fn norms(&self) -> Vec<f64> {
        (0..self.count()).map(|i| norm(self.vector(i))).collect()
    }
}

/// Per-output-capsule transformation matrices `W_j` (`p x d` each), shared by
/// every lower capsule. Stored as an `m x p x d` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedWeights {
    weights: Tensor,
}

impl SharedWeights {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 3 {
            return Err(Error::shape(
                "shared_weights",
                format!("expected m x p x d, got {:?}", weights.shape()),
            ));
        }
        Ok(SharedWeights { weights })
    }

    /// `W_j = I` for all `m` outputs (requires `p == d`).
    pub fn identity(m: usize, d: usize) -> Self {
        let mut data = Vec::with_capacity(m * d * d);
        for _ in 0..m {
            data.extend_from_slice(Tensor::identity(d).data());
        }
        SharedWeights {
            weights: Tensor::from_parts(vec![m, d, d], data),
        }
    }

    pub fn zeros(m: usize, p: usize, d: usize) -> Self {
        SharedWeights {
            weights: Tensor::zeros(vec![m, p, d]),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(m: usize, p: usize, d: usize, bound: f64, rng: &mut R) -> Self {
        SharedWeights {
            weights: Tensor::uniform(vec![m, p, d], -bound, bound, rng),
        }
    }

    pub fn out_caps(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.weights
    }
}

/// Weight of the entropy term in [`routing_objective`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoutingObjectiveParams {
    entropy_weight: f64,
}

impl RoutingObjectiveParams {
    pub fn new(entropy_weight: f64) -> Result<Self> {
        if !(entropy_weight >= 0.0) {
            return Err(Error::contract("entropy weight must be non-negative"));
        }
        Ok(RoutingObjectiveParams { entropy_weight })
    }

    pub fn entropy_weight(&self) -> f64 {
        self.entropy_weight
    }
}

impl Default for RoutingObjectiveParams {
    fn default() -> Self {
        RoutingObjectiveParams { entropy_weight: 1.0 }
    }
}

/// Everything one routing invocation produced.
///
/// `couplings`, `centers` and `outputs` belong to the final iteration;
/// `logits` include that iteration's agreement update.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState {
    pub logits: Tensor,
    pub couplings: Tensor,
    pub centers: Tensor,
    pub outputs: CapsuleSet,
    pub iterations: usize,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Squashes one vector: same direction, norm `|s|^2 / (1 + |s|^2)`.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let factor = squash_factor(s.iter().map(|x| x * x).sum());
    s.iter().map(|x| factor * x).collect()
}

/// Prediction vectors `u_{j|i} = W_j u_i` on a graph. `u` is `n x d`,
/// `weights` is `m x p x d`; the result is `n x m x p`.
pub fn transform_shared_var(g: &mut Graph, u: Var, weights: Var) -> Result<Var> {
    let (ushape, wshape) = (g.shape(u).to_vec(), g.shape(weights).to_vec());
    if ushape.len() != 2 || wshape.len() != 3 || wshape[2] != ushape[1] {
        return Err(Error::shape(
            "transform_shared",
            format!("capsules {ushape:?} incompatible with weights {wshape:?}"),
        ));
    }
    let (n, m, p, d) = (ushape[0], wshape[0], wshape[1], wshape[2]);
    let flat = g.reshape(weights, &[m * p, d])?;
    let flat_t = g.transpose(flat)?;
    let out = g.matmul(u, flat_t)?;
    g.reshape(out, &[n, m, p])
}

/// Prediction vectors `u_{j|i} = W_j u_i` as an `n x m x p` tensor.
pub fn transform_shared(u: &CapsuleSet, weights: &SharedWeights) -> Result<Tensor> {
    let mut g = Graph::new();
    let uv = g.constant(u.vectors.clone());
    let wv = g.constant(weights.weights.clone());
    let out = transform_shared_var(&mut g, uv, wv)?;
    Ok(g.value(out).clone())
}

fn prediction_dims(pred: &Tensor) -> Result<(usize, usize, usize)> {
    match *pred.shape() {
        [n, m, p] => Ok((n, m, p)),
        _ => Err(Error::shape(
            "dynamic_route",
            format!("predictions must be n x m x p, got {:?}", pred.shape()),
        )),
    }
}

struct Iteration {
    couplings: Vec<f64>,
    centers: Vec<f64>,
    outputs: Vec<f64>,
}

/// Runs routing numerically, calling `observe` after each iteration with the
/// couplings, centers and outputs that iteration produced. Returns the
/// final logits.
fn route_numeric(pred: &Tensor, iterations: usize, mut observe: impl FnMut(&Iteration)) -> Result<Vec<f64>> {
    if iterations < 1 {
        return Err(Error::contract("routing needs at least one iteration"));
    }
    let (n, m, p) = prediction_dims(pred)?;
    let u = pred.data();
    let at = |i: usize, j: usize| (i * m + j) * p;
    let mut logits = vec![0.0; n * m];
    for _ in 0..iterations {
        let mut couplings = vec![0.0; n * m];
        for i in 0..n {
            let row = &logits[i * m..(i + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|b| (b - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..m {
                couplings[i * m + j] = exps[j] / total;
            }
        }
        let mut centers = vec![0.0; m * p];
        for i in 0..n {
            for j in 0..m {
                let c = couplings[i * m + j];
                for k in 0..p {
                    centers[j * p + k] += c * u[at(i, j) + k];
                }
            }
        }
        let mut outputs = vec![0.0; m * p];
        for j in 0..m {
            let s = &centers[j * p..(j + 1) * p];
            let factor = squash_factor(s.iter().map(|x| x * x).sum());
            for k in 0..p {
                outputs[j * p + k] = factor * s[k];
            }
        }
        for i in 0..n {
            for j in 0..m {
                let agreement: f64 = (0..p).map(|k| u[at(i, j) + k] * outputs[j * p + k]).sum();
                logits[i * m + j] += agreement;
            }
        }
        observe(&Iteration {
            couplings,
            centers,
            outputs,
        });
    }
    Ok(logits)
}

/// Dynamic routing by agreement over `n x m x p` prediction vectors.
///
/// Logits start at zero; each iteration takes a softmax over output capsules
/// per lower capsule, forms `s_j = sum_i c_ij u_{j|i}` over all `n` lower
/// capsules, squashes it to `v_j`, and adds the agreement `<u_{j|i}, v_j>`
/// to the logits.
pub fn dynamic_route(pred: &Tensor, iterations: usize) -> Result<(CapsuleSet, RoutingState)> {
    let (n, m, p) = prediction_dims(pred)?;
    let mut last = None;
    let logits = route_numeric(pred, iterations, |it| {
        last = Some((it.couplings.clone(), it.centers.clone(), it.outputs.clone()));
    })?;
    let (couplings, centers, outputs) = last.expect("at least one iteration ran");
    let outputs = CapsuleSet::new(Tensor::from_parts(vec![m, p], outputs))?;
    let state = RoutingState {
        logits: Tensor::from_parts(vec![n, m], logits),
        couplings: Tensor::from_parts(vec![n, m], couplings),
        centers: Tensor::from_parts(vec![m, p], centers),
        outputs: outputs.clone(),
        iterations,
    };
    Ok((outputs, state))
}

/// Final routing iteration on a graph with fixed `n x m` couplings:
/// `v = squash(sum_i c_ij u_{j|i})`, returned as `m x p`.
pub fn route_with_couplings(g: &mut Graph, pred: Var, couplings: &Tensor) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    let [n, m, p] = shape[..] else {
        return Err(Error::shape("route", format!("predictions must be n x m x p, got {shape:?}")));
    };
    if couplings.shape() != [n, m] {
        return Err(Error::shape(
            "route",
            format!("couplings {:?} do not match predictions {shape:?}", couplings.shape()),
        ));
    }
    let c = g.constant(couplings.reshaped(vec![n, m, 1])?);
    let c = g.broadcast_to(c, &[n, m, p])?;
    let weighted = g.mul(pred, c)?;
    let centers = g.sum(weighted, 0)?;
    let centers = g.reshape(centers, &[m, p])?;
    g.squash(centers, 1)
}

/// Routing on a graph. Returns the `m x p` output capsules and the state of
/// the numeric run that fixed the final couplings.
pub fn route_var(g: &mut Graph, pred: Var, iterations: usize) -> Result<(Var, RoutingState)> {
    let (_, state) = dynamic_route(g.value(pred), iterations)?;
    let v = route_with_couplings(g, pred, &state.couplings)?;
    Ok((v, state))
}

fn objective(pred: &Tensor, couplings: &[f64], outputs: &[f64], params: RoutingObjectiveParams) -> f64 {
    let (n, m, p) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let u = pred.data();
    let mut agreement = 0.0;
    let mut entropy = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = couplings[i * m + j];
            let dot: f64 = (0..p).map(|k| u[(i * m + j) * p + k] * outputs[j * p + k]).sum();
            agreement += c * dot;
            if c > 0.0 {
                entropy += c * c.ln();
            }
        }
    }
    -agreement + params.entropy_weight * entropy
}

/// Clustering objective `-sum c_ij <u_{j|i}, v_j> + alpha sum c_ij ln c_ij`
/// evaluated at a routing state. Diagnostic only.
pub fn routing_objective(pred: &Tensor, state: &RoutingState, params: RoutingObjectiveParams) -> Result<f64> {
    let (n, m, p) = prediction_dims(pred)?;
    if state.couplings.shape() != [n, m] || state.outputs.vectors().shape() != [m, p] {
        return Err(Error::shape("routing_objective", "state does not match predictions"));
    }
    Ok(objective(pred, state.couplings.data(), state.outputs.vectors().data(), params))
}

/// The objective after each routing iteration.
pub fn routing_objective_trace(pred: &Tensor, iterations: usize, params: RoutingObjectiveParams) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(iterations);
    route_numeric(pred, iterations, |it| {
        values.push(objective(pred, &it.couplings, &it.outputs, params));
    })?;
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squash_closed_forms() {
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        assert_eq!(squash(&[1.0, 0.0]), vec![0.5, 0.0]);
        let v = squash(&[3.0, 4.0]);
        assert!((v[0] - 0.576923).abs() < 1e-6 && (v[1] - 0.769231).abs() < 1e-6);
        assert!((norm(&v) - 25.0 / 26.0).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_is_a_contract_error() {
        let pred = Tensor::zeros(vec![2, 2, 2]);
        assert!(matches!(dynamic_route(&pred, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn transform_rejects_dim_mismatch() {
        let u = CapsuleSet::new(Tensor::zeros(vec![3, 4])).unwrap();
        let w = SharedWeights::zeros(2, 3, 5);
        assert!(matches!(transform_shared(&u, &w), Err(Error::Shape { .. })));
    }

    #[test]
    fn one_hot_couplings_have_zero_entropy() {
        let pred = Tensor::full(vec![2, 2, 1], 1.0);
        let state = RoutingState {
            logits: Tensor::zeros(vec![2, 2]),
            couplings: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            centers: Tensor::zeros(vec![2, 1]),
            outputs: CapsuleSet::new(Tensor::zeros(vec![2, 1])).unwrap(),
            iterations: 1,
        };
        let params = RoutingObjectiveParams::new(3.0).unwrap();
        assert_eq!(routing_objective(&pred, &state, params).unwrap(), 0.0);
    }
}
