use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    /// Also score the training split at each evaluation.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            eval_every: 1,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epsilon, batch_size and eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl AdamState {
    /// Zeroed state for tensors of the given element counts.
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let first: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            second: first.clone(),
            first,
            steps: 0,
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.iter().map(|(_, t)| t.numel()))
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected Adam update of `values` (one slice per slot).
    /// Gradients are zeroed afterwards.
    pub fn update(&mut self, values: &mut [&mut [f64]], grads: &mut [&mut [f64]], config: &TrainConfig) -> Result<()> {
        if values.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} values and {} gradients",
                self.first.len(),
                values.len(),
                grads.len()
            )));
        }
        for (slot, (v, g)) in values.iter().zip(grads.iter()).enumerate() {
            if v.len() != self.first[slot].len() || g.len() != v.len() {
                return Err(Error::contract(format!("tensor {slot}: gradient and parameter sizes differ")));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let correct1 = 1.0 - config.beta1.powi(t);
        let correct2 = 1.0 - config.beta2.powi(t);
        for (slot, (values, grads)) in values.iter_mut().zip(grads.iter_mut()).enumerate() {
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for k in 0..values.len() {
                let g = grads[k];
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
                let m_hat = m[k] / correct1;
                let v_hat = v[k] / correct2;
                values[k] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
            grads.fill(0.0);
        }
        Ok(())
    }
}

/// Adam step over every model parameter; `grads` are zeroed afterwards.
pub fn adam_step(params: &mut ModelParams, grads: &mut [Tensor], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::contract(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensor(i).shape() {
            return Err(Error::contract(format!(
                "gradient shape {:?} does not match parameter `{}` {:?}",
                g.shape(),
                params.names()[i],
                params.tensor(i).shape()
            )));
        }
    }
    let mut values: Vec<&mut [f64]> = params.values_mut().map(Tensor::data_mut).collect();
    let mut grad_slices: Vec<&mut [f64]> = grads.iter_mut().map(Tensor::data_mut).collect();
    state.update(&mut values, &mut grad_slices, config)
}
