use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autograd::{Graph, Tensor, Var};
use crate::capsule::SharedWeights;
use crate::error::{Error, Result};
use crate::sequence::{AttentionParams, LstmParams};

/// Named trainable tensors in the canonical order of
/// [`ModelConfig::parameter_shapes`].
///
/// Values are reference counted so that concurrent forward passes can bind
/// them as graph leaves without copying.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ModelParams {
    /// Seeded initialization from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut named = Vec::new();
        let e = config.embed_dim;
        named.push((
            "embedding".to_string(),
            Tensor::uniform(vec![config.vocab_size, e], -config.embedding_init, config.embedding_init, &mut rng),
        ));
        let mut input = e;
        for (l, layer) in config.layers.iter().enumerate() {
            let lstm = LstmParams::init(input, layer.lstm_hidden, config.forget_bias, &mut rng);
            named.push((format!("seqcaps{l}.lstm.weight"), lstm.weight));
            named.push((format!("seqcaps{l}.lstm.bias"), lstm.bias));
            let bound = 1.0 / (layer.lstm_hidden as f64).sqrt();
            let w = SharedWeights::uniform(layer.caps_num, layer.caps_dim, layer.lstm_hidden, bound, &mut rng);
            named.push((format!("seqcaps{l}.routing.weight"), w.tensor().clone()));
            input = layer.caps_dim;
        }
        if config.residual_mode == super::ResidualMode::Attention {
            let att = AttentionParams::init(e, config.attention_init, &mut rng);
            named.push(("attention.weight".into(), att.weight));
            named.push(("attention.bias".into(), att.bias));
        }
        let dense = [
            ("fc1", config.fc1_dim, config.fc1_input_dim()),
            ("fc2", config.fc2_dim, config.fc1_dim),
            ("output", config.num_classes, config.fc2_dim),
        ];
        for (name, out, inp) in dense {
            let k = 1.0 / (inp as f64).sqrt();
            named.push((format!("{name}.weight"), Tensor::uniform(vec![out, inp], -k, k, &mut rng)));
            named.push((format!("{name}.bias"), Tensor::uniform(vec![out, 1], -k, k, &mut rng)));
        }
        ModelParams::from_named(named, config)
    }

    /// Assembles parameters, checking names and shapes against `config`.
    pub fn from_named(named: Vec<(String, Tensor)>, config: &ModelConfig) -> Result<Self> {
        let expected = config.parameter_shapes();
        if named.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut values = Vec::with_capacity(named.len());
        for ((name, tensor), (want_name, want_shape)) in named.into_iter().zip(expected) {
            if name != want_name {
                return Err(Error::Checkpoint(format!("expected tensor `{want_name}`, found `{name}`")));
            }
            if tensor.shape() != want_shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: want_shape,
                    found: tensor.shape().to_vec(),
                });
            }
            names.push(name);
            values.push(Arc::new(tensor));
        }
        Ok(ModelParams { names, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| self.values[i].as_ref())
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    /// Mutable access; copies the tensor first if a graph still shares it.
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.values[i])
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut().map(Arc::make_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(Arc::as_ref))
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    /// Binds every tensor as a leaf of `g`, in order.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| g.leaf_shared(Arc::clone(v), requires_grad))
            .collect()
    }

    /// Rounds every value to the nearest `f32`, matching checkpoint storage.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            for x in Arc::make_mut(v).data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}
