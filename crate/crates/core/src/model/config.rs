use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for one seq-caps layer: an LSTM followed by dynamic routing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqCapsConfig {
    pub caps_num: usize,
    pub caps_dim: usize,
    pub routing_iters: usize,
    pub lstm_hidden: usize,
}

/// What the output layer sees next to the flattened capsules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualMode {
    /// Attention-pooled context over the primary capsules.
    Attention,
    /// Elementwise sum of the primary capsules.
    Sum,
    /// Flattened capsules only.
    None,
}

impl std::str::FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(ResidualMode::Attention),
            "sum" => Ok(ResidualMode::Sum),
            "none" => Ok(ResidualMode::None),
            other => Err(Error::Config(format!(
                "residual_mode must be attention, sum or none, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ResidualMode::Attention => "attention",
            ResidualMode::Sum => "sum",
            ResidualMode::None => "none",
        })
    }
}

/// Architecture and loss hyperparameters.
///
/// [`ModelConfig::new`] fills in the published defaults: 100-dim embeddings,
/// documents capped at 500 tokens, seq-caps layers of 10 x 16 capsules
/// (200 LSTM units) and 5 x 10 capsules (128 units) with 5 routing
/// iterations each, fully connected layers of 1024 and 512 units, and focal
/// loss with gamma 2 and alpha 0.25.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    pub layers: Vec<SeqCapsConfig>,
    pub fc1_dim: usize,
    pub fc2_dim: usize,
    pub num_classes: usize,
    pub residual_mode: ResidualMode,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Per-class focal weights; overrides `focal_alpha` when set.
    #[serde(default)]
    pub class_alpha: Option<Vec<f64>>,
    pub forget_bias: f64,
    pub attention_init: f64,
    pub embedding_init: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_classes: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 100,
            max_len: 500,
            layers: vec![
                SeqCapsConfig {
                    caps_num: 10,
                    caps_dim: 16,
                    routing_iters: 5,
                    lstm_hidden: 200,
                },
                SeqCapsConfig {
                    caps_num: 5,
                    caps_dim: 10,
                    routing_iters: 5,
                    lstm_hidden: 128,
                },
            ],
            fc1_dim: 1024,
            fc2_dim: 512,
            num_classes,
            residual_mode: ResidualMode::Attention,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            class_alpha: None,
            forget_bias: 1.0,
            attention_init: 0.1,
            embedding_init: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("max_len", self.max_len),
            ("fc1_dim", self.fc1_dim),
            ("fc2_dim", self.fc2_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.layers.is_empty() {
            return Err(Error::Config("at least one seq-caps layer is required".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.caps_num == 0 || layer.caps_dim == 0 || layer.routing_iters == 0 || layer.lstm_hidden == 0 {
                return Err(Error::Config(format!("seq-caps layer {l} has a zero setting")));
            }
        }
        if !(self.focal_gamma >= 0.0) || !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::Config("focal_gamma must be >= 0 and focal_alpha in [0, 1]".into()));
        }
        if let Some(alpha) = &self.class_alpha {
            if alpha.len() != self.num_classes || alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::Config("class_alpha needs num_classes weights in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Focal weight for class `t`.
    pub fn alpha_for(&self, t: usize) -> f64 {
        self.class_alpha.as_ref().map_or(self.focal_alpha, |a| a[t])
    }

    /// Width of the flattened capsules from the last seq-caps layer.
    pub fn capsule_features(&self) -> usize {
        let last = self.layers.last().expect("validated config");
        last.caps_num * last.caps_dim
    }

    /// Input width of the first fully connected layer.
    pub fn fc1_input_dim(&self) -> usize {
        match self.residual_mode {
            ResidualMode::None => self.capsule_features(),
            ResidualMode::Attention | ResidualMode::Sum => self.capsule_features() + self.embed_dim,
        }
    }

    /// Name and shape of every trainable tensor, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = vec![("embedding".to_string(), vec![self.vocab_size, self.embed_dim])];
        let mut input = self.embed_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.lstm_hidden;
            shapes.push((format!("seqcaps{l}.lstm.weight"), vec![4 * h, input + h]));
            shapes.push((format!("seqcaps{l}.lstm.bias"), vec![4 * h, 1]));
            shapes.push((format!("seqcaps{l}.routing.weight"), vec![layer.caps_num, layer.caps_dim, h]));
            input = layer.caps_dim;
        }
        if self.residual_mode == ResidualMode::Attention {
            shapes.push(("attention.weight".into(), vec![1, self.embed_dim]));
            shapes.push(("attention.bias".into(), vec![1, 1]));
        }
        let dense = [
            ("fc1", self.fc1_dim, self.fc1_input_dim()),
            ("fc2", self.fc2_dim, self.fc1_dim),
            ("output", self.num_classes, self.fc2_dim),
        ];
        for (name, out, inp) in dense {
            shapes.push((format!("{name}.weight"), vec![out, inp]));
            shapes.push((format!("{name}.bias"), vec![out, 1]));
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let c = ModelConfig::new(1000, 149);
        assert_eq!((c.embed_dim, c.max_len, c.fc1_dim, c.fc2_dim), (100, 500, 1024, 512));
        assert_eq!(c.layers[0], SeqCapsConfig { caps_num: 10, caps_dim: 16, routing_iters: 5, lstm_hidden: 200 });
        assert_eq!(c.layers[1], SeqCapsConfig { caps_num: 5, caps_dim: 10, routing_iters: 5, lstm_hidden: 128 });
        assert_eq!((c.focal_gamma, c.focal_alpha), (2.0, 0.25));
        c.validate().unwrap();
    }

    #[test]
    fn fc1_width_by_residual_mode() {
        let mut c = ModelConfig::new(10, 3);
        assert_eq!(c.fc1_input_dim(), 150);
        c.residual_mode = ResidualMode::None;
        assert_eq!(c.fc1_input_dim(), 50);
    }

    #[test]
    fn residual_mode_parses() {
        assert_eq!("sum".parse::<ResidualMode>().unwrap(), ResidualMode::Sum);
        assert!("mean".parse::<ResidualMode>().is_err());
    }
}
