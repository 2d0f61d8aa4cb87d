//! Optimizer, training loop, evaluation metrics and checkpoints.

mod adam;
mod checkpoint;
mod metrics;

pub use adam::{adam_step, AdamState, TrainConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, MAGIC};
pub use metrics::{
    bucket_of, bucketize_charges, evaluate_metrics, metrics_json, Bucket, BucketSummary, ClassMetrics,
    FrequencyBuckets, MetricsReport, METRICS_KEYS,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autograd::Tensor;
use crate::data::{encode_example, Dataset, LabeledExample, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{argmax, forward, loss_and_gradients, ModelConfig, ModelParams};

/// Token ids and class indices of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSplit {
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl EncodedSplit {
    pub fn encode(examples: &[LabeledExample], vocab: &Vocabulary, labels: &[String], max_len: usize) -> Result<Self> {
        let mut out = EncodedSplit {
            tokens: Vec::with_capacity(examples.len()),
            labels: Vec::with_capacity(examples.len()),
        };
        for ex in examples {
            let label = labels
                .iter()
                .position(|l| *l == ex.charge)
                .ok_or_else(|| Error::contract(format!("unknown label `{}`", ex.charge)))?;
            out.tokens.push(encode_example(ex, vocab, max_len)?);
            out.labels.push(label);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Predicted class of every sequence, scored in parallel, in input order.
pub fn predict_all(tokens: &[Vec<usize>], params: &ModelParams, config: &ModelConfig) -> Result<Vec<usize>> {
    tokens
        .par_iter()
        .map(|t| forward(t, params, config).map(|p| argmax(&p)))
        .collect()
}

/// Metrics of `params` on an encoded split.
pub fn evaluate_split(split: &EncodedSplit, params: &ModelParams, config: &ModelConfig) -> Result<MetricsReport> {
    let predictions = predict_all(&split.tokens, params, config)?;
    evaluate_metrics(&predictions, &split.labels, config.num_classes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean focal loss over the epoch's training examples.
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn best_valid(&self) -> Option<&MetricsReport> {
        self.log.iter().find(|e| e.epoch == self.best_epoch).and_then(|e| e.valid.as_ref())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|e| e.mean_loss).collect()
    }
}

/// Mini-batch Adam on the mean focal loss.
///
/// Each epoch visits the training set in a seeded shuffled order. Example
/// gradients within a batch are computed in parallel and summed in batch
/// order, so results do not depend on thread scheduling.
pub fn train_encoded(
    train: &EncodedSplit,
    valid: &EncodedSplit,
    initial: ModelParams,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::contract("training and validation splits must be non-empty"));
    }
    let mut params = initial;
    let mut state = AdamState::for_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history: Vec<f64> = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<_>> = batch
                .par_iter()
                .map(|&i| loss_and_gradients(&train.tokens[i], train.labels[i], &params, model_config))
                .collect();
            let mut grads: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
            let mut batch_loss = 0.0;
            for result in results {
                let example = result.map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                        history: history.clone(),
                    },
                    other => other,
                })?;
                batch_loss += example.loss;
                for (acc, g) in grads.iter_mut().zip(&example.grads) {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean_loss = batch_loss * scale;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                    history,
                });
            }
            history.push(mean_loss);
            if history.len() > 32 {
                history.remove(0);
            }
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(&mut params, &mut grads, &mut state, config)?;
            epoch_loss += batch_loss;
        }

        let last = epoch + 1 == config.epochs;
        let mut entry = EpochLog {
            epoch,
            mean_loss: epoch_loss / train.len() as f64,
            train: None,
            valid: None,
        };
        if (epoch + 1) % config.eval_every == 0 || last {
            let report = evaluate_split(valid, &params, model_config)?;
            if best.as_ref().is_none_or(|(f1, _, _)| report.macro_f1 > *f1) {
                best = Some((report.macro_f1, epoch, params.clone()));
            }
            entry.valid = Some(report);
            if config.eval_train {
                entry.train = Some(evaluate_split(train, &params, model_config)?);
            }
        }
        log.push(entry);
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, 0),
    };
    Ok(TrainOutcome {
        params,
        best_epoch,
        log,
    })
}

/// Builds the vocabulary from the training split, encodes every split and
/// trains from a fresh seeded initialization.
///
/// `model_config.vocab_size` must cover the vocabulary and
/// `model_config.num_classes` the label set.
pub fn train(dataset: &Dataset, model_config: &ModelConfig, config: &TrainConfig) -> Result<(TrainOutcome, Vocabulary)> {
    let vocab = Vocabulary::build(&dataset.train, 1);
    check_fits(dataset, &vocab, model_config)?;
    let labels = dataset.labels();
    let train = EncodedSplit::encode(&dataset.train, &vocab, labels, model_config.max_len)?;
    let valid = EncodedSplit::encode(&dataset.valid, &vocab, labels, model_config.max_len)?;
    let params = ModelParams::init(model_config)?;
    Ok((train_encoded(&train, &valid, params, model_config, config)?, vocab))
}

pub(crate) fn check_fits(dataset: &Dataset, vocab: &Vocabulary, model_config: &ModelConfig) -> Result<()> {
    if vocab.len() > model_config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but vocab_size is {}",
            vocab.len(),
            model_config.vocab_size
        )));
    }
    if dataset.labels().len() > model_config.num_classes {
        return Err(Error::Config(format!(
            "{} labels but num_classes is {}",
            dataset.labels().len(),
            model_config.num_classes
        )));
    }
    Ok(())
}
