//! Seeded few-shot corpora with a long-tailed class distribution.
//!
//! Each class owns a block of signature tokens. A document of class `c`
//! draws each token from `c`'s signature block with probability `signal`
//! and otherwise from a Zipf-distributed background shared by all classes,
//! so every class has its own multinomial over the vocabulary.
//!
//! Training-set class sizes come from [`class_allocation`]; validation and
//! test sets hold `eval_per_class` documents of every class.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::jsonl::LabeledExample;
use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub train_size: usize,
    pub eval_per_class: usize,
    pub seed: u64,
    /// Inclusive document length bounds.
    pub length_range: (usize, usize),
    pub signature_tokens: usize,
    pub signal: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 20,
            vocab_size: 400,
            zipf_exponent: 1.0,
            train_size: 2000,
            eval_per_class: 20,
            seed: 42,
            length_range: (12, 30),
            signature_tokens: 6,
            signal: 0.3,
        }
    }
}

pub fn class_name(c: usize) -> String {
    format!("charge{c:02}")
}

pub fn token_name(t: usize) -> String {
    format!("w{t:04}")
}

/// Train-set size of every class.
///
/// Class `c` (0-based) sits at Zipf rank `(c + 1)^2`, so its share is
/// proportional to `(c + 1)^(-2 s)`. Every class first gets one example;
/// the remaining `train_size - num_classes` are split by the largest
/// remainder method, with ties in the fractional part going to the lower
/// class index.
pub fn class_allocation(num_classes: usize, train_size: usize, zipf_exponent: f64) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::contract("synthetic data needs at least two classes"));
    }
    if train_size < num_classes {
        return Err(Error::contract(format!(
            "train_size {train_size} cannot cover {num_classes} classes"
        )));
    }
    if !(zipf_exponent >= 0.0) {
        return Err(Error::contract("zipf exponent must be non-negative"));
    }
    let weights: Vec<f64> = (0..num_classes)
        .map(|c| ((c + 1) as f64).powf(-2.0 * zipf_exponent))
        .collect();
    let total: f64 = weights.iter().sum();
    let spare = (train_size - num_classes) as f64;
    let quotas: Vec<f64> = weights.iter().map(|w| spare * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| 1 + q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(train_size - assigned) {
        counts[c] += 1;
    }
    Ok(counts)
}

struct Sampler {
    signature_tokens: usize,
    signal: f64,
    background_start: usize,
    background: WeightedIndex<f64>,
    lengths: (usize, usize),
}

impl Sampler {
    fn document(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let len = rng.gen_range(self.lengths.0..=self.lengths.1);
        (0..len)
            .map(|_| {
                let id = if rng.gen_bool(self.signal) {
                    class * self.signature_tokens + rng.gen_range(0..self.signature_tokens)
                } else {
                    self.background_start + self.background.sample(rng)
                };
                token_name(id)
            })
            .collect()
    }
}

/// Generates a dataset; identical specs give identical datasets.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let counts = class_allocation(spec.num_classes, spec.train_size, spec.zipf_exponent)?;
    let reserved = spec.num_classes * spec.signature_tokens;
    if spec.signature_tokens == 0 || spec.vocab_size <= reserved {
        return Err(Error::contract(format!(
            "vocab_size {} leaves no background tokens after {reserved} signature tokens",
            spec.vocab_size
        )));
    }
    let (lo, hi) = spec.length_range;
    if lo == 0 || lo > hi {
        return Err(Error::contract("length range must satisfy 1 <= min <= max"));
    }
    if !(0.0..=1.0).contains(&spec.signal) {
        return Err(Error::contract("signal must lie in [0, 1]"));
    }
    if spec.eval_per_class == 0 {
        return Err(Error::contract("eval_per_class must be positive"));
    }
    let background_len = spec.vocab_size - reserved;
    let background = WeightedIndex::new((0..background_len).map(|r| 1.0 / (r + 1) as f64))
        .map_err(|e| Error::contract(e.to_string()))?;
    let sampler = Sampler {
        signature_tokens: spec.signature_tokens,
        signal: spec.signal,
        background_start: reserved,
        background,
        lengths: spec.length_range,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let split = |per_class: &dyn Fn(usize) -> usize, rng: &mut ChaCha8Rng| -> Vec<LabeledExample> {
        let mut classes: Vec<usize> = (0..spec.num_classes)
            .flat_map(|c| std::iter::repeat_n(c, per_class(c)))
            .collect();
        classes.shuffle(rng);
        classes
            .into_iter()
            .map(|c| LabeledExample {
                fact: sampler.document(c, rng),
                charge: class_name(c),
            })
            .collect()
    };
    let train = split(&|c| counts[c], &mut rng);
    let valid = split(&|_| spec.eval_per_class, &mut rng);
    let test = split(&|_| spec.eval_per_class, &mut rng);
    let labels = (0..spec.num_classes).map(class_name).collect();
    Dataset::with_labels(train, valid, test, labels)
}
