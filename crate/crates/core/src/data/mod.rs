//! Corpus files, vocabulary, pretrained embeddings and synthetic corpora.

mod embeddings;
mod jsonl;
mod synthetic;
mod vocab;

use std::collections::BTreeSet;
use std::path::Path;

pub use embeddings::{embedding_matrix, load_embeddings, seeded_vector, MISSING_VECTOR_BOUND};
pub use jsonl::{load_jsonl, write_jsonl, LabeledExample};
pub use synthetic::{class_allocation, class_name, gen_synthetic, token_name, SyntheticSpec};
pub use vocab::{encode_example, encode_tokens, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use crate::error::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Train/valid/test splits over a fixed, ordered label set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    labels: Vec<String>,
}

impl Dataset {
    /// Label set is the sorted union of the labels in all splits.
    pub fn new(train: Vec<LabeledExample>, valid: Vec<LabeledExample>, test: Vec<LabeledExample>) -> Result<Self> {
        let labels: BTreeSet<&str> = train
            .iter()
            .chain(&valid)
            .chain(&test)
            .map(|e| e.charge.as_str())
            .collect();
        let labels = labels.into_iter().map(str::to_owned).collect();
        Dataset::with_labels(train, valid, test, labels)
    }

    pub fn with_labels(
        train: Vec<LabeledExample>,
        valid: Vec<LabeledExample>,
        test: Vec<LabeledExample>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let set: BTreeSet<String> = labels.iter().cloned().collect();
        if set.len() != labels.len() {
            return Err(Error::contract("duplicate label"));
        }
        let ds = Dataset {
            train,
            valid,
            test,
            labels,
        };
        for name in SPLITS {
            if let Some(ex) = ds.split(name)?.iter().find(|e| !set.contains(&e.charge)) {
                return Err(Error::contract(format!("{name} label `{}` not in label set", ex.charge)));
            }
        }
        Ok(ds)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn split(&self, name: &str) -> Result<&[LabeledExample]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }

    /// Train-split count of every label, in label order.
    pub fn train_frequencies(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for ex in &self.train {
            counts[self.label_index(&ex.charge).expect("validated")] += 1;
        }
        counts
    }

    /// Reads `train.jsonl`, `valid.jsonl` and `test.jsonl` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let [train, valid, test] = SPLITS.map(|s| load_jsonl(dir.join(format!("{s}.jsonl"))));
        Dataset::new(train?, valid?, test?)
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for name in SPLITS {
            write_jsonl(dir.join(format!("{name}.jsonl")), self.split(name)?)?;
        }
        Ok(())
    }
}
