use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, PAD};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Range of the seeded vectors given to tokens without a pretrained vector.
pub const MISSING_VECTOR_BOUND: f64 = 0.1;

/// Reads word2vec text vectors: an optional `count dim` header, then
/// `word v1 .. v_dim` per line.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let number = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if number == 1 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let declared: usize = fields[1].parse().expect("checked");
            if declared != dim {
                return Err(Error::Format {
                    line: 1,
                    detail: format!("header declares dimension {declared}, expected {dim}"),
                });
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(Error::Format {
                line: number,
                detail: format!("expected a word and {dim} values, found {} values", fields.len() - 1),
            });
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Format {
                line: number,
                detail: "non-numeric value".into(),
            })?;
        table.insert(fields[0].to_owned(), values);
    }
    Ok(table)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Deterministic vector for `token` under `seed`, uniform in
/// `[-MISSING_VECTOR_BOUND, MISSING_VECTOR_BOUND]`.
pub fn seeded_vector(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(token.as_bytes()));
    (0..dim)
        .map(|_| rng.gen_range(-MISSING_VECTOR_BOUND..=MISSING_VECTOR_BOUND))
        .collect()
}

/// `vocab.len() x dim` embedding table: pretrained vectors where available,
/// seeded vectors otherwise, zeros for padding.
pub fn embedding_matrix(table: &HashMap<String, Vec<f64>>, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for (id, token) in vocab.tokens().iter().enumerate() {
        match table.get(token) {
            _ if id == PAD => data.extend(std::iter::repeat_n(0.0, dim)),
            Some(v) if v.len() == dim => data.extend_from_slice(v),
            Some(v) => {
                return Err(Error::contract(format!(
                    "vector for `{token}` has {} values, expected {dim}",
                    v.len()
                )))
            }
            None => data.extend(seeded_vector(token, seed, dim)),
        }
    }
    Tensor::new(vec![vocab.len(), dim], data)
}
