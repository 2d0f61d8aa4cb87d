//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "SECAPS1\n"
//! config_len   u64 LE
//! config       config_len bytes of UTF-8 JSON
//! per tensor, in canonical parameter order:
//!   name_len   u16 LE
//!   name       name_len bytes of UTF-8
//!   rank       u8
//!   dims       rank x u64 LE
//!   values     product(dims) x f32 LE, row-major
//! ```
//!
//! The JSON object holds the model configuration under `model` and,
//! optionally, the label list and vocabulary under `labels` and
//! `vocabulary`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"SECAPS1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    labels: Vec<String>,
    #[serde(default)]
    vocabulary: Vec<String>,
}

/// Parameters plus everything needed to score new text with them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub vocabulary: Vec<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            model: self.config.clone(),
            labels: self.labels.clone(),
            vocabulary: self.vocabulary.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, tensor) in self.params.iter() {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name `{name}` too long")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::try_from(tensor.rank()).map_err(|_| Error::Checkpoint("rank above 255".into()))?);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(Error::Truncated { what: "magic".into() });
        }
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let header_len = r.u64("config length")?;
        let header_len = usize::try_from(header_len).map_err(|_| Error::Truncated { what: "config".into() })?;
        let header: Header = serde_json::from_slice(r.take(header_len, "config")?)
            .map_err(|e| Error::Checkpoint(format!("config is not valid JSON: {e}")))?;
        header.model.validate()?;

        let expected = header.model.parameter_shapes();
        let mut named = Vec::with_capacity(expected.len());
        for (want_name, want_shape) in &expected {
            let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_owned();
            if &name != want_name {
                return Err(Error::Checkpoint(format!("expected tensor `{want_name}`, found `{name}`")));
            }
            let rank = r.take(1, "rank")?[0] as usize;
            let dims = (0..rank)
                .map(|_| r.u64("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if &dims != want_shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: want_shape.clone(),
                    found: dims,
                });
            }
            let count: usize = dims.iter().product();
            let raw = r.take(count * 4, &format!("values of `{name}`"))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            let tensor = Tensor::new(dims, values).map_err(|_| Error::Checkpoint(format!("`{name}` holds non-finite values")))?;
            named.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            params: ModelParams::from_named(named, &header.model)?,
            config: header.model,
            labels: header.labels,
            vocabulary: header.vocabulary,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            what: what.to_owned(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
}

/// Writes parameters and configuration.
pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint {
        params: params.clone(),
        config: config.clone(),
        labels: Vec::new(),
        vocabulary: Vec::new(),
    }
    .save(path)
}

/// Reads parameters and configuration.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, ModelConfig)> {
    let ck = Checkpoint::load(path)?;
    Ok((ck.params, ck.config))
}
