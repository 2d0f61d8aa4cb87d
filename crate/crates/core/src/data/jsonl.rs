use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One pre-tokenized fact description and its charge label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub fact: Vec<String>,
    pub charge: String,
}

impl LabeledExample {
    pub fn new(fact: Vec<String>, charge: impl Into<String>) -> Result<Self> {
        let charge = charge.into();
        if fact.is_empty() || charge.is_empty() {
            return Err(Error::contract("examples need a non-empty fact and charge"));
        }
        Ok(LabeledExample { fact, charge })
    }
}

fn parse_line(line: &str, number: usize) -> Result<LabeledExample> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Malformed {
        line: number,
        detail: e.to_string(),
    })?;
    let fact = value
        .get("fact")
        .and_then(Value::as_array)
        .and_then(|items| items.iter().map(|t| t.as_str().map(str::to_owned)).collect::<Option<Vec<_>>>())
        .filter(|f| !f.is_empty())
        .ok_or(Error::Schema { line: number, field: "fact" })?;
    let charge = value
        .get("charge")
        .and_then(Value::as_str)
        .filter(|c| !c.is_empty())
        .ok_or(Error::Schema { line: number, field: "charge" })?;
    Ok(LabeledExample {
        fact,
        charge: charge.to_owned(),
    })
}

/// Reads `{"fact": [tokens...], "charge": label}` records, one per line, in
/// file order. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Writes records as UTF-8 JSONL with LF line endings.
pub fn write_jsonl(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_record() {
        let ex = parse_line(r#"{"fact":["a","b"],"charge":"theft"}"#, 1).unwrap();
        assert_eq!(ex, LabeledExample::new(vec!["a".into(), "b".into()], "theft").unwrap());
    }

    #[test]
    fn missing_charge_names_the_line() {
        let err = parse_line(r#"{"fact":["a"]}"#, 1).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 1, field: "charge" }), "{err}");
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(parse_line("{nope", 7), Err(Error::Malformed { line: 7, .. })));
    }
}
