use std::collections::HashMap;

use super::jsonl::LabeledExample;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token ids. Ids 0 and 1 are reserved for padding and unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from training examples. Tokens occurring at least `min_count`
    /// times get ids in order of first appearance.
    pub fn build(train: &[LabeledExample], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order = Vec::new();
        for tok in train.iter().flat_map(|ex| &ex.fact) {
            let c = counts.entry(tok).or_insert(0);
            if *c == 0 {
                order.push(tok.as_str());
            }
            *c += 1;
        }
        let kept = order.into_iter().filter(|t| counts[t] >= min_count.max(1));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(kept.filter(|t| *t != PAD_TOKEN && *t != UNK_TOKEN))
            .map(str::to_owned)
            .collect();
        Self::from_list(tokens).expect("reserved tokens are present")
    }

    /// Restores a vocabulary from its id-ordered token list.
    pub fn from_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::contract("vocabulary must start with <pad>, <unk>"));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::contract("duplicate token in vocabulary"));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Maps the first `max_len` tokens of `fact` to ids.
pub fn encode_tokens(fact: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    if fact.is_empty() {
        return Err(Error::contract("cannot encode an empty fact"));
    }
    Ok(fact.iter().take(max_len).map(|t| vocab.id(t)).collect())
}

/// Token ids of an example, truncated to its first `max_len` tokens.
pub fn encode_example(example: &LabeledExample, vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    encode_tokens(&example.fact, vocab, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(tokens: &[&str]) -> LabeledExample {
        LabeledExample::new(tokens.iter().map(|s| s.to_string()).collect(), "x").unwrap()
    }

    #[test]
    fn ids_follow_first_appearance() {
        let v = Vocabulary::build(&[ex(&["b", "a", "b"]), ex(&["c"])], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "a", "c"]);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn min_count_drops_rare_tokens() {
        let v = Vocabulary::build(&[ex(&["b", "a", "b"])], 2);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b"]);
    }

    #[test]
    fn truncates_to_prefix() {
        let v = Vocabulary::build(&[ex(&["a", "b", "c"])], 1);
        assert_eq!(encode_example(&ex(&["a", "b", "c", "q"]), &v, 3).unwrap(), vec![2, 3, 4]);
        assert_eq!(encode_example(&ex(&["q"]), &v, 3).unwrap(), vec![UNK]);
    }
}
