use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Special token ids, fixed by contract.
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Word-level vocabulary with a token frequency counter.
///
/// Ids are assigned in first-appearance order after the four specials, so a
/// vocabulary built from the same corpus is always identical. The counter
/// records corpus occurrences (not just presence); rare-vocabulary analysis
/// reads gloss-side frequencies from here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    freq: HashMap<String, usize>,
}

impl Vocab {
    /// Build from sentences, inserting tokens in encounter order.
    pub fn build<I, S, W>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = W>,
        W: AsRef<str>,
    {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            freq: HashMap::new(),
        };
        for s in SPECIALS {
            v.token_to_id.insert(s.to_string(), v.id_to_token.len());
            v.id_to_token.push(s.to_string());
        }
        for sentence in sentences {
            for tok in sentence {
                let tok = tok.as_ref();
                *v.freq.entry(tok.to_string()).or_insert(0) += 1;
                if !v.token_to_id.contains_key(tok) {
                    v.token_to_id.insert(tok.to_string(), v.id_to_token.len());
                    v.id_to_token.push(tok.to_string());
                }
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        // Specials are always present.
        false
    }

    /// Id of a token, `<unk>` for out-of-vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Corpus occurrence count (0 for unseen tokens and specials).
    pub fn freq(&self, token: &str) -> usize {
        self.freq.get(token).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Inverse of `encode` for in-vocabulary ids; skips nothing.
    /// Tokens in id order, specials first. With `counts()` this is a
    /// deterministic serialized form; `from_parts` rebuilds the vocabulary.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Occurrence counts aligned with `tokens()` (0 for unseen specials).
    pub fn counts(&self) -> Vec<usize> {
        self.id_to_token
            .iter()
            .map(|t| self.freq.get(t).copied().unwrap_or(0))
            .collect()
    }

    /// Rebuild from the `tokens()` / `counts()` pair.
    pub fn from_parts(tokens: Vec<String>, counts: Vec<usize>) -> crate::error::Result<Self> {
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()] != SPECIALS.map(String::from)
        {
            return Err(crate::error::Error::Contract {
                op: "vocab_from_parts",
                detail: "token list must start with the four specials".to_string(),
            });
        }
        if counts.len() != tokens.len() {
            return Err(crate::error::Error::Contract {
                op: "vocab_from_parts",
                detail: format!("{} tokens but {} counts", tokens.len(), counts.len()),
            });
        }
        let mut token_to_id = HashMap::new();
        let mut freq = HashMap::new();
        for (i, (t, &c)) in tokens.iter().zip(&counts).enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(crate::error::Error::Contract {
                    op: "vocab_from_parts",
                    detail: format!("duplicate token '{t}'"),
                });
            }
            if c > 0 {
                freq.insert(t.clone(), c);
            }
        }
        Ok(Vocab {
            token_to_id,
            id_to_token: tokens,
            freq,
        })
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}
