use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::{detokenize, tokenize, Vocab, BOS, EOS, PAD};

/// One gloss/text sentence pair, whitespace-tokenized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub gloss: Vec<String>,
    pub text: Vec<String>,
}

/// A line-aligned parallel corpus with its token sets and a joint
/// vocabulary over both sides. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pairs: Vec<Pair>,
    gloss_types: BTreeSet<String>,
    text_types: BTreeSet<String>,
    vocab: Vocab,
}

impl ParallelCorpus {
    /// Build from token pairs. Every side must be non-empty; token sets and
    /// the joint vocabulary are derived from exactly what is present.
    pub fn from_pairs(pairs: Vec<Pair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus {
                path: "<in memory>".to_string(),
            });
        }
        for (i, p) in pairs.iter().enumerate() {
            if p.gloss.is_empty() || p.text.is_empty() {
                return Err(Error::Contract {
                    op: "from_pairs",
                    detail: format!("pair {i} has an empty side"),
                });
            }
        }
        let gloss_types: BTreeSet<String> = pairs
            .iter()
            .flat_map(|p| p.gloss.iter().cloned())
            .collect();
        let text_types: BTreeSet<String> =
            pairs.iter().flat_map(|p| p.text.iter().cloned()).collect();
        // Joint vocabulary: gloss side then text side, pair by pair, so ids
        // are a pure function of the corpus.
        let vocab = Vocab::build(
            pairs
                .iter()
                .flat_map(|p| [&p.gloss, &p.text])
                .map(|side| side.iter().map(String::as_str)),
        );
        Ok(ParallelCorpus {
            pairs,
            gloss_types,
            text_types,
            vocab,
        })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// W_G: distinct gloss-side tokens.
    pub fn gloss_types(&self) -> &BTreeSet<String> {
        &self.gloss_types
    }

    /// W_S: distinct text-side tokens.
    pub fn text_types(&self) -> &BTreeSet<String> {
        &self.text_types
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Text sides only, for teacher pretraining.
    pub fn text_sentences(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.text.as_slice())
    }
}

/// Load `<x>.gloss` / `<x>.text` line-aligned files. Gloss case is
/// preserved; text is lowercased. Errors report exactly what is wrong:
/// mismatched line counts name both counts, an empty line names its file
/// and 1-based line number.
pub fn load_parallel(gloss_path: &Path, text_path: &Path) -> Result<ParallelCorpus> {
    let gloss_lines = read_lines(gloss_path)?;
    let text_lines = read_lines(text_path)?;
    if gloss_lines.len() != text_lines.len() {
        return Err(Error::LineCountMismatch {
            gloss_lines: gloss_lines.len(),
            text_lines: text_lines.len(),
        });
    }
    if gloss_lines.is_empty() {
        return Err(Error::EmptyCorpus {
            path: gloss_path.display().to_string(),
        });
    }
    let mut pairs = Vec::with_capacity(gloss_lines.len());
    for (i, (g, t)) in gloss_lines.iter().zip(&text_lines).enumerate() {
        let gloss = tokenize(g);
        let text = tokenize(&t.to_lowercase());
        if gloss.is_empty() {
            return Err(Error::EmptyLine {
                path: gloss_path.display().to_string(),
                line: i + 1,
            });
        }
        if text.is_empty() {
            return Err(Error::EmptyLine {
                path: text_path.display().to_string(),
                line: i + 1,
            });
        }
        pairs.push(Pair { gloss, text });
    }
    ParallelCorpus::from_pairs(pairs)
}

/// Write both sides back out in the loader's format.
pub fn write_parallel(corpus: &ParallelCorpus, gloss_path: &Path, text_path: &Path) -> Result<()> {
    let mut g = String::new();
    let mut t = String::new();
    for p in corpus.pairs() {
        g.push_str(&detokenize(&p.gloss));
        g.push('\n');
        t.push_str(&detokenize(&p.text));
        t.push('\n');
    }
    fs::write(gloss_path, g)?;
    fs::write(text_path, t)?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let content = fs::read_to_string(path)?;
    Ok(content.lines().map(str::to_string).collect())
}

/// A shuffled group of encoded sentence pairs, padded to the batch's own
/// maximum lengths. `*_mask` entries are false exactly where `<pad>` sits.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Gloss ids, [batch][src_len].
    pub src: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<bool>>,
    /// Decoder input: `<bos>` + text ids, [batch][tgt_len].
    pub tgt_in: Vec<Vec<usize>>,
    /// Decoder target: text ids + `<eos>`, aligned with `tgt_in`.
    pub tgt_out: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<bool>>,
    /// Index of each row's pair in the source corpus, for joining batch
    /// rows back to per-pair data such as teacher features.
    pub pair_indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Count of real (non-pad) target positions, the label-smoothing loss
    /// normalizer.
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask
            .iter()
            .flat_map(|row| row.iter())
            .filter(|&&m| m)
            .count()
    }
}

/// Deterministically shuffle the corpus by `seed` and cut it into padded
/// batches. The final batch may be short.
pub fn make_batches(corpus: &ParallelCorpus, batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let vocab = corpus.vocab();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let pairs: Vec<&Pair> = chunk.iter().map(|&i| &corpus.pairs()[i]).collect();
        let src_len = pairs.iter().map(|p| p.gloss.len()).max().unwrap();
        let tgt_len = pairs.iter().map(|p| p.text.len()).max().unwrap() + 1;

        let mut batch = Batch {
            src: Vec::new(),
            src_mask: Vec::new(),
            tgt_in: Vec::new(),
            tgt_out: Vec::new(),
            tgt_mask: Vec::new(),
            pair_indices: chunk.to_vec(),
        };
        for p in pairs {
            let gloss = vocab.encode(&p.gloss);
            let text = vocab.encode(&p.text);

            let mut src = gloss.clone();
            src.resize(src_len, PAD);
            batch
                .src_mask
                .push((0..src_len).map(|i| i < gloss.len()).collect());
            batch.src.push(src);

            // tgt_in[t] predicts tgt_out[t]; both are tgt_len long.
            let mut tin = Vec::with_capacity(tgt_len);
            tin.push(BOS);
            tin.extend_from_slice(&text);
            tin.resize(tgt_len, PAD);
            let mut tout = text.clone();
            tout.push(EOS);
            let real = tout.len();
            tout.resize(tgt_len, PAD);
            batch
                .tgt_mask
                .push((0..tgt_len).map(|i| i < real).collect());
            batch.tgt_in.push(tin);
            batch.tgt_out.push(tout);
        }
        batches.push(batch);
    }
    batches
}
