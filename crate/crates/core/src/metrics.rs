//! Corpus-level BLEU-N, ROUGE-L, and METEOR.
//!
//! All scores live on a 0–100 scale. Hypotheses and references are
//! whitespace-pretokenized token slices; scoring is exact-match and
//! case-sensitive (callers normalize case upstream).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for zero higher-order n-gram precisions. Keeps the geometric mean
/// finite on tiny corpora without inventing overlap: a corpus with zero
/// unigram matches still scores exactly 0.
pub const BLEU_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub n_sentences: usize,
}

fn check_lengths(op: &'static str, hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract {
            op,
            detail: format!(
                "hypothesis/reference count mismatch: {} vs {}",
                hyps.len(),
                refs.len()
            ),
        });
    }
    if hyps.is_empty() {
        return Err(Error::Contract {
            op,
            detail: "empty evaluation set".to_string(),
        });
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-1..max_n: clipped modified n-gram precisions aggregated over
/// the corpus, geometric mean, times the brevity penalty
/// BP = min(1, e^(1 − r/c)).
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<Vec<f64>> {
    check_lengths("bleu", hyps, refs)?;
    assert!(max_n >= 1, "max_n must be at least 1");

    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, &count) in &hc {
                totals[n - 1] += count;
                matches[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }

    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    let precisions: Vec<f64> = (0..max_n)
        .map(|i| {
            if matches[i] == 0 || totals[i] == 0 {
                BLEU_EPS
            } else {
                matches[i] as f64 / totals[i] as f64
            }
        })
        .collect();

    Ok((1..=max_n)
        .map(|k| {
            if matches[0] == 0 || hyp_len == 0 {
                return 0.0;
            }
            let mean_log = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
            100.0 * bp * mean_log.exp()
        })
        .collect())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-sentence LCS F1 (β = 1), scaled to 0–100.
pub fn rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_lengths("rouge_l", hyps, refs)?;
    let mut total = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        let lcs = lcs_len(h, r);
        if lcs == 0 {
            continue;
        }
        let p = lcs as f64 / h.len() as f64;
        let rec = lcs as f64 / r.len() as f64;
        total += 2.0 * p * rec / (p + rec);
    }
    Ok(100.0 * total / hyps.len() as f64)
}

/// Exact-match METEOR. Per sentence: the unigram alignment maximizes match
/// count (forced to Σ_w min(count_h(w), count_r(w))), then minimizes chunk
/// count over all such alignments; Fmean = 10PR/(R + 9P),
/// penalty = 0.5·(chunks/matches)³, score = Fmean·(1 − penalty). The corpus
/// score is the sentence mean × 100.
pub fn meteor(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_lengths("meteor", hyps, refs)?;
    let mut total = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        total += meteor_sentence(h, r)?;
    }
    Ok(100.0 * total / hyps.len() as f64)
}

fn meteor_sentence(hyp: &[String], reference: &[String]) -> Result<f64> {
    if reference.len() >= 64 {
        return Err(Error::Contract {
            op: "meteor",
            detail: format!(
                "reference of {} tokens exceeds the 63-token alignment limit",
                reference.len()
            ),
        });
    }
    let mut ref_counts: HashMap<&String, usize> = HashMap::new();
    for w in reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut hyp_counts: HashMap<&String, usize> = HashMap::new();
    for w in hyp {
        *hyp_counts.entry(w).or_insert(0) += 1;
    }
    let matches: usize = hyp_counts
        .iter()
        .map(|(w, &c)| c.min(ref_counts.get(*w).copied().unwrap_or(0)))
        .sum();
    if matches == 0 {
        return Ok(0.0);
    }

    let chunks = min_chunks(hyp, reference, matches);
    let p = matches as f64 / hyp.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    Ok(fmean * (1.0 - penalty))
}

/// Minimum chunk count over all maximum-cardinality exact-match alignments.
///
/// Exhaustive search over hypothesis positions with memoization on
/// (position, used-reference bitmask, previous matched reference slot).
/// Sentence lengths at this scale keep the state space tiny.
fn min_chunks(hyp: &[String], reference: &[String], max_matches: usize) -> usize {
    struct Search<'a> {
        hyp: &'a [String],
        reference: &'a [String],
        // (hyp index, used mask, prev ref pos + 1) → (matches, chunks).
        memo: HashMap<(usize, u64, usize), (usize, usize)>,
    }
    impl Search<'_> {
        /// Best (matches, fewest chunks) from hyp position `i` onward.
        fn go(&mut self, i: usize, used: u64, prev: usize) -> (usize, usize) {
            if i == self.hyp.len() {
                return (0, 0);
            }
            let key = (i, used, prev);
            if let Some(&v) = self.memo.get(&key) {
                return v;
            }
            // Option 1: leave hyp[i] unmatched.
            let (m, c) = self.go(i + 1, used, 0);
            let mut best = (m, c);
            // Option 2: match hyp[i] to any unused identical ref token.
            for (j, w) in self.reference.iter().enumerate() {
                if used & (1 << j) != 0 || w != &self.hyp[i] {
                    continue;
                }
                let continues = prev > 0 && j == prev;
                let (m, c) = self.go(i + 1, used | (1 << j), j + 1);
                let cand = (m + 1, c + if continues { 0 } else { 1 });
                if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            self.memo.insert(key, best);
            best
        }
    }
    let mut s = Search {
        hyp,
        reference,
        memo: HashMap::new(),
    };
    let (m, chunks) = s.go(0, 0, 0);
    debug_assert_eq!(m, max_matches);
    chunks
}

/// All three metrics in one call.
pub fn evaluate(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<EvalResult> {
    let b = bleu(hyps, refs, 4)?;
    Ok(EvalResult {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        rouge_l: rouge_l(hyps, refs)?,
        meteor: meteor(hyps, refs)?,
        n_sentences: hyps.len(),
    })
}
