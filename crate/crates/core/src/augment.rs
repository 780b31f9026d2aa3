//! Multi-level upsampling augmentation.
//!
//! Four corpus-level difference factors (vocabulary gap, rare-word ratio,
//! sentence cover, length gap) combine through a weight vector into a
//! single upsampling ratio Φ. Augmentation then injects round(Φ·N)
//! text-text pairs drawn from the candidate set: pairs whose gloss already
//! covers most of their text.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Pair, ParallelCorpus};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationParams {
    /// Gloss words with corpus frequency below this are rare.
    pub tau_r: usize,
    /// Cover-ratio threshold; candidates need r_i strictly above it.
    pub tau_c: f64,
    /// Weights for [φ_v, φ_r, φ_s, φ_d].
    pub theta: [f64; 4],
}

impl Default for AugmentationParams {
    fn default() -> Self {
        AugmentationParams {
            tau_r: 2,
            tau_c: 0.5,
            theta: [0.1, 0.1, 0.6, 0.2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentationFactors {
    pub phi_v: f64,
    pub phi_r: f64,
    pub phi_s: f64,
    pub phi_d: f64,
    /// r_i for every pair, in corpus order.
    pub cover_ratios: Vec<f64>,
    /// Indices with r_i > τ_c.
    pub candidates: Vec<usize>,
    pub params: AugmentationParams,
}

impl AugmentationFactors {
    pub fn as_array(&self) -> [f64; 4] {
        [self.phi_v, self.phi_r, self.phi_s, self.phi_d]
    }
}

#[derive(Debug, Clone)]
pub struct AugmentationReport {
    pub factors: AugmentationFactors,
    pub phi_upsamp: f64,
    pub n_injected: usize,
    pub seed: u64,
    /// True when Φ > 0 but no pair cleared the cover threshold, forcing
    /// n_injected to 0.
    pub candidates_empty: bool,
}

impl AugmentationReport {
    /// Flat JSON shape written by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "phi_v": self.factors.phi_v,
            "phi_r": self.factors.phi_r,
            "phi_s": self.factors.phi_s,
            "phi_d": self.factors.phi_d,
            "theta": self.factors.params.theta,
            "tau_r": self.factors.params.tau_r,
            "tau_c": self.factors.params.tau_c,
            "Phi": self.phi_upsamp,
            "n_injected": self.n_injected,
            "n_candidates": self.factors.candidates.len(),
            "seed": self.seed,
            "candidates_empty": self.candidates_empty,
        })
    }
}

fn union_size(corpus: &ParallelCorpus) -> usize {
    corpus
        .gloss_types()
        .union(corpus.text_types())
        .count()
}

/// φ_v = 1 − |W_G| / |W_G ∪ W_S|, case-sensitive token sets.
pub fn vocab_diff_ratio(corpus: &ParallelCorpus) -> f64 {
    1.0 - corpus.gloss_types().len() as f64 / union_size(corpus) as f64
}

/// φ_r = 1 − #{w ∈ W_G : gloss-side frequency(w) < τ_r} / |W_G ∪ W_S|.
/// Frequencies count gloss-side occurrences only.
pub fn rare_vocab_ratio(corpus: &ParallelCorpus, tau_r: usize) -> f64 {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for p in corpus.pairs() {
        for w in &p.gloss {
            *freq.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    let rare = corpus
        .gloss_types()
        .iter()
        .filter(|w| freq.get(w.as_str()).copied().unwrap_or(0) < tau_r)
        .count();
    1.0 - rare as f64 / union_size(corpus) as f64
}

/// Per-pair cover ratio r_i = |set(G_i) ∩ set(S_i)| / |set(S_i)| under
/// case-insensitive matching, φ_s = 1 − (1/N)·Σ_{r_i > τ_c} r_i with N the
/// total pair count, and the candidate set {i : r_i > τ_c} (strict).
pub fn sentence_cover_ratio(
    corpus: &ParallelCorpus,
    tau_c: f64,
) -> (f64, Vec<usize>, Vec<f64>) {
    let n = corpus.len() as f64;
    let mut ratios = Vec::with_capacity(corpus.len());
    let mut candidates = Vec::new();
    let mut covered_sum = 0.0;
    for (i, p) in corpus.pairs().iter().enumerate() {
        let g: BTreeSet<String> = p.gloss.iter().map(|w| w.to_lowercase()).collect();
        let s: BTreeSet<String> = p.text.iter().map(|w| w.to_lowercase()).collect();
        let inter = g.intersection(&s).count();
        let r = inter as f64 / s.len() as f64;
        ratios.push(r);
        if r > tau_c {
            candidates.push(i);
            covered_sum += r;
        }
    }
    (1.0 - covered_sum / n, candidates, ratios)
}

/// φ_d = clamp(1 − Σ|G_i| / Σ|S_i|, 0, 1). The raw value goes negative
/// when glosses run longer than texts; a negative difference degree has no
/// meaning downstream, so it clamps to zero.
pub fn dataset_length_ratio(corpus: &ParallelCorpus) -> f64 {
    let gloss_total: usize = corpus.pairs().iter().map(|p| p.gloss.len()).sum();
    let text_total: usize = corpus.pairs().iter().map(|p| p.text.len()).sum();
    (1.0 - gloss_total as f64 / text_total as f64).clamp(0.0, 1.0)
}

/// Φ = θ · [φ_v, φ_r, φ_s, φ_d].
pub fn upsampling_ratio(factors: &[f64; 4], theta: &[f64; 4]) -> f64 {
    factors.iter().zip(theta).map(|(f, t)| f * t).sum()
}

/// All four factors plus the candidate set in one pass.
pub fn compute_factors(corpus: &ParallelCorpus, params: &AugmentationParams) -> AugmentationFactors {
    let (phi_s, candidates, cover_ratios) = sentence_cover_ratio(corpus, params.tau_c);
    AugmentationFactors {
        phi_v: vocab_diff_ratio(corpus),
        phi_r: rare_vocab_ratio(corpus, params.tau_r),
        phi_s,
        phi_d: dataset_length_ratio(corpus),
        cover_ratios,
        candidates,
        params: *params,
    }
}

/// Append round(Φ·N) text-text pairs (the text side copied onto BOTH
/// sides), sampling source pairs uniformly with replacement from the
/// candidate set. Original pairs are untouched; vocabularies are rebuilt
/// over the extended corpus.
pub fn augment(
    corpus: &ParallelCorpus,
    params: &AugmentationParams,
    seed: u64,
) -> Result<(ParallelCorpus, AugmentationReport)> {
    let factors = compute_factors(corpus, params);
    let phi_upsamp = upsampling_ratio(&factors.as_array(), &params.theta);
    let want = (phi_upsamp * corpus.len() as f64).round() as usize;
    let candidates_empty = factors.candidates.is_empty() && phi_upsamp > 0.0;
    let n_injected = if factors.candidates.is_empty() { 0 } else { want };

    let mut pairs: Vec<Pair> = corpus.pairs().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_injected {
        let j = factors.candidates[rng.gen_range(0..factors.candidates.len())];
        let text = corpus.pairs()[j].text.clone();
        pairs.push(Pair {
            gloss: text.clone(),
            text,
        });
    }
    let augmented = ParallelCorpus::from_pairs(pairs)?;
    Ok((
        augmented,
        AugmentationReport {
            factors,
            phi_upsamp,
            n_injected,
            seed,
            candidates_empty,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::tokenize;

    fn corpus_of(lines: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::from_pairs(
            lines
                .iter()
                .map(|(g, t)| Pair {
                    gloss: tokenize(g),
                    text: tokenize(t),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn vocab_diff_identical_sets_is_zero() {
        let c = corpus_of(&[("a b", "a b")]);
        assert_eq!(vocab_diff_ratio(&c), 0.0);
    }

    #[test]
    fn vocab_diff_disjoint_hand_case() {
        // |W_G| = 2, |W_G ∪ W_S| = 6 → 1 − 2/6 = 2/3.
        let c = corpus_of(&[("A B", "a b c d")]);
        assert!((vocab_diff_ratio(&c) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_diff_subset_hand_case() {
        // |W_G| = 2 ⊂ |W_S| = 4 → 1 − 2/4 = 0.5.
        let c = corpus_of(&[("a b", "a b c d")]);
        assert!((vocab_diff_ratio(&c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rare_vocab_no_rare_words_is_one() {
        let c = corpus_of(&[("a a b b", "x"), ("a b", "y")]);
        assert_eq!(rare_vocab_ratio(&c, 2), 1.0);
    }

    #[test]
    fn rare_vocab_hand_count() {
        // W_G = {a, b}: gloss freq(a) = 1 (rare), freq(b) = 3.
        // W_G ∪ W_S = {a, b, c} → 1 − 1/3 = 2/3.
        let c = corpus_of(&[("a b b", "a b"), ("b", "c")]);
        assert!((rare_vocab_ratio(&c, 2) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rare_vocab_all_rare_covering_union_is_zero() {
        let c = corpus_of(&[("a b", "a b")]);
        assert_eq!(rare_vocab_ratio(&c, 2), 0.0);
    }

    #[test]
    fn cover_full_match_case_folded() {
        let c = corpus_of(&[("A B", "a b"), ("C", "c")]);
        let (phi_s, cand, r) = sentence_cover_ratio(&c, 0.5);
        assert_eq!(r, vec![1.0, 1.0]);
        assert_eq!(cand, vec![0, 1]);
        assert!(phi_s.abs() < 1e-12);
    }

    #[test]
    fn cover_at_threshold_is_not_a_candidate() {
        // r = 1/2, not strictly greater than τ_c = 0.5 → no candidates,
        // nothing summed, φ_s = 1.
        let c = corpus_of(&[("a", "a b")]);
        let (phi_s, cand, r) = sentence_cover_ratio(&c, 0.5);
        assert_eq!(r, vec![0.5]);
        assert!(cand.is_empty());
        assert_eq!(phi_s, 1.0);
    }

    #[test]
    fn cover_two_pair_hand_case() {
        // r = (1.0, 0.6), N = 2 → φ_s = 1 − 1.6/2 = 0.2.
        let c = corpus_of(&[("a b", "a b"), ("p q r", "p q r s t")]);
        let (phi_s, cand, r) = sentence_cover_ratio(&c, 0.5);
        assert_eq!(r, vec![1.0, 0.6]);
        assert_eq!(cand, vec![0, 1]);
        assert!((phi_s - 0.2).abs() < 1e-12);
    }

    #[test]
    fn length_ratio_hand_cases() {
        let equal = corpus_of(&[("a b c", "x y z")]);
        assert_eq!(dataset_length_ratio(&equal), 0.0);
        // Σ|G| = 8, Σ|S| = 10 → 0.2.
        let shorter = corpus_of(&[("a b c d", "v w x y z"), ("a b c d", "v w x y z")]);
        assert!((dataset_length_ratio(&shorter) - 0.2).abs() < 1e-12);
        // Σ|G| = 5, Σ|S| = 4 → raw −0.25, clamped.
        let longer = corpus_of(&[("a b c d e", "w x y z")]);
        assert_eq!(dataset_length_ratio(&longer), 0.0);
    }

    #[test]
    fn upsampling_ratio_hand_cases() {
        let theta = AugmentationParams::default().theta;
        assert_eq!(upsampling_ratio(&[0.0; 4], &theta), 0.0);
        assert!((upsampling_ratio(&[1.0; 4], &theta) - 1.0).abs() < 1e-12);
        let phi = [0.5, 2.0 / 3.0, 0.2, 0.2];
        let want = 0.05 + 2.0 / 30.0 + 0.12 + 0.04;
        assert!((upsampling_ratio(&phi, &theta) - want).abs() < 1e-12);
    }

    #[test]
    fn augment_injects_rounded_count_of_copies() {
        // Ten identical fully-covered pairs: φ_v = 0 (same sets after the
        // loader's case rules? here both sides lowercase), r_i = 1.
        let lines: Vec<(&str, &str)> = (0..10).map(|_| ("a b", "a b")).collect();
        let c = corpus_of(&lines);
        let params = AugmentationParams::default();
        let f = compute_factors(&c, &params);
        let phi = upsampling_ratio(&f.as_array(), &params.theta);
        let (aug, report) = augment(&c, &params, 3).unwrap();
        assert_eq!(report.n_injected, (phi * 10.0).round() as usize);
        assert_eq!(aug.len(), 10 + report.n_injected);
        // Originals untouched, injected pairs are text-text.
        assert_eq!(&aug.pairs()[..10], c.pairs());
        for p in &aug.pairs()[10..] {
            assert_eq!(p.gloss, p.text);
        }
    }

    #[test]
    fn augment_empty_candidates_injects_nothing() {
        // Disjoint vocabularies: r_i = 0 everywhere but Φ > 0 via φ_v.
        let c = corpus_of(&[("A B", "x y"), ("C", "z")]);
        let params = AugmentationParams::default();
        let (aug, report) = augment(&c, &params, 0).unwrap();
        assert!(report.phi_upsamp > 0.0);
        assert_eq!(report.n_injected, 0);
        assert!(report.candidates_empty);
        assert_eq!(aug.len(), c.len());
    }

    #[test]
    fn augment_is_deterministic_per_seed() {
        let lines: Vec<(&str, &str)> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    ("a b", "a b")
                } else {
                    ("c d e", "c d e f")
                }
            })
            .collect();
        let c = corpus_of(&lines);
        let params = AugmentationParams::default();
        let (a1, _) = augment(&c, &params, 5).unwrap();
        let (a2, _) = augment(&c, &params, 5).unwrap();
        assert_eq!(a1.pairs(), a2.pairs());
    }
}
