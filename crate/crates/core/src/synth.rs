//! Synthetic parallel-corpus generator.
//!
//! Text sentences come from a small stochastic template grammar over a
//! weather/daily-report lexicon. Each gloss is derived from its text by
//! uppercasing, dropping function words with probability `drop_prob`,
//! swapping adjacent tokens with the same probability, and projecting
//! content words onto a smaller gloss lexicon. With the default asymmetric
//! vocabulary sizes this reproduces the gap the model is built around:
//! fewer gloss types, shorter gloss sentences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Pair, ParallelCorpus};
use crate::error::{Error, Result};

/// Closed class: these never project into the gloss lexicon and are the
/// only tokens eligible for dropping.
const FUNCTION_WORDS: [&str; 16] = [
    "the", "a", "is", "are", "to", "of", "in", "on", "and", "with", "for", "at", "be", "will",
    "it", "this",
];

const NOUNS: [&str; 20] = [
    "rain", "wind", "sun", "snow", "cloud", "storm", "morning", "evening", "night", "noon",
    "north", "south", "east", "west", "weather", "frost", "fog", "shower", "thunder", "coast",
];
const VERBS: [&str; 12] = [
    "come", "stay", "blow", "shine", "fall", "rise", "move", "bring", "remain", "clear", "pass",
    "spread",
];
const ADJS: [&str; 12] = [
    "strong", "weak", "cold", "warm", "heavy", "light", "fresh", "mild", "cloudy", "sunny",
    "windy", "icy",
];

/// Sentence skeletons; N/V/A slots are filled from the content pools.
const TEMPLATES: [&[Slot]; 8] = [
    &[Slot::F("the"), Slot::N, Slot::V, Slot::F("in"), Slot::F("the"), Slot::N],
    &[Slot::N, Slot::F("the"), Slot::N, Slot::F("is"), Slot::A],
    &[Slot::F("the"), Slot::A, Slot::N, Slot::F("will"), Slot::V],
    &[
        Slot::F("it"),
        Slot::F("is"),
        Slot::A,
        Slot::F("and"),
        Slot::A,
        Slot::F("in"),
        Slot::F("the"),
        Slot::N,
    ],
    &[
        Slot::F("the"),
        Slot::N,
        Slot::V,
        Slot::F("and"),
        Slot::F("the"),
        Slot::N,
        Slot::V,
    ],
    &[Slot::F("a"), Slot::A, Slot::N, Slot::V, Slot::F("to"), Slot::F("the"), Slot::N],
    &[Slot::F("the"), Slot::N, Slot::F("is"), Slot::A, Slot::F("at"), Slot::N],
    &[Slot::N, Slot::F("and"), Slot::N, Slot::V, Slot::F("in"), Slot::F("the"), Slot::N],
];

#[derive(Clone, Copy)]
enum Slot {
    /// Fixed function word.
    F(&'static str),
    N,
    V,
    A,
}

struct Lexicon {
    nouns: Vec<String>,
    verbs: Vec<String>,
    adjs: Vec<String>,
    /// Content word → gloss form (uppercased word from the gloss pool).
    /// Many-to-one when the gloss pool is smaller than the content pool.
    gloss_of: std::collections::HashMap<String, String>,
}

impl Lexicon {
    /// Content pool of `n_content` words split round-robin over the three
    /// classes, extending the base lists with numbered variants ("rain2")
    /// once exhausted. The gloss pool is the first `n_gloss` content words
    /// in the same order; later words project onto it cyclically.
    fn new(n_content: usize, n_gloss: usize) -> Self {
        let mut ordered = Vec::with_capacity(n_content);
        let mut nouns = Vec::new();
        let mut verbs = Vec::new();
        let mut adjs = Vec::new();
        for i in 0..n_content {
            let (word, class): (String, usize) = match i % 3 {
                0 => (numbered(&NOUNS, i / 3), 0),
                1 => (numbered(&VERBS, i / 3), 1),
                _ => (numbered(&ADJS, i / 3), 2),
            };
            match class {
                0 => nouns.push(word.clone()),
                1 => verbs.push(word.clone()),
                _ => adjs.push(word.clone()),
            }
            ordered.push(word);
        }
        let mut gloss_of = std::collections::HashMap::new();
        for (i, w) in ordered.iter().enumerate() {
            let target = &ordered[i % n_gloss];
            gloss_of.insert(w.clone(), target.to_uppercase());
        }
        Lexicon {
            nouns,
            verbs,
            adjs,
            gloss_of,
        }
    }
}

fn numbered(base: &[&str], k: usize) -> String {
    let i = k % base.len();
    let round = k / base.len();
    if round == 0 {
        base[i].to_string()
    } else {
        format!("{}{}", base[i], round + 1)
    }
}

/// Generate `n_pairs` gloss/text pairs. `gloss_vocab_size` and
/// `text_vocab_size` bound the respective type counts (function words count
/// toward both sides, since undropped ones appear uppercased in glosses).
///
/// Degenerate case: `drop_prob = 0` with equal vocabulary sizes makes every
/// gloss an uppercased copy of its text.
pub fn generate_synthetic(
    n_pairs: usize,
    gloss_vocab_size: usize,
    text_vocab_size: usize,
    drop_prob: f64,
    seed: u64,
) -> Result<ParallelCorpus> {
    if n_pairs == 0 {
        return Err(Error::Contract {
            op: "generate_synthetic",
            detail: "n_pairs must be positive".to_string(),
        });
    }
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::Contract {
            op: "generate_synthetic",
            detail: format!("drop_prob {drop_prob} outside [0, 1)"),
        });
    }
    if gloss_vocab_size > text_vocab_size {
        return Err(Error::Contract {
            op: "generate_synthetic",
            detail: format!(
                "gloss vocabulary ({gloss_vocab_size}) cannot exceed text vocabulary \
                 ({text_vocab_size})"
            ),
        });
    }
    let n_fn = FUNCTION_WORDS.len();
    // Three content words (one per class) is the floor for the grammar.
    if text_vocab_size < n_fn + 3 || gloss_vocab_size < n_fn + 3 {
        return Err(Error::Contract {
            op: "generate_synthetic",
            detail: format!(
                "vocabulary sizes must be at least {} ({} function words + 3 content words)",
                n_fn + 3,
                n_fn
            ),
        });
    }

    let lex = Lexicon::new(text_vocab_size - n_fn, gloss_vocab_size - n_fn);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let mut text = Vec::with_capacity(template.len());
        for slot in template {
            let word = match slot {
                Slot::F(w) => (*w).to_string(),
                Slot::N => lex.nouns[rng.gen_range(0..lex.nouns.len())].clone(),
                Slot::V => lex.verbs[rng.gen_range(0..lex.verbs.len())].clone(),
                Slot::A => lex.adjs[rng.gen_range(0..lex.adjs.len())].clone(),
            };
            text.push(word);
        }

        let mut gloss: Vec<String> = Vec::with_capacity(text.len());
        for w in &text {
            match lex.gloss_of.get(w) {
                Some(g) => gloss.push(g.clone()),
                // Function word: keep (uppercased) or drop.
                None => {
                    if !rng.gen_bool(drop_prob) {
                        gloss.push(w.to_uppercase());
                    }
                }
            }
        }
        // Order perturbation, same strength as the drop probability.
        if gloss.len() >= 2 {
            for i in 0..gloss.len() - 1 {
                if rng.gen_bool(drop_prob) {
                    gloss.swap(i, i + 1);
                }
            }
        }
        pairs.push(Pair { gloss, text });
    }
    ParallelCorpus::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment;

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(50, 30, 60, 0.3, 9).unwrap();
        let b = generate_synthetic(50, 30, 60, 0.3, 9).unwrap();
        assert_eq!(a.pairs(), b.pairs());
        let c = generate_synthetic(50, 30, 60, 0.3, 10).unwrap();
        assert_ne!(a.pairs(), c.pairs());
    }

    #[test]
    fn vocab_bounds_hold() {
        let c = generate_synthetic(500, 40, 120, 0.3, 1).unwrap();
        assert!(c.gloss_types().len() <= 40, "{}", c.gloss_types().len());
        assert!(c.text_types().len() <= 120, "{}", c.text_types().len());
        assert!(c.gloss_types().len() < c.text_types().len());
    }

    #[test]
    fn default_settings_leave_glosses_shorter() {
        let c = generate_synthetic(500, 40, 120, 0.3, 1).unwrap();
        let phi_d = augment::dataset_length_ratio(&c);
        assert!(phi_d > 0.0, "φ_d = {phi_d}");
    }

    #[test]
    fn degenerate_copy_case() {
        let c = generate_synthetic(40, 60, 60, 0.0, 2).unwrap();
        for p in c.pairs() {
            let upper: Vec<String> = p.text.iter().map(|w| w.to_uppercase()).collect();
            assert_eq!(p.gloss, upper);
        }
        // Every pair covers its text fully, so all are upsampling candidates.
        let f = augment::compute_factors(&c, &augment::AugmentationParams::default());
        assert_eq!(f.candidates.len(), c.len());
    }

    #[test]
    fn infeasible_sizes_rejected() {
        assert!(generate_synthetic(10, 80, 60, 0.3, 0).is_err());
        assert!(generate_synthetic(10, 5, 60, 0.3, 0).is_err());
        assert!(generate_synthetic(0, 40, 60, 0.3, 0).is_err());
    }
}
