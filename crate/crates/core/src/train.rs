//! End-to-end training: label-smoothed cross-entropy under Adam with the
//! inverse-sqrt schedule, per-epoch dev BLEU-4 with early stopping, and
//! corpus-level decode/evaluate helpers shared by the CLI and experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::beam::{beam_search, ModelScorer};
use crate::corpus::{make_batches, Pair, ParallelCorpus};
use crate::error::{Error, Result};
use crate::instruction::InstructionConfig;
use crate::metrics::{bleu, evaluate, EvalResult};
use crate::model::TranslationModel;
use crate::optim::{inverse_sqrt_lr, Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::teacher::Teacher;
use crate::tensor::Tensor;
use crate::vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beam_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Fraction of pairs held out as the dev split by [`split_corpus`].
    pub dev_fraction: f64,
    /// Whether the experiment pipeline applies data augmentation before
    /// training (the training loop itself consumes prepared corpora).
    pub augmentation: bool,
    pub model: ModelConfig,
    /// `None` trains the vanilla backbone. Omitted from serialized output
    /// when absent so the config stays valid TOML.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction: Option<InstructionConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            warmup_steps: 100,
            max_epochs: 60,
            batch_size: 8,
            weight_decay: 1e-3,
            beam_size: 5,
            early_stop_patience: 10,
            seed: 0,
            dev_fraction: 0.1,
            augmentation: true,
            model: ModelConfig::default(),
            instruction: Some(InstructionConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config {
                detail: format!("lr {} must be positive", self.lr),
            });
        }
        if self.warmup_steps == 0 {
            return Err(Error::Config {
                detail: "warmup_steps must be at least 1".to_string(),
            });
        }
        if self.beam_size == 0 {
            return Err(Error::Config {
                detail: "beam_size must be at least 1".to_string(),
            });
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config {
                detail: "batch_size and max_epochs must be at least 1".to_string(),
            });
        }
        if !(0.0..1.0).contains(&self.dev_fraction) || self.dev_fraction == 0.0 {
            return Err(Error::Config {
                detail: format!("dev_fraction {} outside (0, 1)", self.dev_fraction),
            });
        }
        if let Some(ic) = &self.instruction {
            ic.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_bleu4: f64,
    pub alpha_enc: Option<f64>,
    pub alpha_dec: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights the returned model carries (max dev BLEU-4).
    pub best_epoch: usize,
    pub best_dev_bleu4: f64,
    pub stopped_early: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl TrainLog {
    /// Fixed-schema CSV: `epoch,loss,dev_bleu4,alpha_enc,alpha_dec,lr`.
    /// Stacks without fusion leave their α column empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,dev_bleu4,alpha_enc,alpha_dec,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.4},{},{},{:.8}\n",
                r.epoch,
                r.loss,
                r.dev_bleu4,
                fmt_opt(r.alpha_enc),
                fmt_opt(r.alpha_dec),
                r.lr
            ));
        }
        out
    }
}

/// Deterministic shuffle-split into a training corpus and dev pairs. Both
/// sides stay non-empty; dev pairs are scored with the training vocabulary.
pub fn split_corpus(
    corpus: &ParallelCorpus,
    dev_fraction: f64,
    seed: u64,
) -> Result<(ParallelCorpus, Vec<Pair>)> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Contract {
            op: "split_corpus",
            detail: format!("need at least 2 pairs to split, got {n}"),
        });
    }
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::Contract {
            op: "split_corpus",
            detail: format!("dev_fraction {dev_fraction} outside [0, 1)"),
        });
    }
    let n_dev = ((dev_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev_set: std::collections::BTreeSet<usize> = order[..n_dev].iter().copied().collect();
    let mut train_pairs = Vec::with_capacity(n - n_dev);
    let mut dev_pairs = Vec::with_capacity(n_dev);
    for (i, p) in corpus.pairs().iter().enumerate() {
        if dev_set.contains(&i) {
            dev_pairs.push(p.clone());
        } else {
            train_pairs.push(p.clone());
        }
    }
    Ok((ParallelCorpus::from_pairs(train_pairs)?, dev_pairs))
}

/// Precompute frozen teacher features for each pair's gloss side.
pub fn teacher_features<T: Scalar>(
    teacher: &Teacher<T>,
    pairs: &[Pair],
    vocab: &Vocab,
) -> Result<Vec<Tensor<T>>> {
    pairs
        .iter()
        .map(|p| teacher.encode_instruction(&vocab.encode(&p.gloss)))
        .collect()
}

/// Beam-decode one encoded source sentence into target tokens.
pub fn decode_ids<T: Scalar>(
    model: &TranslationModel<T>,
    teacher: Option<&Teacher<T>>,
    src_ids: &[usize],
    beam_size: usize,
    t_t: f64,
) -> Result<Vec<usize>> {
    let feats = match (&model.icfg, teacher) {
        (Some(_), Some(t)) => Some(t.encode_instruction(src_ids)?),
        (Some(_), None) => {
            return Err(Error::Contract {
                op: "decode",
                detail: "instruction model needs its teacher to decode".to_string(),
            })
        }
        _ => None,
    };
    let mut scorer = ModelScorer::new(model, src_ids, feats, t_t);
    let max_len = scorer.max_len();
    let result = beam_search(&mut scorer, beam_size, max_len)?;
    Ok(result.tokens)
}

/// Decode every pair's gloss side; returns hypothesis token sequences.
pub fn decode_corpus<T: Scalar>(
    model: &TranslationModel<T>,
    teacher: Option<&Teacher<T>>,
    pairs: &[Pair],
    vocab: &Vocab,
    beam_size: usize,
    t_t: f64,
) -> Result<Vec<Vec<String>>> {
    pairs
        .iter()
        .map(|p| {
            let ids = decode_ids(model, teacher, &vocab.encode(&p.gloss), beam_size, t_t)?;
            Ok(vocab.decode(&ids))
        })
        .collect()
}

/// Full metric suite of the model on `pairs` (references = text side).
pub fn evaluate_model<T: Scalar>(
    model: &TranslationModel<T>,
    teacher: Option<&Teacher<T>>,
    pairs: &[Pair],
    vocab: &Vocab,
    beam_size: usize,
    t_t: f64,
) -> Result<EvalResult> {
    let hyps = decode_corpus(model, teacher, pairs, vocab, beam_size, t_t)?;
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.text.clone()).collect();
    evaluate(&hyps, &refs)
}

fn dev_bleu4<T: Scalar>(
    model: &TranslationModel<T>,
    teacher: Option<&Teacher<T>>,
    pairs: &[Pair],
    vocab: &Vocab,
    t_t: f64,
) -> Result<f64> {
    let hyps = decode_corpus(model, teacher, pairs, vocab, 1, t_t)?;
    let refs: Vec<Vec<String>> = pairs.iter().map(|p| p.text.clone()).collect();
    Ok(bleu(&hyps, &refs, 4)?[3])
}

/// Train a model on `train_corpus`, tracking dev BLEU-4 per epoch with
/// greedy decoding. Returns the model restored to its best checkpoint and
/// the per-epoch log. Schedule α advances per epoch; learned α moves with
/// every optimizer step. A non-finite loss aborts with its location and
/// the α values in effect.
pub fn train<T: Scalar>(
    train_corpus: &ParallelCorpus,
    dev_pairs: &[Pair],
    teacher: Option<&Teacher<T>>,
    cfg: &TrainConfig,
) -> Result<(TranslationModel<T>, TrainLog)> {
    cfg.validate()?;
    if dev_pairs.is_empty() {
        return Err(Error::Contract {
            op: "train",
            detail: "dev set is empty".to_string(),
        });
    }
    let vocab = train_corpus.vocab();

    let mut model_cfg = cfg.model.clone();
    if model_cfg.vocab_size == 0 {
        model_cfg.vocab_size = vocab.len();
    } else if model_cfg.vocab_size != vocab.len() {
        return Err(Error::Config {
            detail: format!(
                "configured vocab_size {} but corpus vocabulary has {}",
                model_cfg.vocab_size,
                vocab.len()
            ),
        });
    }

    let mut icfg = cfg.instruction.clone();
    match (&mut icfg, teacher) {
        (Some(ic), Some(t)) => {
            if t.cfg.vocab_size != vocab.len() {
                return Err(Error::Config {
                    detail: format!(
                        "teacher vocab_size {} does not match corpus vocabulary {}",
                        t.cfg.vocab_size,
                        vocab.len()
                    ),
                });
            }
            ic.teacher_width = t.cfg.d_model;
        }
        (Some(_), None) => {
            return Err(Error::Contract {
                op: "train",
                detail: "instruction config given but no teacher".to_string(),
            })
        }
        (None, Some(_)) => {
            return Err(Error::Contract {
                op: "train",
                detail: "teacher given but instruction config is off".to_string(),
            })
        }
        (None, None) => {}
    }

    let mut model = TranslationModel::<T>::new(model_cfg, icfg, cfg.seed)?;

    let train_feats = match teacher {
        Some(t) => Some(teacher_features(t, train_corpus.pairs(), vocab)?),
        None => None,
    };

    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut step = 0u64;
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_bleu4: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best_store = model.store.clone();
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let t_t = epoch as f64;
        let batches = make_batches(
            train_corpus,
            cfg.batch_size,
            cfg.seed.wrapping_add(epoch as u64),
        );
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        let mut lr = cfg.lr;
        for (bi, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let mut total: Option<Var> = None;
            let batch_tokens = batch.target_tokens();
            for row in 0..batch.len() {
                let src: Vec<usize> = batch.src[row]
                    .iter()
                    .zip(&batch.src_mask[row])
                    .filter(|(_, &m)| m)
                    .map(|(&id, _)| id)
                    .collect();
                let real: usize = batch.tgt_mask[row].iter().filter(|&&m| m).count();
                let tgt_in = &batch.tgt_in[row][..real];
                let tgt_out = &batch.tgt_out[row][..real];
                let feats = train_feats
                    .as_ref()
                    .map(|f| &f[batch.pair_indices[row]]);
                let logits =
                    model.forward(&mut tape, &src, tgt_in, feats, t_t, true, &mut rng)?;
                let term = model.loss(&mut tape, logits, tgt_out)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, term)?,
                    None => term,
                });
            }
            let total = total.expect("batches are non-empty");
            let loss = tape.scale(total, T::from_f64(1.0 / batch_tokens.max(1) as f64));
            let loss_val = tape.value(loss).item().as_f64();
            if !loss_val.is_finite() {
                let (alpha_enc, alpha_dec) = model.alpha_report(t_t)?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    alpha_enc,
                    alpha_dec,
                });
            }
            tape.backward(loss, &mut model.store)?;
            step += 1;
            lr = inverse_sqrt_lr(cfg.lr, cfg.warmup_steps as u64, step);
            adam.step(&mut model.store, lr)?;
            model.store.zero_grads();
            loss_sum += loss_val * batch_tokens as f64;
            token_sum += batch_tokens;
        }

        let train_loss = loss_sum / token_sum.max(1) as f64;
        let bleu4 = dev_bleu4(&model, teacher, dev_pairs, vocab, t_t)?;
        let (alpha_enc, alpha_dec) = model.alpha_report(t_t)?;
        log.epochs.push(EpochRecord {
            epoch,
            loss: train_loss,
            dev_bleu4: bleu4,
            alpha_enc,
            alpha_dec,
            lr,
        });

        if bleu4 > log.best_dev_bleu4 {
            log.best_dev_bleu4 = bleu4;
            log.best_epoch = epoch;
            best_store = model.store.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    let model = TranslationModel::from_store(model.cfg, model.icfg, best_store)?;
    Ok((model, log))
}
