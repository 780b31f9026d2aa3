//! Frozen teacher: a small masked-language-model encoder pretrained on the
//! text side of the corpus. Its final hidden states are the instruction
//! features H_I. After pretraining it is never updated again; the student
//! reads its features as constants, so its weight fingerprint must be
//! byte-identical before and after any translation training run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    attn_handles, encoder_layer_forward, ffn_handles, ln_handles, positional_encoding, Dropout,
    EncLayerHandles, ModelConfig,
};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::UNK;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    /// Joint vocabulary size; filled in from the corpus when 0.
    pub vocab_size: usize,
    pub dropout_rate: f64,
    /// Probability of masking each token during pretraining. Masked inputs
    /// are replaced with `<unk>`; at least one position per sentence is
    /// always masked so every sentence contributes loss.
    pub mask_prob: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            d_model: 32,
            d_ff: 64,
            n_heads: 2,
            n_layers: 2,
            max_seq_len: 64,
            vocab_size: 0,
            dropout_rate: 0.1,
            mask_prob: 0.15,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        self.as_model_config().validate()?;
        if !(0.0..1.0).contains(&self.mask_prob) || self.mask_prob == 0.0 {
            return Err(Error::Config {
                detail: format!("mask_prob {} outside (0, 1)", self.mask_prob),
            });
        }
        Ok(())
    }

    fn as_model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            d_ff: self.d_ff,
            n_heads: self.n_heads,
            n_enc_layers: self.n_layers,
            n_dec_layers: 0,
            dropout_rate: self.dropout_rate,
            label_smoothing: 0.0,
            max_seq_len: self.max_seq_len,
            vocab_size: self.vocab_size,
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// What pretraining achieved, reported next to the saved weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    /// Fraction of masked positions recovered exactly on a fixed-seed
    /// evaluation pass over the training sentences.
    pub masked_accuracy: f64,
    pub masked_positions: usize,
    /// 1/vocab_size, the accuracy of uniform guessing.
    pub chance_accuracy: f64,
}

struct TeacherWires {
    emb: ParamId,
    enc: Vec<EncLayerHandles>,
    mlm_w: ParamId,
    mlm_b: ParamId,
}

pub struct Teacher<T: Scalar> {
    pub cfg: TeacherConfig,
    pub store: ParamStore<T>,
    wires: TeacherWires,
}

impl<T: Scalar> Teacher<T> {
    pub fn new(cfg: TeacherConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let wires = Self::wire(&cfg, &mut store, Some(&mut rng))?;
        Ok(Teacher { cfg, store, wires })
    }

    pub fn from_store(cfg: TeacherConfig, mut store: ParamStore<T>) -> Result<Self> {
        cfg.validate()?;
        let wires = Self::wire(&cfg, &mut store, None)?;
        Ok(Teacher { cfg, store, wires })
    }

    fn wire(
        cfg: &TeacherConfig,
        store: &mut ParamStore<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TeacherWires> {
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        let init = rng.is_some();
        let tensor = |store: &mut ParamStore<T>, name: &str, t: Option<Tensor<T>>| match t {
            Some(t) => store.add(name.to_string(), t),
            None => store.lookup(name).ok_or_else(|| Error::MissingTensor {
                name: name.to_string(),
            }),
        };
        let emb = tensor(
            store,
            "emb.table",
            rng.as_deref_mut().map(|r| Tensor::xavier(v, d, r)),
        )?;
        let mut enc = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("enc.{i}");
            enc.push(EncLayerHandles {
                self_attn: attn_handles(store, &format!("{p}.self"), d, d, rng.as_deref_mut())?,
                ln1: ln_handles(store, &format!("{p}.ln1"), d, init)?,
                ffn: ffn_handles(store, &format!("{p}.ffn"), d, cfg.d_ff, d, rng.as_deref_mut())?,
                ln2: ln_handles(store, &format!("{p}.ln2"), d, init)?,
                instr: None,
            });
        }
        let mlm_w = tensor(
            store,
            "mlm.w",
            rng.as_deref_mut().map(|r| Tensor::xavier(d, v, r)),
        )?;
        let mlm_b = tensor(
            store,
            "mlm.b",
            rng.as_deref_mut().map(|_| Tensor::zeros(vec![v])),
        )?;
        Ok(TeacherWires {
            emb,
            enc,
            mlm_w,
            mlm_b,
        })
    }

    fn hidden(
        &self,
        tape: &mut Tape<T>,
        ids: &[usize],
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        if ids.is_empty() || ids.len() > self.cfg.max_seq_len {
            return Err(Error::Contract {
                op: "teacher",
                detail: format!(
                    "sequence length {} outside 1..={}",
                    ids.len(),
                    self.cfg.max_seq_len
                ),
            });
        }
        let mcfg = self.cfg.as_model_config();
        let table = tape.param(&self.store, self.wires.emb);
        let e = tape.embedding(table, ids)?;
        let e = tape.scale(e, T::from_f64((self.cfg.d_model as f64).sqrt()));
        let pe = tape.constant(positional_encoding(ids.len(), self.cfg.d_model));
        let mut x = tape.add(e, pe)?;
        x = drop.apply(tape, x)?;
        for layer in &self.wires.enc {
            x = encoder_layer_forward(tape, &self.store, layer, &mcfg, x, None, drop)?;
        }
        Ok(x)
    }

    fn mlm_logits(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var> {
        let w = tape.param(&self.store, self.wires.mlm_w);
        let b = tape.param(&self.store, self.wires.mlm_b);
        let l = tape.matmul(hidden, w)?;
        tape.add_row(l, b)
    }

    /// H_I for one source sentence: final hidden states `[len, d_model]`.
    /// Deterministic (no dropout) and gradient-free; the student treats the
    /// result as a constant.
    pub fn encode_instruction(&self, ids: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut drop = Dropout {
            rate: 0.0,
            train: false,
            rng: &mut rng,
        };
        let h = self.hidden(&mut tape, ids, &mut drop)?;
        Ok(tape.value(h).clone())
    }

    /// Masked-language-model pretraining over encoded sentences. Returns
    /// the frozen teacher and a report with the masked-token accuracy of
    /// the final weights.
    pub fn pretrain(
        cfg: TeacherConfig,
        sentences: &[Vec<usize>],
        pre: &PretrainConfig,
    ) -> Result<(Teacher<T>, PretrainReport)> {
        if sentences.is_empty() {
            return Err(Error::EmptyCorpus {
                path: "<pretraining sentences>".to_string(),
            });
        }
        if pre.epochs == 0 || pre.batch_size == 0 {
            return Err(Error::Config {
                detail: "pretraining needs epochs >= 1 and batch_size >= 1".to_string(),
            });
        }
        let teacher = Teacher::new(cfg, pre.seed)?;
        teacher.run_pretrain(sentences, pre)
    }

    fn run_pretrain(
        mut self,
        sentences: &[Vec<usize>],
        pre: &PretrainConfig,
    ) -> Result<(Teacher<T>, PretrainReport)> {
        let mut rng = ChaCha8Rng::seed_from_u64(pre.seed.wrapping_add(1));
        let mut adam = Adam::new(&self.store, AdamConfig::default());
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        let mut final_loss = f64::NAN;
        for _epoch in 0..pre.epochs {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut epoch_tokens = 0usize;
            for chunk in order.chunks(pre.batch_size) {
                let mut tape = Tape::new();
                let mut batch_terms: Option<Var> = None;
                let mut batch_masked = 0usize;
                for &si in chunk {
                    let sent = &sentences[si];
                    let (masked_ids, mask) = mask_sentence(sent, self.cfg.mask_prob, &mut rng);
                    let n_masked = mask.iter().filter(|m| **m).count();
                    let mut drop = Dropout {
                        rate: self.cfg.dropout_rate,
                        train: true,
                        rng: &mut rng,
                    };
                    let h = self.hidden(&mut tape, &masked_ids, &mut drop)?;
                    let logits = self.mlm_logits(&mut tape, h)?;
                    let term = masked_ce(&mut tape, logits, sent, &mask)?;
                    batch_masked += n_masked;
                    batch_terms = Some(match batch_terms {
                        Some(acc) => tape.add(acc, term)?,
                        None => term,
                    });
                }
                let total = batch_terms.expect("chunks are non-empty");
                let loss = tape.scale(total, T::from_f64(1.0 / batch_masked.max(1) as f64));
                let loss_val = tape.value(loss).item().as_f64();
                tape.backward(loss, &mut self.store)?;
                adam.step(&mut self.store, pre.lr)?;
                self.store.zero_grads();
                epoch_loss += loss_val * batch_masked as f64;
                epoch_tokens += batch_masked;
            }
            final_loss = epoch_loss / epoch_tokens.max(1) as f64;
        }

        let (masked_accuracy, masked_positions) = self.masked_accuracy(sentences, pre.seed)?;
        let report = PretrainReport {
            epochs: pre.epochs,
            final_loss,
            masked_accuracy,
            masked_positions,
            chance_accuracy: 1.0 / self.cfg.vocab_size as f64,
        };
        Ok((self, report))
    }

    /// Accuracy of argmax recovery at masked positions, with a fixed-seed
    /// masking pass and no dropout. Pure function of weights + sentences.
    pub fn masked_accuracy(&self, sentences: &[Vec<usize>], seed: u64) -> Result<(f64, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let mut correct = 0usize;
        let mut total = 0usize;
        for sent in sentences {
            let (masked_ids, mask) = mask_sentence(sent, self.cfg.mask_prob, &mut rng);
            let mut tape = Tape::new();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let mut drop = Dropout {
                rate: 0.0,
                train: false,
                rng: &mut drop_rng,
            };
            let h = self.hidden(&mut tape, &masked_ids, &mut drop)?;
            let logits = self.mlm_logits(&mut tape, h)?;
            let lv = tape.value(logits);
            let v = self.cfg.vocab_size;
            for (pos, flag) in mask.iter().enumerate() {
                if !flag {
                    continue;
                }
                let row = &lv.data()[pos * v..(pos + 1) * v];
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("non-empty row");
                total += 1;
                if argmax == sent[pos] {
                    correct += 1;
                }
            }
        }
        Ok((correct as f64 / total.max(1) as f64, total))
    }

    pub fn fingerprint(&self) -> String {
        crate::weights::weights_fingerprint(&self.store)
    }
}

/// Mask each position with probability `mask_prob` (inputs become `<unk>`);
/// at least one position is always masked.
fn mask_sentence(
    sent: &[usize],
    mask_prob: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<bool>) {
    let mut ids = sent.to_vec();
    let mut mask = vec![false; sent.len()];
    for i in 0..sent.len() {
        if rng.gen_bool(mask_prob) {
            mask[i] = true;
            ids[i] = UNK;
        }
    }
    if !mask.iter().any(|m| *m) {
        let i = rng.gen_range(0..sent.len());
        mask[i] = true;
        ids[i] = UNK;
    }
    (ids, mask)
}

/// Cross-entropy summed over masked positions only.
fn masked_ce<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
) -> Result<Var> {
    let (t, v) = tape.value(logits).dims2();
    if t != targets.len() || t != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "masked_ce",
            axis: 0,
            left: t,
            right: targets.len(),
        });
    }
    let mut q = vec![T::zero(); t * v];
    for (r, (&id, &m)) in targets.iter().zip(mask).enumerate() {
        if m {
            q[r * v + id] = T::one();
        }
    }
    let logp = tape.log_softmax_rows(logits)?;
    let qv = tape.constant(Tensor::new(vec![t, v], q));
    let prod = tape.mul(logp, qv)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, T::from_f64(-1.0)))
}
