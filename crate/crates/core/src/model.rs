//! The gloss-to-text translation model: embeddings, encoder and decoder
//! stacks, optional instruction fusion, output projection, and the
//! label-smoothed loss. One sentence pair per forward pass; batching is
//! done by summing losses over a batch on a shared tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    attn_handles, causal_mask, decoder_layer_forward, encoder_layer_forward, ffn_handles,
    ln_handles, positional_encoding, DecLayerHandles, Dropout, EncLayerHandles, ModelConfig,
};
use crate::error::{Error, Result};
use crate::instruction::{
    alpha_value, instr_handles, learned_raw_init, AlphaStrategy, InstructionConfig,
};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// α vars for one forward pass, one entry per layer (entries may alias the
/// same tape node when α is shared across a stack).
#[derive(Debug, Clone, Default)]
pub struct StackAlphas {
    pub enc: Vec<Var>,
    pub dec: Vec<Var>,
}

#[derive(Debug, Clone)]
struct Wires {
    src_emb: ParamId,
    tgt_emb: ParamId,
    out_w: Option<ParamId>,
    out_b: ParamId,
    instr_proj: Option<(ParamId, ParamId)>,
    enc: Vec<EncLayerHandles>,
    dec: Vec<DecLayerHandles>,
    alpha_enc: Vec<ParamId>,
    alpha_dec: Vec<ParamId>,
}

pub struct TranslationModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub icfg: Option<InstructionConfig>,
    pub store: ParamStore<T>,
    wires: Wires,
}

fn tensor_id<T: Scalar>(
    store: &mut ParamStore<T>,
    name: String,
    init: Option<Tensor<T>>,
) -> Result<ParamId> {
    match init {
        Some(t) => store.add(name, t),
        None => store.lookup(&name).ok_or(Error::MissingTensor { name }),
    }
}

impl<T: Scalar> TranslationModel<T> {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: ModelConfig, icfg: Option<InstructionConfig>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let wires = Self::wire(&cfg, icfg.as_ref(), &mut store, Some(&mut rng))?;
        Ok(TranslationModel {
            cfg,
            icfg,
            store,
            wires,
        })
    }

    /// Re-attach handles to an existing store (e.g. loaded from disk). The
    /// store must contain exactly the tensors this configuration creates.
    pub fn from_store(
        cfg: ModelConfig,
        icfg: Option<InstructionConfig>,
        mut store: ParamStore<T>,
    ) -> Result<Self> {
        let wires = Self::wire(&cfg, icfg.as_ref(), &mut store, None)?;
        Ok(TranslationModel {
            cfg,
            icfg,
            store,
            wires,
        })
    }

    /// Same architecture and weights at a different precision.
    pub fn cast<U: Scalar>(&self) -> Result<TranslationModel<U>> {
        TranslationModel::from_store(self.cfg.clone(), self.icfg.clone(), self.store.cast())
    }

    fn wire(
        cfg: &ModelConfig,
        icfg: Option<&InstructionConfig>,
        store: &mut ParamStore<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Wires> {
        cfg.validate()?;
        if let Some(ic) = icfg {
            ic.validate()?;
        }
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        let init = rng.is_some();

        let emb = |store: &mut ParamStore<T>, name: &str, rng: Option<&mut ChaCha8Rng>| {
            tensor_id(
                store,
                name.to_string(),
                rng.map(|r| Tensor::xavier(v, d, r)),
            )
        };
        let (src_emb, tgt_emb) = if cfg.share_embeddings {
            let id = emb(store, "emb.table", rng.as_deref_mut())?;
            (id, id)
        } else {
            let s = emb(store, "emb.src.table", rng.as_deref_mut())?;
            let t = emb(store, "emb.tgt.table", rng.as_deref_mut())?;
            (s, t)
        };

        let out_w = if cfg.tie_output_projection {
            None
        } else {
            Some(tensor_id(
                store,
                "out.w".to_string(),
                rng.as_deref_mut().map(|r| Tensor::xavier(d, v, r)),
            )?)
        };
        let out_b = tensor_id(
            store,
            "out.b".to_string(),
            rng.as_deref_mut().map(|_| Tensor::zeros(vec![v])),
        )?;

        let instr_proj = match icfg {
            Some(ic) if ic.teacher_width != 0 && ic.teacher_width != d => {
                let w = tensor_id(
                    store,
                    "instr.proj.w".to_string(),
                    rng.as_deref_mut()
                        .map(|r| Tensor::xavier(ic.teacher_width, d, r)),
                )?;
                let b = tensor_id(
                    store,
                    "instr.proj.b".to_string(),
                    rng.as_deref_mut().map(|_| Tensor::zeros(vec![d])),
                )?;
                Some((w, b))
            }
            _ => None,
        };

        let hidden = icfg.map(|ic| ic.adapter_hidden(d)).unwrap_or(d);
        let mut enc = Vec::with_capacity(cfg.n_enc_layers);
        for i in 0..cfg.n_enc_layers {
            let p = format!("enc.{i}");
            let layer = EncLayerHandles {
                self_attn: attn_handles(store, &format!("{p}.self"), d, d, rng.as_deref_mut())?,
                ln1: ln_handles(store, &format!("{p}.ln1"), d, init)?,
                ffn: ffn_handles(store, &format!("{p}.ffn"), d, cfg.d_ff, d, rng.as_deref_mut())?,
                ln2: ln_handles(store, &format!("{p}.ln2"), d, init)?,
                instr: match icfg {
                    Some(ic) if ic.fuse_encoder => Some(instr_handles(
                        store,
                        &format!("{p}.instr"),
                        d,
                        hidden,
                        rng.as_deref_mut(),
                    )?),
                    _ => None,
                },
            };
            enc.push(layer);
        }

        let mut dec = Vec::with_capacity(cfg.n_dec_layers);
        for i in 0..cfg.n_dec_layers {
            let p = format!("dec.{i}");
            let layer = DecLayerHandles {
                self_attn: attn_handles(store, &format!("{p}.self"), d, d, rng.as_deref_mut())?,
                ln1: ln_handles(store, &format!("{p}.ln1"), d, init)?,
                cross_attn: attn_handles(store, &format!("{p}.cross"), d, d, rng.as_deref_mut())?,
                ln2: ln_handles(store, &format!("{p}.ln2"), d, init)?,
                ffn: ffn_handles(store, &format!("{p}.ffn"), d, cfg.d_ff, d, rng.as_deref_mut())?,
                ln3: ln_handles(store, &format!("{p}.ln3"), d, init)?,
                instr: match icfg {
                    Some(ic) if ic.fuse_decoder => Some(instr_handles(
                        store,
                        &format!("{p}.instr"),
                        d,
                        hidden,
                        rng.as_deref_mut(),
                    )?),
                    _ => None,
                },
            };
            dec.push(layer);
        }

        let mut alpha_enc = Vec::new();
        let mut alpha_dec = Vec::new();
        if let Some(ic) = icfg {
            if ic.alpha.strategy == AlphaStrategy::Learned {
                let raw = T::from_f64(learned_raw_init(ic.alpha.init));
                let mk = |store: &mut ParamStore<T>, name: String| {
                    tensor_id(
                        store,
                        name,
                        init.then(|| Tensor::new(vec![1], vec![raw])),
                    )
                };
                if ic.fuse_encoder {
                    if ic.per_layer_alpha {
                        for i in 0..cfg.n_enc_layers {
                            alpha_enc.push(mk(store, format!("alpha.enc.l{i}.raw"))?);
                        }
                    } else {
                        alpha_enc.push(mk(store, "alpha.enc.raw".to_string())?);
                    }
                }
                if ic.fuse_decoder {
                    if ic.per_layer_alpha {
                        for i in 0..cfg.n_dec_layers {
                            alpha_dec.push(mk(store, format!("alpha.dec.l{i}.raw"))?);
                        }
                    } else {
                        alpha_dec.push(mk(store, "alpha.dec.raw".to_string())?);
                    }
                }
            }
        }

        Ok(Wires {
            src_emb,
            tgt_emb,
            out_w,
            out_b,
            instr_proj,
            enc,
            dec,
            alpha_enc,
            alpha_dec,
        })
    }

    /// Per-layer α vars for one pass at (fractional) epoch `t_t`. Scheduled
    /// strategies become constants; the learned strategy goes through
    /// sigmoid on the tape so gradient reaches the raw parameter.
    pub fn stack_alphas(&self, tape: &mut Tape<T>, t_t: f64) -> Result<StackAlphas> {
        let ic = match &self.icfg {
            Some(ic) => ic,
            None => return Ok(StackAlphas::default()),
        };
        let mut out = StackAlphas::default();
        if ic.alpha.strategy == AlphaStrategy::Learned {
            let expand = |tape: &mut Tape<T>, raws: &[ParamId], n: usize| -> Vec<Var> {
                if raws.is_empty() {
                    return Vec::new();
                }
                if raws.len() == n {
                    raws.iter()
                        .map(|&id| {
                            let r = tape.param(&self.store, id);
                            tape.sigmoid(r)
                        })
                        .collect()
                } else {
                    let r = tape.param(&self.store, raws[0]);
                    let a = tape.sigmoid(r);
                    vec![a; n]
                }
            };
            out.enc = expand(tape, &self.wires.alpha_enc, self.cfg.n_enc_layers);
            out.dec = expand(tape, &self.wires.alpha_dec, self.cfg.n_dec_layers);
        } else {
            let a = T::from_f64(alpha_value(&ic.alpha, t_t)?);
            if ic.fuse_encoder {
                let v = tape.scalar(a);
                out.enc = vec![v; self.cfg.n_enc_layers];
            }
            if ic.fuse_decoder {
                let v = tape.scalar(a);
                out.dec = vec![v; self.cfg.n_dec_layers];
            }
        }
        Ok(out)
    }

    /// Current α per stack for logging: scheduled value at `t_t`, or the
    /// mean of the learned α(s). `None` for a stack without fusion.
    pub fn alpha_report(&self, t_t: f64) -> Result<(Option<f64>, Option<f64>)> {
        let ic = match &self.icfg {
            Some(ic) => ic,
            None => return Ok((None, None)),
        };
        let read = |raws: &[ParamId]| -> Option<f64> {
            if raws.is_empty() {
                return None;
            }
            let sum: f64 = raws
                .iter()
                .map(|&id| crate::instruction::learned_alpha(self.store.get(id).data()[0].as_f64()))
                .sum();
            Some(sum / raws.len() as f64)
        };
        if ic.alpha.strategy == AlphaStrategy::Learned {
            Ok((read(&self.wires.alpha_enc), read(&self.wires.alpha_dec)))
        } else {
            let a = alpha_value(&ic.alpha, t_t)?;
            Ok((
                ic.fuse_encoder.then_some(a),
                ic.fuse_decoder.then_some(a),
            ))
        }
    }

    fn check_len(&self, side: &str, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Contract {
                op: "forward",
                detail: format!("{side} sequence is empty"),
            });
        }
        if len > self.cfg.max_seq_len {
            return Err(Error::Contract {
                op: "forward",
                detail: format!(
                    "{side} length {len} exceeds max_seq_len {}",
                    self.cfg.max_seq_len
                ),
            });
        }
        Ok(())
    }

    fn embed(
        &self,
        tape: &mut Tape<T>,
        table: ParamId,
        ids: &[usize],
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        let t = tape.param(&self.store, table);
        let e = tape.embedding(t, ids)?;
        let e = tape.scale(e, T::from_f64((self.cfg.d_model as f64).sqrt()));
        let pe = tape.constant(positional_encoding(ids.len(), self.cfg.d_model));
        let e = tape.add(e, pe)?;
        drop.apply(tape, e)
    }

    /// Teacher features as a tape var at model width: a frozen constant,
    /// run through the trained projection when widths differ.
    pub fn instruction_var(&self, tape: &mut Tape<T>, h_i: &Tensor<T>) -> Result<Var> {
        let v = tape.constant(h_i.clone());
        match self.wires.instr_proj {
            Some((w, b)) => {
                let wv = tape.param(&self.store, w);
                let bv = tape.param(&self.store, b);
                let p = tape.matmul(v, wv)?;
                tape.add_row(p, bv)
            }
            None => Ok(v),
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        src: &[usize],
        h_i: Option<Var>,
        alphas: &StackAlphas,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        self.check_len("source", src.len())?;
        let mut x = self.embed(tape, self.wires.src_emb, src, drop)?;
        for (i, layer) in self.wires.enc.iter().enumerate() {
            let instr = match (h_i, layer.instr.is_some()) {
                (Some(h), true) => Some((h, alphas.enc[i])),
                _ => None,
            };
            x = encoder_layer_forward(tape, &self.store, layer, &self.cfg, x, instr, drop)?;
        }
        Ok(x)
    }

    pub fn decode(
        &self,
        tape: &mut Tape<T>,
        tgt_in: &[usize],
        enc_out: Var,
        h_i: Option<Var>,
        alphas: &StackAlphas,
        drop: &mut Dropout<'_>,
    ) -> Result<Var> {
        self.check_len("target", tgt_in.len())?;
        let mask = causal_mask(tgt_in.len());
        let mut s = self.embed(tape, self.wires.tgt_emb, tgt_in, drop)?;
        for (i, layer) in self.wires.dec.iter().enumerate() {
            let instr = match (h_i, layer.instr.is_some()) {
                (Some(h), true) => Some((h, alphas.dec[i])),
                _ => None,
            };
            s = decoder_layer_forward(
                tape,
                &self.store,
                layer,
                &self.cfg,
                s,
                enc_out,
                &mask,
                instr,
                drop,
            )?;
        }
        match self.wires.out_w {
            Some(w) => {
                let wv = tape.param(&self.store, w);
                let b = tape.param(&self.store, self.wires.out_b);
                let logits = tape.matmul(s, wv)?;
                tape.add_row(logits, b)
            }
            None => {
                let emb = tape.param(&self.store, self.wires.tgt_emb);
                let et = tape.transpose(emb);
                let b = tape.param(&self.store, self.wires.out_b);
                let logits = tape.matmul(s, et)?;
                tape.add_row(logits, b)
            }
        }
    }

    /// Full pass: source and shifted target in, logits `[tgt_len, vocab]`
    /// out. Instruction models require teacher features and vanilla models
    /// reject them, so miswiring fails loudly.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        src: &[usize],
        tgt_in: &[usize],
        teacher: Option<&Tensor<T>>,
        t_t: f64,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        match (&self.icfg, teacher) {
            (Some(_), None) => {
                return Err(Error::Contract {
                    op: "forward",
                    detail: "instruction model called without teacher features".to_string(),
                })
            }
            (None, Some(_)) => {
                return Err(Error::Contract {
                    op: "forward",
                    detail: "vanilla model called with teacher features".to_string(),
                })
            }
            _ => {}
        }
        let mut drop = Dropout {
            rate: if train { self.cfg.dropout_rate } else { 0.0 },
            train,
            rng,
        };
        let alphas = self.stack_alphas(tape, t_t)?;
        let h_i = match teacher {
            Some(t) => Some(self.instruction_var(tape, t)?),
            None => None,
        };
        let enc_out = self.encode(tape, src, h_i, &alphas, &mut drop)?;
        self.decode(tape, tgt_in, enc_out, h_i, &alphas, &mut drop)
    }

    /// Label-smoothed cross-entropy, summed over positions (the caller
    /// normalizes by batch token count). The smoothed target distribution
    /// is (1−ε)·one_hot + ε·uniform over the full vocabulary.
    pub fn loss(&self, tape: &mut Tape<T>, logits: Var, tgt_out: &[usize]) -> Result<Var> {
        let (t, v) = tape.value(logits).dims2();
        if t != tgt_out.len() {
            return Err(Error::ShapeMismatch {
                op: "loss",
                axis: 0,
                left: t,
                right: tgt_out.len(),
            });
        }
        let eps = self.cfg.label_smoothing;
        let fill = eps / v as f64;
        let mut q = vec![T::from_f64(fill); t * v];
        for (r, &id) in tgt_out.iter().enumerate() {
            if id >= v {
                return Err(Error::Contract {
                    op: "loss",
                    detail: format!("target id {id} outside vocab of {v}"),
                });
            }
            q[r * v + id] += T::from_f64(1.0 - eps);
        }
        let logp = tape.log_softmax_rows(logits)?;
        let qv = tape.constant(Tensor::new(vec![t, v], q));
        let prod = tape.mul(logp, qv)?;
        let s = tape.sum(prod);
        Ok(tape.scale(s, T::from_f64(-1.0)))
    }
}
