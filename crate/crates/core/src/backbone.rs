//! Transformer encoder/decoder building blocks.
//!
//! Layers are free functions over a [`Tape`] plus handle structs naming
//! their parameters in a [`ParamStore`]; the translation model and the
//! frozen teacher both build on them. Residual order is post-norm: each
//! sublayer output is dropped out, added to its input, then normalized.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instruction;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub max_seq_len: usize,
    /// Joint vocabulary size; filled in from the corpus when 0.
    pub vocab_size: usize,
    /// One embedding table for both sides (same-language gloss/text pairs).
    pub share_embeddings: bool,
    /// Tie the output projection to the target embedding table.
    pub tie_output_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            d_ff: 256,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            dropout_rate: 0.45,
            label_smoothing: 0.3,
            max_seq_len: 64,
            vocab_size: 0,
            share_embeddings: true,
            tie_output_projection: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config {
                detail: format!(
                    "d_model {} must be a positive multiple of n_heads {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config {
                detail: format!("dropout_rate {} outside [0, 1)", self.dropout_rate),
            });
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config {
                detail: format!("label_smoothing {} outside [0, 1)", self.label_smoothing),
            });
        }
        if self.vocab_size == 0 {
            return Err(Error::Config {
                detail: "vocab_size is unset (needs a corpus)".to_string(),
            });
        }
        if self.d_ff == 0 || self.max_seq_len == 0 {
            return Err(Error::Config {
                detail: "d_ff and max_seq_len must be positive".to_string(),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Sinusoidal position table: PE[p, 2i] = sin(p / 10000^(2i/d)),
/// PE[p, 2i+1] = cos(same). Pure function of its arguments.
pub fn positional_encoding<T: Scalar>(seq_len: usize, d_model: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(seq_len * d_model);
    for p in 0..seq_len {
        for j in 0..d_model {
            let i = j / 2;
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data.push(T::from_f64(if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }));
        }
    }
    Tensor::new(vec![seq_len, d_model], data)
}

/// Inverted-scaling dropout wired to one RNG. Does nothing at eval time,
/// so two inference passes are identical.
pub struct Dropout<'a> {
    pub rate: f64,
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if !self.train || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<bool> = (0..tape.value(x).numel())
            .map(|_| self.rng.gen_bool(keep))
            .collect();
        tape.dropout(x, &mask, keep)
    }
}

// ── parameter handles ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct AttnHandles {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnHandles {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LnHandles {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncLayerHandles {
    pub self_attn: AttnHandles,
    pub ln1: LnHandles,
    pub ffn: FfnHandles,
    pub ln2: LnHandles,
    pub instr: Option<instruction::InstrHandles>,
}

#[derive(Debug, Clone)]
pub struct DecLayerHandles {
    pub self_attn: AttnHandles,
    pub ln1: LnHandles,
    pub cross_attn: AttnHandles,
    pub ln2: LnHandles,
    pub ffn: FfnHandles,
    pub ln3: LnHandles,
    pub instr: Option<instruction::InstrHandles>,
}

/// Create or look up the parameters of one attention block. With an RNG the
/// tensors are initialized and added; without one they must already exist.
pub fn attn_handles<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_in: usize,
    d_model: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<AttnHandles> {
    let names = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];
    let mut ids = Vec::with_capacity(names.len());
    match rng {
        Some(rng) => {
            for n in names {
                let full = format!("{prefix}.{n}");
                let t = match n {
                    "wq" => Tensor::xavier(d_model, d_model, rng),
                    "wk" | "wv" => Tensor::xavier(d_in, d_model, rng),
                    "wo" => Tensor::xavier(d_model, d_model, rng),
                    _ => Tensor::zeros(vec![d_model]),
                };
                ids.push(store.add(full, t)?);
            }
        }
        None => {
            for n in names {
                let full = format!("{prefix}.{n}");
                ids.push(store.lookup(&full).ok_or(Error::MissingTensor { name: full })?);
            }
        }
    }
    Ok(AttnHandles {
        wq: ids[0],
        bq: ids[1],
        wk: ids[2],
        bk: ids[3],
        wv: ids[4],
        bv: ids[5],
        wo: ids[6],
        bo: ids[7],
    })
}

pub fn ffn_handles<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_in: usize,
    d_hidden: usize,
    d_out: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<FfnHandles> {
    let make = |store: &mut ParamStore<T>, name: String, t: Option<Tensor<T>>| match t {
        Some(t) => store.add(name, t),
        None => store
            .lookup(&name)
            .ok_or(Error::MissingTensor { name }),
    };
    match rng {
        Some(rng) => Ok(FfnHandles {
            w1: make(
                store,
                format!("{prefix}.w1"),
                Some(Tensor::xavier(d_in, d_hidden, rng)),
            )?,
            b1: make(store, format!("{prefix}.b1"), Some(Tensor::zeros(vec![d_hidden])))?,
            w2: make(
                store,
                format!("{prefix}.w2"),
                Some(Tensor::xavier(d_hidden, d_out, rng)),
            )?,
            b2: make(store, format!("{prefix}.b2"), Some(Tensor::zeros(vec![d_out])))?,
        }),
        None => Ok(FfnHandles {
            w1: make(store, format!("{prefix}.w1"), None)?,
            b1: make(store, format!("{prefix}.b1"), None)?,
            w2: make(store, format!("{prefix}.w2"), None)?,
            b2: make(store, format!("{prefix}.b2"), None)?,
        }),
    }
}

pub fn ln_handles<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d: usize,
    init: bool,
) -> Result<LnHandles> {
    let gname = format!("{prefix}.g");
    let bname = format!("{prefix}.b");
    if init {
        Ok(LnHandles {
            g: store.add(gname, Tensor::new(vec![d], vec![T::one(); d]))?,
            b: store.add(bname, Tensor::zeros(vec![d]))?,
        })
    } else {
        Ok(LnHandles {
            g: store.lookup(&gname).ok_or(Error::MissingTensor { name: gname })?,
            b: store.lookup(&bname).ok_or(Error::MissingTensor { name: bname })?,
        })
    }
}

// ── forward pieces ──────────────────────────────────────────────────────

/// Scaled dot-product attention with `n_heads` heads.
///
/// Queries come from `q_in` `[Tq, d]`, keys and values from `kv_in`
/// `[Tk, d_kv]`. `mask`, when present, is row-major `[Tq × Tk]` with `true`
/// meaning "block this connection" (scores filled with −inf before the
/// softmax; every query must keep at least one visible key).
pub fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    h: &AttnHandles,
    n_heads: usize,
    q_in: Var,
    kv_in: Var,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let d_model = store.get(h.wq).shape()[1];
    let dh = d_model / n_heads;
    let tq = tape.value(q_in).dims2().0;
    let tk = tape.value(kv_in).dims2().0;
    if let Some(m) = mask {
        if m.len() != tq * tk {
            return Err(Error::ShapeMismatch {
                op: "multi_head_attention",
                axis: 0,
                left: m.len(),
                right: tq * tk,
            });
        }
    }

    let wq = tape.param(store, h.wq);
    let bq = tape.param(store, h.bq);
    let wk = tape.param(store, h.wk);
    let bk = tape.param(store, h.bk);
    let wv = tape.param(store, h.wv);
    let bv = tape.param(store, h.bv);
    let wo = tape.param(store, h.wo);
    let bo = tape.param(store, h.bo);

    let q = tape.matmul(q_in, wq)?;
    let q = tape.add_row(q, bq)?;
    let k = tape.matmul(kv_in, wk)?;
    let k = tape.add_row(k, bk)?;
    let v = tape.matmul(kv_in, wv)?;
    let v = tape.add_row(v, bv)?;

    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let qh = tape.slice_cols(q, head * dh, dh)?;
        let kh = tape.slice_cols(k, head * dh, dh)?;
        let vh = tape.slice_cols(v, head * dh, dh)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let scores = match mask {
            Some(m) => tape.masked_fill(scores, m, T::neg_infinity())?,
            None => scores,
        };
        let weights = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let cat = tape.concat_cols(&heads)?;
    let out = tape.matmul(cat, wo)?;
    tape.add_row(out, bo)
}

/// Row-major causal mask for a length-`t` sequence: position i may attend
/// to positions 0..=i only.
pub fn causal_mask(t: usize) -> Vec<bool> {
    let mut m = vec![false; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            m[i * t + j] = true;
        }
    }
    m
}

fn layer_norm_affine<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ln: &LnHandles,
    x: Var,
) -> Result<Var> {
    let g = tape.param(store, ln.g);
    let b = tape.param(store, ln.b);
    let n = tape.layer_norm_rows(x, T::from_f64(LN_EPS));
    let n = tape.mul_row(n, g)?;
    tape.add_row(n, b)
}

pub(crate) fn feed_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ffn: &FfnHandles,
    x: Var,
) -> Result<Var> {
    let w1 = tape.param(store, ffn.w1);
    let b1 = tape.param(store, ffn.b1);
    let w2 = tape.param(store, ffn.w2);
    let b2 = tape.param(store, ffn.b2);
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, w2)?;
    tape.add_row(o, b2)
}

/// One encoder layer. When `instr` carries (H_I, α) and the layer has
/// instruction parameters, the self-attention branch is fused with the
/// adapted instruction branch before the residual.
pub fn encoder_layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: &EncLayerHandles,
    cfg: &ModelConfig,
    x: Var,
    instr: Option<(Var, Var)>,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let attn = multi_head_attention(tape, store, &layer.self_attn, cfg.n_heads, x, x, None)?;
    let branch = match (instr, &layer.instr) {
        (Some((h_i, alpha)), Some(ih)) => {
            let adapted =
                instruction::adapt_ptm_attention(tape, store, ih, cfg.n_heads, x, h_i)?;
            instruction::fuse(tape, attn, adapted, alpha)?
        }
        _ => attn,
    };
    let branch = drop.apply(tape, branch)?;
    let x = tape.add(x, branch)?;
    let x = layer_norm_affine(tape, store, &layer.ln1, x)?;

    let ff = feed_forward(tape, store, &layer.ffn, x)?;
    let ff = drop.apply(tape, ff)?;
    let x2 = tape.add(x, ff)?;
    layer_norm_affine(tape, store, &layer.ln2, x2)
}

/// One decoder layer: masked self-attention, then cross-attention over the
/// encoder output (fused with the instruction branch when configured),
/// then the feed-forward sublayer.
pub fn decoder_layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    layer: &DecLayerHandles,
    cfg: &ModelConfig,
    s: Var,
    enc_out: Var,
    self_mask: &[bool],
    instr: Option<(Var, Var)>,
    drop: &mut Dropout<'_>,
) -> Result<Var> {
    let sa = multi_head_attention(
        tape,
        store,
        &layer.self_attn,
        cfg.n_heads,
        s,
        s,
        Some(self_mask),
    )?;
    let sa = drop.apply(tape, sa)?;
    let s = tape.add(s, sa)?;
    let s_tilde = layer_norm_affine(tape, store, &layer.ln1, s)?;

    let cross = multi_head_attention(
        tape,
        store,
        &layer.cross_attn,
        cfg.n_heads,
        s_tilde,
        enc_out,
        None,
    )?;
    let branch = match (instr, &layer.instr) {
        (Some((h_i, alpha)), Some(ih)) => {
            let adapted =
                instruction::adapt_ptm_attention(tape, store, ih, cfg.n_heads, s_tilde, h_i)?;
            instruction::fuse(tape, cross, adapted, alpha)?
        }
        _ => cross,
    };
    let branch = drop.apply(tape, branch)?;
    let s2 = tape.add(s_tilde, branch)?;
    let s2 = layer_norm_affine(tape, store, &layer.ln2, s2)?;

    let ff = feed_forward(tape, store, &layer.ffn, s2)?;
    let ff = drop.apply(tape, ff)?;
    let s3 = tape.add(s2, ff)?;
    layer_norm_affine(tape, store, &layer.ln3, s3)
}
