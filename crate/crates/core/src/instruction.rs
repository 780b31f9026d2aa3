//! Task-aware instruction module: frozen teacher features are attended to,
//! passed through a small adapter, and blended into the backbone with a
//! coefficient α that is scheduled or learned.
//!
//! Encoder fusion: ĥ = (1−α)·Attn_self(h) + α·σ(Attn_I(h, H_I, H_I)).
//! Decoder fusion: ŝ = (1−α)·Attn_cross(s̃, H_enc) + α·σ(Attn_I(s̃, H_I, H_I)).
//! σ is a linear→relu→linear adapter. H_I never receives gradient; the
//! width projection in front of it (when teacher and model widths differ)
//! is trained with the model.

use serde::{Deserialize, Serialize};

use crate::backbone::{self, AttnHandles, FfnHandles};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// How α evolves over training epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaStrategy {
    /// Fixed value for the whole run.
    Constant,
    /// α = α_min + ½(α_max−α_min)(1−cos(T_t/T_c·π + γ)); fast rise
    /// (t_c defaults to 25 here by convention of its users).
    CosineAnnealing,
    /// Same curve as `cosine_annealing`; named separately so slow and fast
    /// settings of (t_c, γ) can be selected independently in configs.
    CosineDecrement,
    /// α = 1 − α_min − ½(α_max−α_min)(1−cos(T_t/T_c·π)): starts at
    /// 1−α_min and falls to 1−α_max.
    CosineIncrement,
    /// Extra variant not part of the reference set: the `cosine_annealing`
    /// rise, but held at α_max for T_t ≥ T_c instead of oscillating.
    MonotoneIncrease,
    /// α = logistic(raw) with `raw` a trained scalar parameter.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaConfig {
    pub strategy: AlphaStrategy,
    /// Value used by `constant`.
    pub value: f64,
    /// Period T_c of the cosine schedules, in epochs.
    pub t_c: f64,
    /// Phase γ of `cosine_annealing` / `cosine_decrement`.
    pub gamma: f64,
    /// Initial α of `learned`; stored as raw = logit(init).
    pub init: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        AlphaConfig {
            strategy: AlphaStrategy::Learned,
            value: 0.65,
            t_c: 25.0,
            gamma: 0.0,
            init: 0.65,
            alpha_min: 0.0,
            alpha_max: 1.0,
        }
    }
}

impl AlphaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_min)
            || !(0.0..=1.0).contains(&self.alpha_max)
            || self.alpha_min > self.alpha_max
        {
            return Err(Error::Config {
                detail: format!(
                    "alpha bounds [{}, {}] must satisfy 0 <= min <= max <= 1",
                    self.alpha_min, self.alpha_max
                ),
            });
        }
        match self.strategy {
            AlphaStrategy::Constant => {
                if !(0.0..=1.0).contains(&self.value) {
                    return Err(Error::Config {
                        detail: format!("constant alpha {} outside [0, 1]", self.value),
                    });
                }
            }
            AlphaStrategy::Learned => {
                if !(self.init > 0.0 && self.init < 1.0) {
                    return Err(Error::Config {
                        detail: format!("learned alpha init {} outside (0, 1)", self.init),
                    });
                }
            }
            _ => {
                if !(self.t_c > 0.0) {
                    return Err(Error::Config {
                        detail: format!("schedule period t_c {} must be positive", self.t_c),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Scheduled α at (fractional) epoch `t_t`, clamped to [α_min, α_max].
/// The `learned` strategy has no closed form; read it through
/// [`learned_alpha`] on the raw parameter instead.
pub fn alpha_value(cfg: &AlphaConfig, t_t: f64) -> Result<f64> {
    cfg.validate()?;
    let (lo, hi) = (cfg.alpha_min, cfg.alpha_max);
    let half_span = 0.5 * (hi - lo);
    let raw = match cfg.strategy {
        AlphaStrategy::Constant => cfg.value,
        AlphaStrategy::CosineAnnealing | AlphaStrategy::CosineDecrement => {
            lo + half_span * (1.0 - (t_t / cfg.t_c * std::f64::consts::PI + cfg.gamma).cos())
        }
        AlphaStrategy::CosineIncrement => {
            1.0 - lo - half_span * (1.0 - (t_t / cfg.t_c * std::f64::consts::PI).cos())
        }
        AlphaStrategy::MonotoneIncrease => {
            let t = t_t.min(cfg.t_c);
            lo + half_span * (1.0 - (t / cfg.t_c * std::f64::consts::PI).cos())
        }
        AlphaStrategy::Learned => {
            return Err(Error::Contract {
                op: "alpha_value",
                detail: "learned alpha is read from its raw parameter, not a schedule"
                    .to_string(),
            })
        }
    };
    Ok(raw.clamp(lo, hi))
}

/// α for the `learned` strategy: logistic of the raw trained scalar.
pub fn learned_alpha(raw: f64) -> f64 {
    1.0 / (1.0 + (-raw).exp())
}

/// Raw parameter value that makes `learned_alpha` start at `init`.
pub fn learned_raw_init(init: f64) -> f64 {
    (init / (1.0 - init)).ln()
}

/// Scheduled α for epochs `0..epochs`; rejects the `learned` strategy.
pub fn schedule_trajectory(cfg: &AlphaConfig, epochs: usize) -> Result<Vec<f64>> {
    (0..epochs).map(|e| alpha_value(cfg, e as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstructionConfig {
    /// Fuse into encoder self-attention sublayers.
    pub fuse_encoder: bool,
    /// Fuse into decoder cross-attention sublayers.
    pub fuse_decoder: bool,
    /// Adapter hidden width; 0 means "use d_model".
    pub adaptive_hidden: usize,
    /// With the `learned` strategy, train one raw α per layer instead of
    /// one per stack (schedules are a single value either way).
    pub per_layer_alpha: bool,
    /// Hidden width of the frozen teacher providing H_I; 0 means "equal to
    /// d_model". When it differs, a trained linear projection maps teacher
    /// features to model width. Filled in from the teacher checkpoint.
    pub teacher_width: usize,
    pub alpha: AlphaConfig,
}

impl Default for InstructionConfig {
    fn default() -> Self {
        InstructionConfig {
            fuse_encoder: true,
            fuse_decoder: true,
            adaptive_hidden: 0,
            per_layer_alpha: false,
            teacher_width: 0,
            alpha: AlphaConfig::default(),
        }
    }
}

impl InstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fuse_encoder && !self.fuse_decoder {
            return Err(Error::Config {
                detail: "instruction module enabled but fused into neither stack".to_string(),
            });
        }
        self.alpha.validate()
    }

    pub fn adapter_hidden(&self, d_model: usize) -> usize {
        if self.adaptive_hidden == 0 {
            d_model
        } else {
            self.adaptive_hidden
        }
    }
}

/// Per-layer instruction parameters: attention over H_I plus the adapter σ.
/// These are separate tensors in every layer of both stacks; nothing is
/// shared between encoder-side and decoder-side instruction attention.
#[derive(Debug, Clone)]
pub struct InstrHandles {
    pub attn: AttnHandles,
    pub adapt: FfnHandles,
}

pub fn instr_handles<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_model: usize,
    hidden: usize,
    mut rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<InstrHandles> {
    let attn = backbone::attn_handles(
        store,
        &format!("{prefix}.attn"),
        d_model,
        d_model,
        rng.as_deref_mut(),
    )?;
    let adapt = backbone::ffn_handles(
        store,
        &format!("{prefix}.adapt"),
        d_model,
        hidden,
        d_model,
        rng,
    )?;
    Ok(InstrHandles { attn, adapt })
}

/// σ(Attn_I(query, H_I, H_I)): attend to the (projected, frozen) teacher
/// features with `query`, then run the adapter. `h_i` rows are source
/// positions; `query` may come from either stack.
pub fn adapt_ptm_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    handles: &InstrHandles,
    n_heads: usize,
    query: Var,
    h_i: Var,
) -> Result<Var> {
    let attended =
        backbone::multi_head_attention(tape, store, &handles.attn, n_heads, query, h_i, None)?;
    backbone::feed_forward(tape, store, &handles.adapt, attended)
}

/// (1−α)·base + α·instr. `alpha` must hold a single finite value in [0, 1];
/// endpoints reproduce the corresponding branch exactly.
pub fn fuse<T: Scalar>(tape: &mut Tape<T>, base: Var, instr: Var, alpha: Var) -> Result<Var> {
    let a = tape.value(alpha);
    if a.numel() != 1 {
        return Err(Error::Contract {
            op: "fuse",
            detail: format!("alpha must be a single value, got {} elements", a.numel()),
        });
    }
    let v = a.data()[0].as_f64();
    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
        return Err(Error::Contract {
            op: "fuse",
            detail: format!("alpha {v} outside [0, 1]"),
        });
    }
    tape.lerp(base, instr, alpha)
}
