//! Finite-difference gradient checks: every tape primitive, one fused
//! encoder layer, one fused decoder layer, and the learned fusion weight
//! of a complete model. All in f64 with central differences at h = 1e-5.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tinslt::backbone::{
    attn_handles, causal_mask, decoder_layer_forward, encoder_layer_forward, ffn_handles,
    ln_handles, DecLayerHandles, Dropout, EncLayerHandles, ModelConfig,
};
use tinslt::instruction::{instr_handles, AlphaConfig, AlphaStrategy, InstructionConfig};
use tinslt::optim::grad_check;
use tinslt::{ParamStore, Tape, Tensor, TranslationModel, Var};

pub const FD_H: f64 = 1e-5;
pub const MAX_REL: f64 = 1e-4;

/// Deterministic filler with values spread over roughly [-1.1, 1.3] and
/// kept away from zero, so relu kinks never sit within h of a sample.
fn ten(shape: Vec<usize>, salt: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|i| {
            let k = (i as u64).wrapping_mul(2654435761).wrapping_add(salt * 97) % 23;
            let v = (k as f64 - 11.0) / 9.0;
            if v.abs() < 0.15 {
                v + 0.3
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data)
}

/// Run backward once, then compare against central differences of the
/// same builder. Returns the worst relative error over every parameter.
fn check<F>(store: &mut ParamStore<f64>, mut build: F) -> f64
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    assert_eq!(tape.value(loss).numel(), 1, "loss must be scalar");
    tape.backward(loss, store).unwrap();
    let worst = grad_check(store, FD_H, |s| {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.value(l).item()
    });
    store.zero_grads();
    worst
}

/// Reduce to a scalar through fixed non-uniform weights so gradients are
/// exercised with varied cotangents, not just ones.
fn wsum(tape: &mut Tape<f64>, x: Var) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.25 + ((i * 7) % 11) as f64 / 10.0).collect();
    let c = tape.constant(Tensor::new(shape, w));
    let m = tape.mul(x, c).unwrap();
    tape.sum(m)
}

/// One (name, worst-relative-error) entry per primitive op.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![3, 4], 1)).unwrap();
    let b = store.add("b", ten(vec![4, 2], 2)).unwrap();
    out.push((
        "matmul",
        check(&mut store, |t, s| {
            let (av, bv) = (t.param(s, a), t.param(s, b));
            let m = t.matmul(av, bv).unwrap();
            wsum(t, m)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![2, 3], 3)).unwrap();
    let b = store.add("b", ten(vec![2, 3], 4)).unwrap();
    for (name, f) in [
        ("add", (|t: &mut Tape<f64>, x: Var, y: Var| t.add(x, y).unwrap()) as fn(&mut Tape<f64>, Var, Var) -> Var),
        ("sub", |t, x, y| t.sub(x, y).unwrap()),
        ("mul", |t, x, y| t.mul(x, y).unwrap()),
    ] {
        out.push((
            name,
            check(&mut store, |t, s| {
                let (av, bv) = (t.param(s, a), t.param(s, b));
                let r = f(t, av, bv);
                wsum(t, r)
            }),
        ));
    }

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![3, 4], 5)).unwrap();
    let r = store.add("r", ten(vec![4], 6)).unwrap();
    out.push((
        "add_row",
        check(&mut store, |t, s| {
            let (av, rv) = (t.param(s, a), t.param(s, r));
            let x = t.add_row(av, rv).unwrap();
            wsum(t, x)
        }),
    ));
    out.push((
        "mul_row",
        check(&mut store, |t, s| {
            let (av, rv) = (t.param(s, a), t.param(s, r));
            let x = t.mul_row(av, rv).unwrap();
            wsum(t, x)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![3, 4], 7)).unwrap();
    let unary: Vec<(&str, fn(&mut Tape<f64>, Var) -> Var)> = vec![
        ("scale", |t, x| t.scale(x, 1.7)),
        ("relu", |t, x| t.relu(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("transpose", |t, x| t.transpose(x)),
        ("layer_norm_rows", |t, x| t.layer_norm_rows(x, 1e-5)),
        ("softmax_rows", |t, x| t.softmax_rows(x).unwrap()),
        ("log_softmax_rows", |t, x| t.log_softmax_rows(x).unwrap()),
    ];
    for (name, f) in unary {
        out.push((
            name,
            check(&mut store, |t, s| {
                let av = t.param(s, a);
                let x = f(t, av);
                wsum(t, x)
            }),
        ));
    }
    out.push((
        "sum",
        check(&mut store, |t, s| {
            let av = t.param(s, a);
            t.sum(av)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let table = store.add("table", ten(vec![5, 4], 8)).unwrap();
    out.push((
        "embedding",
        check(&mut store, |t, s| {
            let tv = t.param(s, table);
            let e = t.embedding(tv, &[2, 0, 3, 0]).unwrap();
            wsum(t, e)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![2, 3], 9)).unwrap();
    let b = store.add("b", ten(vec![2, 2], 10)).unwrap();
    out.push((
        "concat_cols",
        check(&mut store, |t, s| {
            let (av, bv) = (t.param(s, a), t.param(s, b));
            let c = t.concat_cols(&[av, bv]).unwrap();
            wsum(t, c)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![2, 5], 11)).unwrap();
    out.push((
        "slice_cols",
        check(&mut store, |t, s| {
            let av = t.param(s, a);
            let x = t.slice_cols(av, 1, 3).unwrap();
            wsum(t, x)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![2, 3], 12)).unwrap();
    let mask = [false, true, false, false, false, true];
    out.push((
        "masked_fill",
        check(&mut store, |t, s| {
            let av = t.param(s, a);
            let x = t.masked_fill(av, &mask, f64::NEG_INFINITY).unwrap();
            let x = t.softmax_rows(x).unwrap();
            wsum(t, x)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![2, 3], 13)).unwrap();
    let b = store.add("b", ten(vec![2, 3], 14)).unwrap();
    let w = store.add("w", Tensor::new(vec![1], vec![0.3])).unwrap();
    out.push((
        "lerp",
        check(&mut store, |t, s| {
            let (av, bv, wv) = (t.param(s, a), t.param(s, b), t.param(s, w));
            let x = t.lerp(av, bv, wv).unwrap();
            wsum(t, x)
        }),
    ));

    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", ten(vec![2, 4], 15)).unwrap();
    let keep = [true, false, true, true, false, true, true, true];
    out.push((
        "dropout",
        check(&mut store, |t, s| {
            let av = t.param(s, a);
            let x = t.dropout(av, &keep, 0.75).unwrap();
            wsum(t, x)
        }),
    ));

    out
}

fn layer_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        dropout_rate: 0.0,
        max_seq_len: 16,
        vocab_size: 10,
        ..ModelConfig::default()
    }
}

/// Worst relative error over every parameter of a fused encoder layer,
/// including its input, the instruction features, and the raw fusion
/// weight (all held as parameters so their gradients are checked too).
pub fn encoder_layer_error() -> f64 {
    let cfg = layer_cfg();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let layer = EncLayerHandles {
        self_attn: attn_handles(&mut store, "self", 8, 8, Some(&mut rng)).unwrap(),
        ln1: ln_handles(&mut store, "ln1", 8, true).unwrap(),
        ffn: ffn_handles(&mut store, "ffn", 8, 16, 8, Some(&mut rng)).unwrap(),
        ln2: ln_handles(&mut store, "ln2", 8, true).unwrap(),
        instr: Some(instr_handles(&mut store, "instr", 8, 8, Some(&mut rng)).unwrap()),
    };
    let x = store.add("x", ten(vec![3, 8], 20)).unwrap();
    let h_i = store.add("h_i", ten(vec![4, 8], 21)).unwrap();
    let raw = store.add("raw", Tensor::new(vec![1], vec![0.4])).unwrap();

    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    check(&mut store, |t, s| {
        let xv = t.param(s, x);
        let hv = t.param(s, h_i);
        let rv = t.param(s, raw);
        let alpha = t.sigmoid(rv);
        let mut drop = Dropout {
            rate: 0.0,
            train: false,
            rng: &mut drop_rng,
        };
        let y = encoder_layer_forward(t, s, &layer, &cfg, xv, Some((hv, alpha)), &mut drop)
            .unwrap();
        wsum(t, y)
    })
}

/// Same as [`encoder_layer_error`] for a fused decoder layer with causal
/// self-attention and cross-attention over a parameter encoder output.
pub fn decoder_layer_error() -> f64 {
    let cfg = layer_cfg();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let layer = DecLayerHandles {
        self_attn: attn_handles(&mut store, "self", 8, 8, Some(&mut rng)).unwrap(),
        ln1: ln_handles(&mut store, "ln1", 8, true).unwrap(),
        cross_attn: attn_handles(&mut store, "cross", 8, 8, Some(&mut rng)).unwrap(),
        ln2: ln_handles(&mut store, "ln2", 8, true).unwrap(),
        ffn: ffn_handles(&mut store, "ffn", 8, 16, 8, Some(&mut rng)).unwrap(),
        ln3: ln_handles(&mut store, "ln3", 8, true).unwrap(),
        instr: Some(instr_handles(&mut store, "instr", 8, 8, Some(&mut rng)).unwrap()),
    };
    let s_in = store.add("s", ten(vec![3, 8], 22)).unwrap();
    let enc = store.add("enc", ten(vec![4, 8], 23)).unwrap();
    let h_i = store.add("h_i", ten(vec![4, 8], 24)).unwrap();
    let raw = store.add("raw", Tensor::new(vec![1], vec![-0.2])).unwrap();
    let mask = causal_mask(3);

    let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
    check(&mut store, |t, st| {
        let sv = t.param(st, s_in);
        let ev = t.param(st, enc);
        let hv = t.param(st, h_i);
        let rv = t.param(st, raw);
        let alpha = t.sigmoid(rv);
        let mut drop = Dropout {
            rate: 0.0,
            train: false,
            rng: &mut drop_rng,
        };
        let y = decoder_layer_forward(
            t,
            st,
            &layer,
            &cfg,
            sv,
            ev,
            &mask,
            Some((hv, alpha)),
            &mut drop,
        )
        .unwrap();
        wsum(t, y)
    })
}

/// Worst relative error of the training loss gradient with respect to the
/// two learned raw fusion weights of a complete model.
pub fn learned_alpha_error() -> f64 {
    let cfg = ModelConfig {
        d_model: 16,
        d_ff: 32,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        dropout_rate: 0.0,
        label_smoothing: 0.2,
        max_seq_len: 16,
        vocab_size: 12,
        ..ModelConfig::default()
    };
    let icfg = InstructionConfig {
        alpha: AlphaConfig {
            strategy: AlphaStrategy::Learned,
            ..AlphaConfig::default()
        },
        ..InstructionConfig::default()
    };
    let mut model = TranslationModel::<f64>::new(cfg, Some(icfg), 5).unwrap();
    let h_i = ten(vec![3, 16], 30);
    let src = [4usize, 5, 6];
    let tgt_in = [2usize, 7, 8];
    let tgt_out = [7usize, 8, 3];

    let loss_of = |m: &TranslationModel<f64>| {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = m
            .forward(&mut tape, &src, &tgt_in, Some(&h_i), 0.0, false, &mut rng)
            .unwrap();
        let loss = m.loss(&mut tape, logits, &tgt_out).unwrap();
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let logits = model
        .forward(&mut tape, &src, &tgt_in, Some(&h_i), 0.0, false, &mut rng)
        .unwrap();
    let loss = model.loss(&mut tape, logits, &tgt_out).unwrap();
    tape.backward(loss, &mut model.store).unwrap();

    let mut worst = 0.0f64;
    for name in ["alpha.enc.raw", "alpha.dec.raw"] {
        let id = model.store.lookup(name).unwrap();
        let analytic = model.store.get(id).grad().unwrap()[0];
        let orig = model.store.get(id).data()[0];
        model.store.get_mut(id).data_mut()[0] = orig + FD_H;
        let f_plus = loss_of(&model);
        model.store.get_mut(id).data_mut()[0] = orig - FD_H;
        let f_minus = loss_of(&model);
        model.store.get_mut(id).data_mut()[0] = orig;
        let fd = (f_plus - f_minus) / (2.0 * FD_H);
        let rel = (analytic - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(rel);
    }
    worst
}
