//! Scalar-loop reference implementations shared by the integration tests.
//! Everything here works on plain row-major `Vec<Vec<f64>>` matrices with
//! explicit loops and never touches the tape, so it can stand as an
//! independent oracle for the production forward pass.

#![allow(dead_code)]

pub mod grads;

use tinslt::{ParamStore, TranslationModel};

/// Row-major matrix: `m[row][col]`.
pub type Mat = Vec<Vec<f64>>;

pub fn get_mat(store: &ParamStore<f64>, name: &str) -> Mat {
    let id = store
        .lookup(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"));
    let t = store.get(id);
    let (r, c) = t.dims2();
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

pub fn get_vec(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    let id = store
        .lookup(name)
        .unwrap_or_else(|| panic!("missing parameter {name}"));
    store.get(id).data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        assert_eq!(a[i].len(), k);
        for p in 0..k {
            for j in 0..n {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let (m, n) = (a.len(), a[0].len());
    (0..n).map(|j| (0..m).map(|i| a[i][j]).collect()).collect()
}

pub fn add_row(a: &Mat, b: &[f64]) -> Mat {
    a.iter()
        .map(|row| row.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn linear(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
    add_row(&matmul(x, w), b)
}

pub fn relu(a: &Mat) -> Mat {
    a.iter()
        .map(|row| row.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect())
        .collect()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Per-row normalization (population variance, eps inside the root)
/// followed by the affine gain/bias.
pub fn layer_norm(a: &Mat, g: &[f64], b: &[f64], eps: f64) -> Mat {
    a.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, x)| (x - mean) * inv * g[j] + b[j])
                .collect()
        })
        .collect()
}

pub fn positional_encoding(seq_len: usize, d_model: usize) -> Mat {
    (0..seq_len)
        .map(|p| {
            (0..d_model)
                .map(|j| {
                    let i = j / 2;
                    let angle =
                        p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

/// `sqrt(d)`-scaled table rows plus the sinusoidal signal.
pub fn embed(table: &Mat, ids: &[usize]) -> Mat {
    let d = table[0].len();
    let scale = (d as f64).sqrt();
    let pe = positional_encoding(ids.len(), d);
    ids.iter()
        .enumerate()
        .map(|(p, &id)| {
            (0..d)
                .map(|j| table[id][j] * scale + pe[p][j])
                .collect()
        })
        .collect()
}

/// Multi-head attention reading `{prefix}.{wq,bq,wk,bk,wv,bv,wo,bo}`.
/// `causal` blocks each query position from keys to its right.
pub fn mha(
    store: &ParamStore<f64>,
    prefix: &str,
    n_heads: usize,
    q_in: &Mat,
    kv_in: &Mat,
    causal: bool,
) -> Mat {
    let wq = get_mat(store, &format!("{prefix}.wq"));
    let bq = get_vec(store, &format!("{prefix}.bq"));
    let wk = get_mat(store, &format!("{prefix}.wk"));
    let bk = get_vec(store, &format!("{prefix}.bk"));
    let wv = get_mat(store, &format!("{prefix}.wv"));
    let bv = get_vec(store, &format!("{prefix}.bv"));
    let wo = get_mat(store, &format!("{prefix}.wo"));
    let bo = get_vec(store, &format!("{prefix}.bo"));

    let q = linear(q_in, &wq, &bq);
    let k = linear(kv_in, &wk, &bk);
    let v = linear(kv_in, &wv, &bv);

    let d_model = wq[0].len();
    let dh = d_model / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (tq, tk) = (q.len(), k.len());

    let mut cat = vec![Vec::with_capacity(d_model); tq];
    for h in 0..n_heads {
        let lo = h * dh;
        for i in 0..tq {
            let mut scores = vec![0.0; tk];
            for (j, score) in scores.iter_mut().enumerate() {
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q[i][lo + c] * k[j][lo + c];
                }
                *score = dot * scale;
                if causal && j > i {
                    *score = f64::NEG_INFINITY;
                }
            }
            let weights = softmax_row(&scores);
            for c in 0..dh {
                let mut ctx = 0.0;
                for j in 0..tk {
                    ctx += weights[j] * v[j][lo + c];
                }
                cat[i].push(ctx);
            }
        }
    }
    linear(&cat, &wo, &bo)
}

pub fn ffn(store: &ParamStore<f64>, prefix: &str, x: &Mat) -> Mat {
    let w1 = get_mat(store, &format!("{prefix}.w1"));
    let b1 = get_vec(store, &format!("{prefix}.b1"));
    let w2 = get_mat(store, &format!("{prefix}.w2"));
    let b2 = get_vec(store, &format!("{prefix}.b2"));
    linear(&relu(&linear(x, &w1, &b1)), &w2, &b2)
}

fn ln(store: &ParamStore<f64>, prefix: &str, x: &Mat) -> Mat {
    layer_norm(
        x,
        &get_vec(store, &format!("{prefix}.g")),
        &get_vec(store, &format!("{prefix}.b")),
        1e-5,
    )
}

fn mix(base: &Mat, instr: &Mat, alpha: f64) -> Mat {
    base.iter()
        .zip(instr)
        .map(|(rb, ri)| {
            rb.iter()
                .zip(ri)
                .map(|(b, i)| (1.0 - alpha) * b + alpha * i)
                .collect()
        })
        .collect()
}

fn adapted_branch(
    store: &ParamStore<f64>,
    prefix: &str,
    n_heads: usize,
    query: &Mat,
    h_i: &Mat,
) -> Mat {
    let attended = mha(store, &format!("{prefix}.attn"), n_heads, query, h_i, false);
    ffn(store, &format!("{prefix}.adapt"), &attended)
}

pub fn encoder_layer(
    store: &ParamStore<f64>,
    prefix: &str,
    n_heads: usize,
    x: &Mat,
    instr: Option<(&Mat, f64)>,
) -> Mat {
    let attn = mha(store, &format!("{prefix}.self"), n_heads, x, x, false);
    let branch = match instr {
        Some((h_i, alpha)) => {
            let adapted = adapted_branch(store, &format!("{prefix}.instr"), n_heads, x, h_i);
            mix(&attn, &adapted, alpha)
        }
        None => attn,
    };
    let x1 = ln(store, &format!("{prefix}.ln1"), &add(x, &branch));
    let ff = ffn(store, &format!("{prefix}.ffn"), &x1);
    ln(store, &format!("{prefix}.ln2"), &add(&x1, &ff))
}

pub fn decoder_layer(
    store: &ParamStore<f64>,
    prefix: &str,
    n_heads: usize,
    s: &Mat,
    enc_out: &Mat,
    instr: Option<(&Mat, f64)>,
) -> Mat {
    let sa = mha(store, &format!("{prefix}.self"), n_heads, s, s, true);
    let s_tilde = ln(store, &format!("{prefix}.ln1"), &add(s, &sa));

    let cross = mha(store, &format!("{prefix}.cross"), n_heads, &s_tilde, enc_out, false);
    let branch = match instr {
        Some((h_i, alpha)) => {
            let adapted =
                adapted_branch(store, &format!("{prefix}.instr"), n_heads, &s_tilde, h_i);
            mix(&cross, &adapted, alpha)
        }
        None => cross,
    };
    let s2 = ln(store, &format!("{prefix}.ln2"), &add(&s_tilde, &branch));
    let ff = ffn(store, &format!("{prefix}.ffn"), &s2);
    ln(store, &format!("{prefix}.ln3"), &add(&s2, &ff))
}

/// Full reference forward pass over the model's own parameters. `h_i_raw`
/// is the teacher feature matrix before any width projection; `alpha` is
/// the constant fusion weight applied on every fused layer of both stacks.
pub fn ref_logits(
    model: &TranslationModel<f64>,
    src: &[usize],
    tgt_in: &[usize],
    h_i_raw: Option<&Mat>,
    alpha: f64,
) -> Mat {
    let store = &model.store;
    let shared = store.lookup("emb.table").is_some();
    let src_table = get_mat(store, if shared { "emb.table" } else { "emb.src.table" });
    let tgt_table = get_mat(store, if shared { "emb.table" } else { "emb.tgt.table" });
    let n_heads = model.cfg.n_heads;

    let h_i = h_i_raw.map(|m| {
        if store.lookup("instr.proj.w").is_some() {
            linear(
                m,
                &get_mat(store, "instr.proj.w"),
                &get_vec(store, "instr.proj.b"),
            )
        } else {
            m.clone()
        }
    });
    let (fuse_enc, fuse_dec) = match &model.icfg {
        Some(ic) => (ic.fuse_encoder, ic.fuse_decoder),
        None => (false, false),
    };

    let mut x = embed(&src_table, src);
    for i in 0..model.cfg.n_enc_layers {
        let instr = h_i.as_ref().filter(|_| fuse_enc).map(|h| (h, alpha));
        x = encoder_layer(store, &format!("enc.{i}"), n_heads, &x, instr);
    }

    let mut s = embed(&tgt_table, tgt_in);
    for i in 0..model.cfg.n_dec_layers {
        let instr = h_i.as_ref().filter(|_| fuse_dec).map(|h| (h, alpha));
        s = decoder_layer(store, &format!("dec.{i}"), n_heads, &s, &x, instr);
    }

    let out_b = get_vec(store, "out.b");
    match store.lookup("out.w") {
        Some(_) => linear(&s, &get_mat(store, "out.w"), &out_b),
        None => linear(&s, &transpose(&tgt_table), &out_b),
    }
}

/// Largest absolute elementwise difference between a tape tensor laid out
/// `[rows, cols]` and a reference matrix.
pub fn max_abs_diff(flat: &[f64], reference: &Mat) -> f64 {
    let cols = reference[0].len();
    let mut worst = 0.0f64;
    for (i, row) in reference.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            worst = worst.max((flat[i * cols + j] - want).abs());
        }
    }
    worst
}
