//! Reverse-mode automatic differentiation on a flat operation tape.
//!
//! A [`Tape`] is rebuilt on every forward pass (define-by-run). Each op
//! records its output tensor plus whatever it needs for the vector-Jacobian
//! product; [`Tape::backward`] walks the tape once in reverse and accumulates
//! parameter gradients into the owning [`ParamStore`].

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{expect_dim, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    /// Input with no parents. `param` links the node to a store entry so
    /// backward can deposit its gradient there.
    Leaf { param: Option<ParamId> },
    /// C[m,n] = A[m,k] B[k,n]
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    /// Elementwise product of same-shape tensors.
    Mul { a: Var, b: Var },
    /// A[m,n] + row[n], broadcast over rows.
    AddRow { a: Var, row: Var },
    /// A[m,n] * row[n], broadcast over rows.
    MulRow { a: Var, row: Var },
    Scale { a: Var, c: T },
    /// Row-wise softmax. Saved value is reused in backward.
    SoftmaxRows { a: Var },
    /// Row-wise log-softmax; softmax of the input is saved for backward.
    LogSoftmaxRows { a: Var, softmax: Vec<T> },
    /// Row-wise (x - mean) / sqrt(var + eps), biased variance. `inv_std`
    /// holds one value per row.
    LayerNormRows { a: Var, inv_std: Vec<T> },
    Relu { a: Var },
    Sigmoid { a: Var },
    /// Gather rows of `table` at `ids`; backward scatters row gradients.
    Embedding { table: Var, ids: Vec<usize> },
    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    ConcatCols { parts: Vec<Var> },
    /// Columns [start, start+len) of a rank-2 tensor.
    SliceCols { a: Var, start: usize, len: usize },
    Transpose { a: Var },
    /// Where `mask` was true the output became the fill value and the
    /// gradient is blocked.
    MaskedFill { a: Var, mask: Vec<bool> },
    /// (1 - t) * a + t * b with scalar t. Exact at t = 0 and t = 1.
    Lerp { a: Var, b: Var, t: Var },
    /// Scalar sum of all elements.
    Sum { a: Var },
    /// Inverted-scaling dropout with a fixed mask; RNG stays outside the tape.
    Dropout { a: Var, mask: Vec<bool>, keep_scale: T },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    /// Per-node adjoints, populated by `backward`.
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Adjoint of a node after `backward`; `None` if the node did not
    /// influence the loss.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Snapshot a parameter's current value onto the tape. Backward will
    /// accumulate this node's adjoint into the store entry.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(
            Op::Leaf { param: Some(id) },
            store.get(id).clone(),
        )
    }

    // ── arithmetic ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        expect_dim("matmul", 1, k, k2)?;
        let c = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Op::Matmul { a, b }, Tensor::new(vec![m, n], c)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Add { a, b }, Tensor::new(shape, data)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Sub { a, b }, Tensor::new(shape, data)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Mul { a, b }, Tensor::new(shape, data)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        expect_dim("add_row", 1, n, self.value(row).numel())?;
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let mut out = av.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += rv[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::AddRow { a, row }, Tensor::new(shape, out)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        expect_dim("mul_row", 1, n, self.value(row).numel())?;
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let mut out = av.to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= rv[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::MulRow { a, row }, Tensor::new(shape, out)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Scale { a, c }, Tensor::new(shape, data))
    }

    // ── nonlinearities ──────────────────────────────────────────────────

    /// Row-wise softmax with max subtraction. Rows where every entry is
    /// -inf are a contract violation (masking must leave one finite slot).
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let max = row_max(row);
            if !max.is_finite() {
                return Err(Error::Contract {
                    op: "softmax_rows",
                    detail: format!("row {i} has no finite entry"),
                });
            }
            let mut sum = T::zero();
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::SoftmaxRows { a }, Tensor::new(shape, out)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        let mut soft = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let max = row_max(row);
            if !max.is_finite() {
                return Err(Error::Contract {
                    op: "log_softmax_rows",
                    detail: format!("row {i} has no finite entry"),
                });
            }
            let mut sum = T::zero();
            for j in 0..n {
                sum += (row[j] - max).exp();
            }
            let log_z = max + sum.ln();
            for j in 0..n {
                out[i * n + j] = row[j] - log_z;
                soft[i * n + j] = out[i * n + j].exp();
            }
        }
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Op::LogSoftmaxRows { a, softmax: soft },
            Tensor::new(shape, out),
        ))
    }

    /// Row-wise normalization to zero mean and unit variance (biased
    /// variance, stabilized by `eps`). Affine gain/bias are separate
    /// `mul_row`/`add_row` ops.
    pub fn layer_norm_rows(&mut self, a: Var, eps: T) -> Var {
        let (m, n) = self.value(a).dims2();
        let x = self.value(a).data();
        let nf = T::from_f64(n as f64);
        let mut out = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * is;
            }
        }
        let shape = self.value(a).shape().to_vec();
        self.push(Op::LayerNormRows { a, inv_std }, Tensor::new(shape, out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Relu { a }, Tensor::new(shape, data))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Sigmoid { a }, Tensor::new(shape, data))
    }

    // ── structure ───────────────────────────────────────────────────────

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.value(table).dims2();
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Contract {
                op: "embedding",
                detail: format!("token id {bad} outside table of {vocab} rows"),
            });
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            Tensor::new(vec![ids.len(), dim], out),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat_cols on empty slice");
        let (m, _) = self.value(parts[0]).dims2();
        let mut total = 0usize;
        for &p in parts {
            let (mp, np) = self.value(p).dims2();
            expect_dim("concat_cols", 0, m, mp)?;
            total += np;
        }
        let mut out = vec![T::zero(); m * total];
        let mut col = 0usize;
        for &p in parts {
            let (_, np) = self.value(p).dims2();
            let pv = self.value(p).data();
            for i in 0..m {
                out[i * total + col..i * total + col + np]
                    .copy_from_slice(&pv[i * np..(i + 1) * np]);
            }
            col += np;
        }
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            Tensor::new(vec![m, total], out),
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if start + len > n {
            return Err(Error::Contract {
                op: "slice_cols",
                detail: format!("columns [{start}, {}) outside width {n}", start + len),
            });
        }
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        Ok(self.push(
            Op::SliceCols { a, start, len },
            Tensor::new(vec![m, len], out),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let av = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        self.push(Op::Transpose { a }, Tensor::new(vec![n, m], out))
    }

    /// Replace masked entries with `fill` (gradient is blocked there).
    /// `mask.len()` must equal the tensor's element count.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: T) -> Result<Var> {
        expect_dim("masked_fill", 0, self.value(a).numel(), mask.len())?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &m)| if m { fill } else { x })
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Op::MaskedFill {
                a,
                mask: mask.to_vec(),
            },
            Tensor::new(shape, data),
        ))
    }

    /// (1 - t) * a + t * b for scalar t. Computed in that exact form so
    /// t = 0 returns a bitwise and t = 1 returns b bitwise.
    pub fn lerp(&mut self, a: Var, b: Var, t: Var) -> Result<Var> {
        self.same_shape("lerp", a, b)?;
        if self.value(t).numel() != 1 {
            return Err(Error::Contract {
                op: "lerp",
                detail: format!("weight must be scalar, got shape {:?}", self.value(t).shape()),
            });
        }
        let tv = self.value(t).data()[0];
        let one_minus = T::one() - tv;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| {
            one_minus * x + tv * y
        });
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Op::Lerp { a, b, t }, Tensor::new(shape, data)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Op::Sum { a }, Tensor::scalar(s))
    }

    /// Apply a fixed keep-mask with inverted scaling: kept entries are
    /// multiplied by `1 / keep_prob`, dropped entries become zero. The mask
    /// is sampled by the caller; evaluation simply skips this op.
    pub fn dropout(&mut self, a: Var, mask: &[bool], keep_prob: f64) -> Result<Var> {
        expect_dim("dropout", 0, self.value(a).numel(), mask.len())?;
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Contract {
                op: "dropout",
                detail: format!("keep probability {keep_prob} outside (0, 1]"),
            });
        }
        let keep_scale = T::from_f64(1.0 / keep_prob);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(mask)
            .map(|(&x, &keep)| if keep { x * keep_scale } else { T::zero() })
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Op::Dropout {
                a,
                mask: mask.to_vec(),
                keep_scale,
            },
            Tensor::new(shape, data),
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar `loss`. Parameter adjoints are *added*
    /// into the store's grad buffers, so gradients accumulate across
    /// multiple tapes until `store.zero_grads()`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract {
                op: "backward",
                detail: format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            // Put the adjoint back so callers can inspect intermediate grads.
            self.grads[idx] = Some(g.clone());
            match &self.nodes[idx].op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        store.get_mut(*id).accumulate_grad(&g);
                    }
                }
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, k) = self.value(a).dims2();
                    let n = self.value(b).dims2().1;
                    // dA = dC B^T ; dB = A^T dC
                    let bt = transpose_raw(self.value(b).data(), k, n);
                    let da = matmul_raw(&g, &bt, m, n, k);
                    let at = transpose_raw(self.value(a).data(), m, k);
                    let db = matmul_raw(&at, &g, k, m, n);
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accum(a, &g);
                    self.accum(b, &g);
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    self.accum(a, &g);
                    self.accum(b, &neg);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let da = zip_map(&g, self.value(b).data(), |x, y| x * y);
                    let db = zip_map(&g, self.value(a).data(), |x, y| x * y);
                    self.accum(a, &da);
                    self.accum(b, &db);
                }
                Op::AddRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let (m, n) = self.value(a).dims2();
                    let mut dr = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g[i * n + j];
                        }
                    }
                    self.accum(a, &g);
                    self.accum(row, &dr);
                }
                Op::MulRow { a, row } => {
                    let (a, row) = (*a, *row);
                    let (m, n) = self.value(a).dims2();
                    let rv = self.value(row).data().to_vec();
                    let av = self.value(a).data();
                    let mut da = vec![T::zero(); m * n];
                    let mut dr = vec![T::zero(); n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g[i * n + j] * rv[j];
                            dr[j] += g[i * n + j] * av[i * n + j];
                        }
                    }
                    self.accum(a, &da);
                    self.accum(row, &dr);
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    let da: Vec<T> = g.iter().map(|&v| v * c).collect();
                    self.accum(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let a = *a;
                    let (m, n) = self.value(a).dims2();
                    let y = self.nodes[idx].value.data();
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        let dot = (0..n)
                            .map(|j| g[i * n + j] * y[i * n + j])
                            .sum::<T>();
                        for j in 0..n {
                            da[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                        }
                    }
                    self.accum(a, &da);
                }
                Op::LogSoftmaxRows { a, softmax } => {
                    let a = *a;
                    let (m, n) = self.value(a).dims2();
                    let soft = softmax.clone();
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        let gsum = (0..n).map(|j| g[i * n + j]).sum::<T>();
                        for j in 0..n {
                            da[i * n + j] = g[i * n + j] - soft[i * n + j] * gsum;
                        }
                    }
                    self.accum(a, &da);
                }
                Op::LayerNormRows { a, inv_std } => {
                    let a = *a;
                    let (m, n) = self.value(a).dims2();
                    let inv_std = inv_std.clone();
                    let y = self.nodes[idx].value.data();
                    let nf = T::from_f64(n as f64);
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        let gmean = (0..n).map(|j| g[i * n + j]).sum::<T>() / nf;
                        let gy = (0..n)
                            .map(|j| g[i * n + j] * y[i * n + j])
                            .sum::<T>()
                            / nf;
                        for j in 0..n {
                            da[i * n + j] =
                                inv_std[i] * (g[i * n + j] - gmean - y[i * n + j] * gy);
                        }
                    }
                    self.accum(a, &da);
                }
                Op::Relu { a } => {
                    let a = *a;
                    let da = zip_map(&g, self.value(a).data(), |gv, x| {
                        if x > T::zero() {
                            gv
                        } else {
                            T::zero()
                        }
                    });
                    self.accum(a, &da);
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let y = self.nodes[idx].value.data();
                    let da: Vec<T> = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                        .collect();
                    self.accum(a, &da);
                }
                Op::Embedding { table, ids } => {
                    let table = *table;
                    let ids = ids.clone();
                    let (_, dim) = self.value(table).dims2();
                    let mut dt = vec![T::zero(); self.value(table).numel()];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            dt[id * dim + j] += g[row * dim + j];
                        }
                    }
                    self.accum(table, &dt);
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let (m, total) = self.nodes[idx].value.dims2();
                    let mut col = 0usize;
                    for p in parts {
                        let (_, np) = self.value(p).dims2();
                        let mut dp = vec![T::zero(); m * np];
                        for i in 0..m {
                            dp[i * np..(i + 1) * np]
                                .copy_from_slice(&g[i * total + col..i * total + col + np]);
                        }
                        self.accum(p, &dp);
                        col += np;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let (a, start, len) = (*a, *start, *len);
                    let (m, n) = self.value(a).dims2();
                    let mut da = vec![T::zero(); m * n];
                    for i in 0..m {
                        da[i * n + start..i * n + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    self.accum(a, &da);
                }
                Op::Transpose { a } => {
                    let a = *a;
                    let (m, n) = self.value(a).dims2();
                    // g has shape [n, m]; transpose back to [m, n].
                    let da = transpose_raw(&g, n, m);
                    self.accum(a, &da);
                }
                Op::MaskedFill { a, mask } => {
                    let a = *a;
                    let da: Vec<T> = g
                        .iter()
                        .zip(mask)
                        .map(|(&gv, &m)| if m { T::zero() } else { gv })
                        .collect();
                    self.accum(a, &da);
                }
                Op::Lerp { a, b, t } => {
                    let (a, b, t) = (*a, *b, *t);
                    let tv = self.value(t).data()[0];
                    let one_minus = T::one() - tv;
                    let da: Vec<T> = g.iter().map(|&v| v * one_minus).collect();
                    let db: Vec<T> = g.iter().map(|&v| v * tv).collect();
                    let dt = g
                        .iter()
                        .zip(self.value(b).data().iter().zip(self.value(a).data()))
                        .map(|(&gv, (&bv, &av))| gv * (bv - av))
                        .sum::<T>();
                    self.accum(a, &da);
                    self.accum(b, &db);
                    self.accum(t, &[dt]);
                }
                Op::Sum { a } => {
                    let a = *a;
                    let da = vec![g[0]; self.value(a).numel()];
                    self.accum(a, &da);
                }
                Op::Dropout { a, mask, keep_scale } => {
                    let (a, keep_scale) = (*a, *keep_scale);
                    let da: Vec<T> = g
                        .iter()
                        .zip(mask)
                        .map(|(&gv, &keep)| if keep { gv * keep_scale } else { T::zero() })
                        .collect();
                    self.accum(a, &da);
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, delta: &[T]) {
        match &mut self.grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.len(), delta.len());
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            let axis = sa
                .iter()
                .zip(sb)
                .position(|(x, y)| x != y)
                .unwrap_or(sa.len().min(sb.len()));
            return Err(Error::ShapeMismatch {
                op,
                axis,
                left: sa.get(axis).copied().unwrap_or(0),
                right: sb.get(axis).copied().unwrap_or(0),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn row_max<T: Scalar>(row: &[T]) -> T {
    row.iter()
        .copied()
        .fold(T::neg_infinity(), |m, v| if v > m { v } else { m })
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// C[m,n] = A[m,k] B[k,n], ikj loop order for cache locality.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

pub(crate) fn transpose_raw<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
