//! Reverse-mode differentiation over a fixed, enumerated operation set.
//!
//! A [`Tape`] is an append-only arena of computed values. Operations return
//! [`Var`] handles; [`Tape::backward`] replays the recorded graph once in
//! reverse to accumulate gradients for every parameter leaf. A node is
//! recorded with its operation only when some input requires gradients;
//! otherwise the result is stored as a constant leaf, so inference builds a
//! values-only tape. Tapes are confined to one thread.

use crate::ctc;
use crate::error::{Error, Result};
use crate::kernels as k;
use crate::tensor::{Real, Tensor};
use indexmap::IndexMap;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, pad: usize },
    UpsampleNearest2x(Var),
    DownsampleAvg2x(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm(Var),
    Gelu(Var),
    Silu(Var),
    LnClamped(Var),
    Concat { axis: usize, a: Var, b: Var },
    Slice { axis: usize, start: usize, len: usize, x: Var },
    MulRowVec(Var, Var),
    AddRowVec(Var, Var),
    MulChanVec(Var, Var),
    AddChanVec(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    Ctc { log_probs: Var, targets: Vec<usize>, blank: usize },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op,
    rg: bool,
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Grads<T: Real> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient for a var, if it was reached and retained. Leaves that
    /// require gradients always have an entry after `backward`.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.slots.get(v.0).and_then(|s| s.as_deref())
    }
}

/// Floor applied inside `ln_clamped`.
pub const LN_FLOOR: f64 = 1e-8;

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: IndexMap::new(),
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

    /// Registered parameter leaves, in registration order.
    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(n, &v)| (n.as_str(), v))
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Records a constant. Its `requires_grad` flag decides whether gradients
    /// flow into it (use [`Tape::param`] for named trainable leaves).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let rg = value.requires_grad();
        self.push_node(value, Op::Leaf, rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Registers a named trainable leaf. Re-registering the same name returns
    /// the existing var, so shared weights accumulate gradients naturally.
    pub fn param(&mut self, name: &str, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            debug_assert_eq!(
                self.nodes[v.0].value.shape(),
                value.shape(),
                "param {name} re-registered with a different shape"
            );
            return v;
        }
        let v = self.push_node(value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op, rg: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?}",
            op_name(&op)
        );
        let id = self.nodes.len();
        // Constant subgraphs carry no edges.
        let op = if rg { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, rg });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].rg
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_node(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_node(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_node(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::from_f64(factor);
        let t = self.value(a).map(|v| v * f);
        let rg = self.rg(a);
        self.push_node(t, Op::Scale(a, factor), rg)
    }

    // ── linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).mat()?;
        let (kb, n) = self.value(b).mat()?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![T::ZERO; m * n];
        k::matmul_nn(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let t = Tensor::from_vec(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_node(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).mat()?;
        let mut out = vec![T::ZERO; m * n];
        k::transpose(self.value(a).data(), m, n, &mut out);
        let t = Tensor::from_vec(vec![n, m], out)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::Reshape(a), rg))
    }

    // ── image ops ───────────────────────────────────────────────────────

    /// Stride-1 2D convolution with symmetric zero padding.
    /// x: [cin, h, w], w: [cout, cin, kh, kw], b: [cout].
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (cin, h, win) = self.value(x).chw()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.value(x).shape().to_vec(),
                rhs: ws,
            });
        }
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        if self.value(b).numel() != cout {
            return Err(Error::ShapeMismatch {
                op: "conv2d(bias)",
                lhs: vec![cout],
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let oh = (h + 2 * pad).checked_sub(kh - 1).filter(|&v| v >= 1);
        let ow = (win + 2 * pad).checked_sub(kw - 1).filter(|&v| v >= 1);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::invalid(
                    "conv2d",
                    format!("kernel {kh}x{kw} too large for {h}x{win} input with pad {pad}"),
                ))
            }
        };
        let mut cols = vec![T::ZERO; cin * kh * kw * oh * ow];
        k::im2col(self.value(x).data(), cin, h, win, kh, kw, pad, &mut cols);
        let mut out = vec![T::ZERO; cout * oh * ow];
        k::matmul_nn(self.value(w).data(), &cols, cout, cin * kh * kw, oh * ow, &mut out);
        let bias = self.value(b).data();
        for co in 0..cout {
            let bi = bias[co];
            for v in out[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
                *v += bi;
            }
        }
        let t = Tensor::from_vec(vec![cout, oh, ow], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push_node(t, Op::Conv2d { x, w, b, pad }, rg))
    }

    pub fn upsample_nearest_2x(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let mut out = vec![T::ZERO; c * 4 * h * w];
        k::upsample_nearest_2x(self.value(a).data(), c, h, w, &mut out);
        let t = Tensor::from_vec(vec![c, 2 * h, 2 * w], out)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::UpsampleNearest2x(a), rg))
    }

    pub fn downsample_avg_2x(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(
                "downsample_avg_2x",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let mut out = vec![T::ZERO; c * h * w / 4];
        k::downsample_avg_2x(self.value(a).data(), c, h, w, &mut out);
        let t = Tensor::from_vec(vec![c, h / 2, w / 2], out)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::DownsampleAvg2x(a), rg))
    }

    // ── row-wise ops over the last axis ─────────────────────────────────

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let shape = self.value(v).shape();
        let n = *shape.last().expect("rank >= 1");
        (self.value(v).numel() / n, n)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, n) = self.rows_cols(a);
        let mut out = vec![T::ZERO; rows * n];
        k::softmax_rows(self.value(a).data(), rows, n, &mut out);
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, n) = self.rows_cols(a);
        let mut out = vec![T::ZERO; rows * n];
        k::log_softmax_rows(self.value(a).data(), rows, n, &mut out);
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::LogSoftmax(a), rg))
    }

    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let (rows, n) = self.rows_cols(a);
        let mut out = vec![T::ZERO; rows * n];
        k::layer_norm_rows(self.value(a).data(), rows, n, &mut out);
        let t = Tensor::from_vec(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push_node(t, Op::LayerNorm(a), rg))
    }

    // ── activations ─────────────────────────────────────────────────────

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(k::gelu);
        let rg = self.rg(a);
        self.push_node(t, Op::Gelu(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(k::silu);
        let rg = self.rg(a);
        self.push_node(t, Op::Silu(a), rg)
    }

    /// Natural log with the argument floored at [`LN_FLOOR`].
    pub fn ln_clamped(&mut self, a: Var) -> Var {
        let floor = T::from_f64(LN_FLOOR);
        let t = self.value(a).map(|v| v.maximum(floor).ln());
        let rg = self.rg(a);
        self.push_node(t, Op::LnClamped(a), rg)
    }

    // ── structure ───────────────────────────────────────────────────────

    pub fn concat(&mut self, axis: usize, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let rank_ok = sa.len() == sb.len() && axis < sa.len();
        let dims_ok = rank_ok
            && sa
                .iter()
                .zip(&sb)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !dims_ok {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: sa,
                rhs: sb,
            });
        }
        let outer: usize = sa[..axis].iter().product();
        let block_a: usize = sa[axis..].iter().product();
        let block_b: usize = sb[axis..].iter().product();
        let mut out = Vec::with_capacity((block_a + block_b) * outer);
        let da = self.value(a).data();
        let db = self.value(b).data();
        for o in 0..outer {
            out.extend_from_slice(&da[o * block_a..(o + 1) * block_a]);
            out.extend_from_slice(&db[o * block_b..(o + 1) * block_b]);
        }
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let t = Tensor::from_vec(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_node(t, Op::Concat { axis, a, b }, rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} out of axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let t = Tensor::from_vec(new_shape, out)?;
        let rg = self.rg(x);
        Ok(self.push_node(t, Op::Slice { axis, start, len, x }, rg))
    }

    // ── broadcasts ──────────────────────────────────────────────────────

    fn check_vec_len(&self, op: &'static str, x: Var, v: Var, want: usize) -> Result<()> {
        if self.value(v).numel() != want {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(v).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Multiplies every row of `x` ([..., n]) elementwise by `v` (numel n).
    pub fn mul_rowvec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (rows, n) = self.rows_cols(x);
        self.check_vec_len("mul_rowvec", x, v, n)?;
        let xd = self.value(x).data();
        let vd = self.value(v).data();
        let mut out = vec![T::ZERO; rows * n];
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] = xd[r * n + j] * vd[j];
            }
        }
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push_node(t, Op::MulRowVec(x, v), rg))
    }

    pub fn add_rowvec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (rows, n) = self.rows_cols(x);
        self.check_vec_len("add_rowvec", x, v, n)?;
        let xd = self.value(x).data();
        let vd = self.value(v).data();
        let mut out = vec![T::ZERO; rows * n];
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] = xd[r * n + j] + vd[j];
            }
        }
        let t = Tensor::from_vec(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push_node(t, Op::AddRowVec(x, v), rg))
    }

    /// Scales channel c of a CHW image by `v[c]`.
    pub fn mul_chanvec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        self.check_vec_len("mul_chanvec", x, v, c)?;
        let xd = self.value(x).data();
        let vd = self.value(v).data();
        let mut out = vec![T::ZERO; c * h * w];
        for ci in 0..c {
            let f = vd[ci];
            for i in 0..h * w {
                out[ci * h * w + i] = xd[ci * h * w + i] * f;
            }
        }
        let t = Tensor::from_vec(vec![c, h, w], out)?;
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push_node(t, Op::MulChanVec(x, v), rg))
    }

    pub fn add_chanvec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        self.check_vec_len("add_chanvec", x, v, c)?;
        let xd = self.value(x).data();
        let vd = self.value(v).data();
        let mut out = vec![T::ZERO; c * h * w];
        for ci in 0..c {
            let a = vd[ci];
            for i in 0..h * w {
                out[ci * h * w + i] = xd[ci * h * w + i] + a;
            }
        }
        let t = Tensor::from_vec(vec![c, h, w], out)?;
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push_node(t, Op::AddChanVec(x, v), rg))
    }

    // ── reductions ──────────────────────────────────────────────────────

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut s = T::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        let rg = self.rg(a);
        self.push_node(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let mut s = T::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        let mean = s / T::from_f64(n as f64);
        let rg = self.rg(a);
        self.push_node(Tensor::scalar(mean), Op::MeanAll(a), rg)
    }

    /// CTC loss over per-frame log-probabilities [n_frames, n_classes].
    pub fn ctc_loss(&mut self, log_probs: Var, targets: &[usize], blank: usize) -> Result<Var> {
        let (frames, classes) = self.value(log_probs).mat()?;
        let lp: Vec<f64> = self.value(log_probs).data().iter().map(|v| v.to_f64()).collect();
        let (loss, _alpha) = ctc::ctc_forward(&lp, frames, classes, targets, blank)?;
        let rg = self.rg(log_probs);
        Ok(self.push_node(
            Tensor::scalar(T::from_f64(loss)),
            Op::Ctc {
                log_probs,
                targets: targets.to_vec(),
                blank,
            },
            rg,
        ))
    }

    // ── composites ──────────────────────────────────────────────────────

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Scaled dot-product attention. q: [m, d], k/v: [n, d], d % n_heads == 0.
    /// Softmax runs over the keys for each query row and head.
    pub fn attention(&mut self, q: Var, kk: Var, v: Var, n_heads: usize) -> Result<Var> {
        let (_m, dq) = self.value(q).mat()?;
        let (nk, dk) = self.value(kk).mat()?;
        let (nv, dv) = self.value(v).mat()?;
        if dq != dk || dq != dv || nk != nv {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: self.value(q).shape().to_vec(),
                rhs: self.value(kk).shape().to_vec(),
            });
        }
        if n_heads == 0 || dq % n_heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("width {dq} not divisible by {n_heads} heads"),
            ));
        }
        let dh = dq / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut merged: Option<Var> = None;
        for hidx in 0..n_heads {
            let (qh, kh, vh) = if n_heads == 1 {
                (q, kk, v)
            } else {
                (
                    self.slice(q, 1, hidx * dh, dh)?,
                    self.slice(kk, 1, hidx * dh, dh)?,
                    self.slice(v, 1, hidx * dh, dh)?,
                )
            };
            let kt = self.transpose(kh)?;
            let scores = self.matmul(qh, kt)?;
            let scaled = self.scale(scores, scale);
            let attn = self.softmax(scaled)?;
            let out = self.matmul(attn, vh)?;
            merged = Some(match merged {
                None => out,
                Some(acc) => self.concat(1, acc, out)?,
            });
        }
        Ok(merged.expect("n_heads >= 1"))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar output. Every recorded node is visited at
    /// most once, in reverse recording order. All parameter leaves end up
    /// with a gradient entry; leaves the output does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("expected scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut slots: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(vec![T::ONE]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.rg {
                continue;
            }
            let Some(gout) = slots[id].take() else {
                continue;
            };
            let keep = matches!(node.op, Op::Leaf);
            self.propagate(id, &node.op, &gout, &mut slots);
            if keep {
                slots[id] = Some(gout);
            }
        }

        // Unreached trainable leaves get explicit zeros.
        for (_, &v) in self.params.iter() {
            if slots[v.0].is_none() {
                slots[v.0] = Some(vec![T::ZERO; self.value(v).numel()]);
            }
        }
        Ok(Grads { slots })
    }

    fn acc(&self, slots: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if !self.rg(v) {
            return;
        }
        match &mut slots[v.0] {
            Some(buf) => {
                for (d, s) in buf.iter_mut().zip(g) {
                    *d += *s;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    fn propagate(&self, id: usize, op: &Op, gout: &[T], slots: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(slots, *a, gout);
                self.acc(slots, *b, gout);
            }
            Op::Sub(a, b) => {
                self.acc(slots, *a, gout);
                if self.rg(*b) {
                    let neg: Vec<T> = gout.iter().map(|&g| -g).collect();
                    self.acc(slots, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let g: Vec<T> = gout
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    self.acc(slots, *a, &g);
                }
                if self.rg(*b) {
                    let g: Vec<T> = gout
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&g, &x)| g * x)
                        .collect();
                    self.acc(slots, *b, &g);
                }
            }
            Op::Scale(a, f) => {
                let f = T::from_f64(*f);
                let g: Vec<T> = gout.iter().map(|&g| g * f).collect();
                self.acc(slots, *a, &g);
            }
            Op::MatMul(a, b) => {
                let (m, kdim) = self.value(*a).mat().expect("checked at record");
                let n = self.value(*b).shape()[1];
                if self.rg(*a) {
                    // dA = dC @ B^T
                    let mut da = vec![T::ZERO; m * kdim];
                    k::matmul_nt(gout, self.value(*b).data(), m, n, kdim, &mut da);
                    self.acc(slots, *a, &da);
                }
                if self.rg(*b) {
                    // dB = A^T @ dC
                    let mut db = vec![T::ZERO; kdim * n];
                    k::matmul_tn(self.value(*a).data(), gout, kdim, m, n, &mut db);
                    self.acc(slots, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).mat().expect("checked");
                let mut g = vec![T::ZERO; m * n];
                k::transpose(gout, n, m, &mut g);
                self.acc(slots, *a, &g);
            }
            Op::Reshape(a) => {
                self.acc(slots, *a, gout);
            }
            Op::Conv2d { x, w, b, pad } => {
                let (cin, h, win) = self.value(*x).chw().expect("checked");
                let ws = self.value(*w).shape();
                let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
                let oh = h + 2 * pad + 1 - kh;
                let ow = win + 2 * pad + 1 - kw;
                if self.rg(*b) {
                    let mut db = vec![T::ZERO; cout];
                    for co in 0..cout {
                        let mut s = T::ZERO;
                        for &g in &gout[co * oh * ow..(co + 1) * oh * ow] {
                            s += g;
                        }
                        db[co] = s;
                    }
                    self.acc(slots, *b, &db);
                }
                let kk2 = cin * kh * kw;
                if self.rg(*w) || self.rg(*x) {
                    let mut cols = vec![T::ZERO; kk2 * oh * ow];
                    k::im2col(self.value(*x).data(), cin, h, win, kh, kw, *pad, &mut cols);
                    if self.rg(*w) {
                        // dW = dY @ cols^T
                        let mut dw = vec![T::ZERO; cout * kk2];
                        k::matmul_nt(gout, &cols, cout, oh * ow, kk2, &mut dw);
                        self.acc(slots, *w, &dw);
                    }
                    if self.rg(*x) {
                        // dcols = W^T @ dY, then scatter back
                        let mut dcols = vec![T::ZERO; kk2 * oh * ow];
                        k::matmul_tn(self.value(*w).data(), gout, kk2, cout, oh * ow, &mut dcols);
                        let mut dx = vec![T::ZERO; cin * h * win];
                        k::col2im(&dcols, cin, h, win, kh, kw, *pad, &mut dx);
                        self.acc(slots, *x, &dx);
                    }
                }
            }
            Op::UpsampleNearest2x(a) => {
                let (c, h, w) = self.value(*a).chw().expect("checked");
                let mut dx = vec![T::ZERO; c * h * w];
                k::upsample_nearest_2x_backward(gout, c, h, w, &mut dx);
                self.acc(slots, *a, &dx);
            }
            Op::DownsampleAvg2x(a) => {
                let (c, h, w) = self.value(*a).chw().expect("checked");
                let mut dx = vec![T::ZERO; c * h * w];
                k::downsample_avg_2x_backward(gout, c, h, w, &mut dx);
                self.acc(slots, *a, &dx);
            }
            Op::Softmax(a) => {
                let (rows, n) = self.rows_cols(*a);
                let mut dx = vec![T::ZERO; rows * n];
                k::softmax_rows_backward(self.nodes[id].value.data(), gout, rows, n, &mut dx);
                self.acc(slots, *a, &dx);
            }
            Op::LogSoftmax(a) => {
                let (rows, n) = self.rows_cols(*a);
                let mut dx = vec![T::ZERO; rows * n];
                k::log_softmax_rows_backward(self.nodes[id].value.data(), gout, rows, n, &mut dx);
                self.acc(slots, *a, &dx);
            }
            Op::LayerNorm(a) => {
                let (rows, n) = self.rows_cols(*a);
                let mut dx = vec![T::ZERO; rows * n];
                k::layer_norm_rows_backward(self.value(*a).data(), gout, rows, n, &mut dx);
                self.acc(slots, *a, &dx);
            }
            Op::Gelu(a) => {
                let g: Vec<T> = gout
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&g, &x)| g * k::gelu_grad(x))
                    .collect();
                self.acc(slots, *a, &g);
            }
            Op::Silu(a) => {
                let g: Vec<T> = gout
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&g, &x)| g * k::silu_grad(x))
                    .collect();
                self.acc(slots, *a, &g);
            }
            Op::LnClamped(a) => {
                let floor = T::from_f64(LN_FLOOR);
                let g: Vec<T> = gout
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&g, &x)| if x > floor { g / x } else { T::ZERO })
                    .collect();
                self.acc(slots, *a, &g);
            }
            Op::Concat { axis, a, b } => {
                let sa = self.value(*a).shape();
                let sb = self.value(*b).shape();
                let outer: usize = sa[..*axis].iter().product();
                let block_a: usize = sa[*axis..].iter().product();
                let block_b: usize = sb[*axis..].iter().product();
                if self.rg(*a) {
                    let mut ga = vec![T::ZERO; outer * block_a];
                    for o in 0..outer {
                        let src = o * (block_a + block_b);
                        ga[o * block_a..(o + 1) * block_a]
                            .copy_from_slice(&gout[src..src + block_a]);
                    }
                    self.acc(slots, *a, &ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![T::ZERO; outer * block_b];
                    for o in 0..outer {
                        let src = o * (block_a + block_b) + block_a;
                        gb[o * block_b..(o + 1) * block_b]
                            .copy_from_slice(&gout[src..src + block_b]);
                    }
                    self.acc(slots, *b, &gb);
                }
            }
            Op::Slice { axis, start, len, x } => {
                let shape = self.value(*x).shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let dim = shape[*axis];
                let mut dx = vec![T::ZERO; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&gout[src..src + len * inner]);
                }
                self.acc(slots, *x, &dx);
            }
            Op::MulRowVec(x, v) => {
                let (rows, n) = self.rows_cols(*x);
                let vd = self.value(*v).data();
                if self.rg(*x) {
                    let mut g = vec![T::ZERO; rows * n];
                    for r in 0..rows {
                        for j in 0..n {
                            g[r * n + j] = gout[r * n + j] * vd[j];
                        }
                    }
                    self.acc(slots, *x, &g);
                }
                if self.rg(*v) {
                    let xd = self.value(*x).data();
                    let mut g = vec![T::ZERO; n];
                    for r in 0..rows {
                        for j in 0..n {
                            g[j] = gout[r * n + j].mul_add(xd[r * n + j], g[j]);
                        }
                    }
                    self.acc(slots, *v, &g);
                }
            }
            Op::AddRowVec(x, v) => {
                self.acc(slots, *x, gout);
                if self.rg(*v) {
                    let (rows, n) = self.rows_cols(*x);
                    let mut g = vec![T::ZERO; n];
                    for r in 0..rows {
                        for j in 0..n {
                            g[j] += gout[r * n + j];
                        }
                    }
                    self.acc(slots, *v, &g);
                }
            }
            Op::MulChanVec(x, v) => {
                let (c, h, w) = self.value(*x).chw().expect("checked");
                let vd = self.value(*v).data();
                if self.rg(*x) {
                    let mut g = vec![T::ZERO; c * h * w];
                    for ci in 0..c {
                        let f = vd[ci];
                        for i in 0..h * w {
                            g[ci * h * w + i] = gout[ci * h * w + i] * f;
                        }
                    }
                    self.acc(slots, *x, &g);
                }
                if self.rg(*v) {
                    let xd = self.value(*x).data();
                    let mut g = vec![T::ZERO; c];
                    for ci in 0..c {
                        let mut s = T::ZERO;
                        for i in 0..h * w {
                            s = gout[ci * h * w + i].mul_add(xd[ci * h * w + i], s);
                        }
                        g[ci] = s;
                    }
                    self.acc(slots, *v, &g);
                }
            }
            Op::AddChanVec(x, v) => {
                self.acc(slots, *x, gout);
                if self.rg(*v) {
                    let (c, h, w) = self.value(*x).chw().expect("checked");
                    let mut g = vec![T::ZERO; c];
                    for ci in 0..c {
                        let mut s = T::ZERO;
                        for i in 0..h * w {
                            s += gout[ci * h * w + i];
                        }
                        g[ci] = s;
                    }
                    self.acc(slots, *v, &g);
                }
            }
            Op::SumAll(a) => {
                let g = vec![gout[0]; self.value(*a).numel()];
                self.acc(slots, *a, &g);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).numel();
                let g = vec![gout[0] / T::from_f64(n as f64); n];
                self.acc(slots, *a, &g);
            }
            Op::Ctc { log_probs, targets, blank } => {
                let (frames, classes) = self.value(*log_probs).mat().expect("checked");
                let lp: Vec<f64> = self
                    .value(*log_probs)
                    .data()
                    .iter()
                    .map(|v| v.to_f64())
                    .collect();
                let (_, alpha) = ctc::ctc_forward(&lp, frames, classes, targets, *blank)
                    .expect("checked at record");
                let mut g64 = vec![0.0f64; frames * classes];
                ctc::ctc_backward(
                    &lp,
                    frames,
                    classes,
                    targets,
                    *blank,
                    &alpha,
                    gout[0].to_f64(),
                    &mut g64,
                );
                let g: Vec<T> = g64.into_iter().map(T::from_f64).collect();
                self.acc(slots, *log_probs, &g);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Reshape(..) => "reshape",
        Op::Conv2d { .. } => "conv2d",
        Op::UpsampleNearest2x(..) => "upsample_nearest_2x",
        Op::DownsampleAvg2x(..) => "downsample_avg_2x",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::LayerNorm(..) => "layer_norm",
        Op::Gelu(..) => "gelu",
        Op::Silu(..) => "silu",
        Op::LnClamped(..) => "ln_clamped",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::MulRowVec(..) => "mul_rowvec",
        Op::AddRowVec(..) => "add_rowvec",
        Op::MulChanVec(..) => "mul_chanvec",
        Op::AddChanVec(..) => "add_chanvec",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::Ctc { .. } => "ctc_loss",
    }
}
