//! A small reverse-mode tape over [`Tensor`] values.
//!
//! Ops are coarse (a whole linear layer, a whole multi-head attention) and
//! each carries its own hand-derived adjoint. Activations are 2-D
//! `[rows, features]` matrices where rows enumerate `(batch, time)`.

use std::borrow::Cow;

use rand::Rng;

use crate::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Layout of one multi-head attention call.
#[derive(Debug, Clone)]
pub struct AttentionShape {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub heads: usize,
    /// `[batch * k_len]`, true where the key may be attended to.
    pub key_mask: Vec<bool>,
    /// Query `i` only sees keys `j <= i`.
    pub causal: bool,
}

impl AttentionShape {
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.key_mask[b * self.k_len + j] && (!self.causal || j <= i)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Add(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    TiedProjection {
        x: Var,
        table: Var,
    },
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// The tape. Leaves may borrow their tensors for the graph's lifetime.
#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn accumulate<'a>(slot: &'a mut Option<Tensor>, shape: &[usize]) -> &'a mut Tensor {
    slot.get_or_insert_with(|| Tensor::zeros(shape))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf that borrows `value` instead of copying it.
    pub fn leaf_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let d = t.cols();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(t.row(id));
        }
        let value = Tensor::from_vec(&[ids.len(), d], out);
        self.push(value, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// `x[m,in] * w[in,out] + b[out]`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.cols(), k, "linear input width");
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm_nn(xv.data(), wv.data(), &mut out, m, k, n);
        let value = Tensor::from_vec(&[m, n], out);
        self.push(value, Op::Linear { x, w, b })
    }

    /// `x[m,d] * table[v,d]^T`
    pub fn tied_projection(&mut self, x: Var, table: Var) -> Var {
        let (xv, tv) = (self.value(x), self.value(table));
        let (m, d, v) = (xv.rows(), xv.cols(), tv.rows());
        assert_eq!(tv.cols(), d, "projection width");
        let mut out = vec![0.0; m * v];
        gemm_nt(xv.data(), tv.data(), &mut out, m, d, v);
        let value = Tensor::from_vec(&[m, v], out);
        self.push(value, Op::TiedProjection { x, table })
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::from_vec(xv.shape(), xv.data().iter().map(|&z| gelu(z)).collect());
        self.push(value, Op::Gelu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, d) = (xv.rows(), xv.cols());
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = g.data()[c] * h + b.data()[c];
            }
        }
        let value = Tensor::from_vec(&[rows, d], out);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Inverted dropout; a zero rate adds no node.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value = Tensor::from_vec(
            xv.shape(),
            xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        );
        self.push(value, Op::Dropout { x, mask })
    }

    /// Scaled dot-product attention over `shape.heads` heads. Masked keys
    /// get exactly zero probability.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (bsz, tq, tk, heads) = (shape.batch, shape.q_len, shape.k_len, shape.heads);
        assert_eq!(qv.rows(), bsz * tq, "query rows");
        assert_eq!(kv.rows(), bsz * tk, "key rows");
        let mut probs = vec![0.0; bsz * heads * tq * tk];
        let mut out = vec![0.0; bsz * tq * d];
        let mut scores = vec![0.0; tk];
        for b in 0..bsz {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..tq {
                    let q_row = &qv.row(b * tq + i)[cols.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..tk {
                        if shape.allowed(b, i, j) {
                            let s = scale * dot(q_row, &kv.row(b * tk + j)[cols.clone()]);
                            scores[j] = s;
                            max = max.max(s);
                        }
                    }
                    let p_row = &mut probs[((b * heads + h) * tq + i) * tk..][..tk];
                    let mut sum = 0.0;
                    for j in 0..tk {
                        if shape.allowed(b, i, j) {
                            let e = (scores[j] - max).exp();
                            p_row[j] = e;
                            sum += e;
                        }
                    }
                    let o_row = &mut out[(b * tq + i) * d..][..d];
                    for j in 0..tk {
                        if shape.allowed(b, i, j) {
                            p_row[j] /= sum;
                            let p = p_row[j];
                            let v_row = &vv.row(b * tk + j)[cols.clone()];
                            for (o, &x) in o_row[cols.clone()].iter_mut().zip(v_row) {
                                *o += p * x;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[bsz * tq, d], out);
        self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
        )
    }

    /// Attention probabilities of an attention node, `[batch, heads, q, k]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean token cross-entropy over rows whose target is `Some`. Returns
    /// `None` when no row is supervised.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Option<Var> {
        let lv = self.value(logits);
        let (rows, classes) = (lv.rows(), lv.cols());
        assert_eq!(rows, targets.len(), "one target per logit row");
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return None;
        }
        let mut probs = vec![0.0; rows * classes];
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &z) in row.iter().enumerate() {
                let e = (z - max).exp();
                probs[r * classes + c] = e;
                sum += e;
            }
            for p in &mut probs[r * classes..(r + 1) * classes] {
                *p /= sum;
            }
            total += max + sum.ln() - row[t];
        }
        let value = Tensor::scalar(total / count as f64);
        Some(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Propagates d(root)/d(node) for every node `root` depends on.
    /// `root` must be a single-element tensor.
    pub fn backward(&self, root: Var) -> Adjoints {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Gather { table, ids } => {
                    let shape = self.value(*table).shape().to_vec();
                    let g = accumulate(&mut grads[table.0], &shape);
                    let d = shape[1];
                    for (r, &id) in ids.iter().enumerate() {
                        for (gi, &dyi) in g.data_mut()[id * d..(id + 1) * d].iter_mut().zip(dy.row(r)) {
                            *gi += dyi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], dy.shape()).add_assign(&dy);
                    accumulate(&mut grads[b.0], dy.shape()).add_assign(&dy);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (m, k, n) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                    gemm_nt(
                        dy.data(),
                        wv.data(),
                        accumulate(&mut grads[x.0], xv.shape()).data_mut(),
                        m,
                        n,
                        k,
                    );
                    gemm_tn(
                        xv.data(),
                        dy.data(),
                        accumulate(&mut grads[w.0], wv.shape()).data_mut(),
                        k,
                        m,
                        n,
                    );
                    let gb = accumulate(&mut grads[b.0], &[n]).data_mut();
                    for r in 0..m {
                        for (g, &d) in gb.iter_mut().zip(dy.row(r)) {
                            *g += d;
                        }
                    }
                }
                Op::TiedProjection { x, table } => {
                    let (xv, tv) = (self.value(*x), self.value(*table));
                    let (m, d, v) = (xv.rows(), xv.cols(), tv.rows());
                    gemm_nn(
                        dy.data(),
                        tv.data(),
                        accumulate(&mut grads[x.0], xv.shape()).data_mut(),
                        m,
                        v,
                        d,
                    );
                    gemm_tn(
                        dy.data(),
                        xv.data(),
                        accumulate(&mut grads[table.0], tv.shape()).data_mut(),
                        v,
                        m,
                        d,
                    );
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let g = accumulate(&mut grads[x.0], xv.shape());
                    for ((gi, &z), &d) in g.data_mut().iter_mut().zip(xv.data()).zip(dy.data()) {
                        *gi += d * gelu_grad(z);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain).data().to_vec();
                    let (rows, d) = (dy.rows(), dy.cols());
                    {
                        let gg = accumulate(&mut grads[gain.0], &[d]).data_mut();
                        for r in 0..rows {
                            for c in 0..d {
                                gg[c] += dy.data()[r * d + c] * xhat[r * d + c];
                            }
                        }
                    }
                    {
                        let gb = accumulate(&mut grads[bias.0], &[d]).data_mut();
                        for r in 0..rows {
                            for (g, &v) in gb.iter_mut().zip(dy.row(r)) {
                                *g += v;
                            }
                        }
                    }
                    let gx = accumulate(&mut grads[x.0], &[rows, d]).data_mut();
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let hrow = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dxhat[c] = dy.data()[r * d + c] * gv[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dxhat.iter().zip(hrow).map(|(a, h)| a * h).sum::<f64>() / d as f64;
                        for c in 0..d {
                            gx[r * d + c] += inv_std[r] * (dxhat[c] - m1 - hrow[c] * m2);
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let g = accumulate(&mut grads[x.0], dy.shape());
                    for ((gi, &d), &m) in g.data_mut().iter_mut().zip(dy.data()).zip(mask) {
                        *gi += d * m;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    shape,
                    probs,
                } => {
                    self.attention_backward(&dy, *q, *k, *v, shape, probs, &mut grads);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let lv = self.value(*logits);
                    let classes = lv.cols();
                    let scale = dy.data()[0] / *count as f64;
                    let g = accumulate(&mut grads[logits.0], lv.shape()).data_mut();
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let row = &mut g[r * classes..(r + 1) * classes];
                        for (gi, &p) in row.iter_mut().zip(&probs[r * classes..(r + 1) * classes]) {
                            *gi += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
        }
        Adjoints { grads }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        dy: &Tensor,
        q: Var,
        k: Var,
        v: Var,
        shape: &AttentionShape,
        probs: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        let dh = d / shape.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (bsz, tq, tk, heads) = (shape.batch, shape.q_len, shape.k_len, shape.heads);
        let mut dq = vec![0.0; qv.len()];
        let mut dk = vec![0.0; kv.len()];
        let mut dv = vec![0.0; vv.len()];
        let mut dp = vec![0.0; tk];
        for b in 0..bsz {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..tq {
                    let qi = (b * tq + i) * d + off;
                    let g_row = &dy.data()[qi..qi + dh];
                    let p_row = &probs[((b * heads + h) * tq + i) * tk..][..tk];
                    let mut weighted = 0.0;
                    for j in 0..tk {
                        if p_row[j] == 0.0 && !shape.allowed(b, i, j) {
                            continue;
                        }
                        let vj = (b * tk + j) * d + off;
                        dp[j] = dot(g_row, &vv.data()[vj..vj + dh]);
                        weighted += p_row[j] * dp[j];
                        for c in 0..dh {
                            dv[vj + c] += p_row[j] * g_row[c];
                        }
                    }
                    for j in 0..tk {
                        if !shape.allowed(b, i, j) {
                            continue;
                        }
                        let ds = scale * p_row[j] * (dp[j] - weighted);
                        let kj = (b * tk + j) * d + off;
                        for c in 0..dh {
                            dq[qi + c] += ds * kv.data()[kj + c];
                            dk[kj + c] += ds * qv.data()[qi + c];
                        }
                    }
                }
            }
        }
        accumulate(&mut grads[q.0], qv.shape()).add_assign(&Tensor::from_vec(qv.shape(), dq));
        accumulate(&mut grads[k.0], kv.shape()).add_assign(&Tensor::from_vec(kv.shape(), dk));
        accumulate(&mut grads[v.0], vv.shape()).add_assign(&Tensor::from_vec(vv.shape(), dv));
    }
}
