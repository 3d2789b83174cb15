//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass; calling
//! [`Tape::backward`] on a scalar loss walks the recording once in reverse
//! and accumulates gradients into every `requires_grad` leaf. The tape is
//! rebuilt each forward pass (dynamic graph), and a tape together with its
//! tensors is confined to one worker.

mod adam;

pub use adam::{adam_step, AdamParams, AdamState};

use crate::{Error, Result};

/// Plain tensor storage: shape plus contiguous row-major values. Model
/// parameters live outside the tape as `Tensor`s and are leafed in each
/// forward pass.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/value mismatch");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Op {
    Leaf,
    MatMul { a: VarId, b: VarId },
    Add { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Scale { a: VarId, c: f64 },
    Transpose { a: VarId, d1: usize, d2: usize },
    Reshape { a: VarId },
    Concat { a: VarId, b: VarId },
    Softmax { a: VarId },
    LayerNorm { a: VarId, gamma: VarId, beta: VarId, normalized: Vec<f64>, inv_std: Vec<f64>, floored: Vec<bool> },
    GeluApprox { a: VarId },
    Embedding { table: VarId, ids: Vec<usize> },
    CrossEntropyMasked { logits: VarId, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f64>, n_masked: usize },
    Sum { a: VarId },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records primitives and replays them backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

const GELU_COEF: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEF * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * GELU_COEF * x * x)
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn value(&self, id: VarId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Gradient of a leaf after `backward`; `None` if it never received one.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> VarId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { shape, data, grad: None, requires_grad, op });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leafs a parameter tensor into the tape (gradient will be tracked).
    pub fn param(&mut self, t: &Tensor) -> VarId {
        self.push(t.shape.clone(), t.data.clone(), true, Op::Leaf)
    }

    /// Leafs a constant (no gradient).
    pub fn constant(&mut self, t: &Tensor) -> VarId {
        self.push(t.shape.clone(), t.data.clone(), false, Op::Leaf)
    }

    /// Matrix product over the last two dims with broadcast over leading
    /// dims: either both operands carry identical leading dims, or one is a
    /// plain matrix shared across the other's batches.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::ShapeMismatch { op: "matmul", shapes: format!("{} x {}", shape_str(&sa), shape_str(&sb)) });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let la = &sa[..sa.len() - 2];
        let lb = &sb[..sb.len() - 2];
        let batch_ok = la == lb || la.is_empty() || lb.is_empty();
        if k != k2 || !batch_ok {
            return Err(Error::ShapeMismatch { op: "matmul", shapes: format!("{} x {}", shape_str(&sa), shape_str(&sb)) });
        }
        let lead: Vec<usize> = if la.is_empty() { lb.to_vec() } else { la.to_vec() };
        let batch: usize = lead.iter().product::<usize>().max(1);
        let a_stride = if la.is_empty() && !lb.is_empty() { 0 } else { m * k };
        let b_stride = if lb.is_empty() && !la.is_empty() { 0 } else { k * n };

        let mut out = vec![0.0; batch * m * n];
        {
            let da = self.value(a);
            let db = self.value(b);
            for t in 0..batch {
                let pa = &da[t * a_stride..t * a_stride + m * k];
                let pb = &db[t * b_stride..t * b_stride + k * n];
                let po = &mut out[t * m * n..(t + 1) * m * n];
                for i in 0..m {
                    for l in 0..k {
                        let av = pa[i * k + l];
                        if av == 0.0 {
                            continue;
                        }
                        let rb = &pb[l * n..(l + 1) * n];
                        let ro = &mut po[i * n..(i + 1) * n];
                        for j in 0..n {
                            ro[j] += av * rb[j];
                        }
                    }
                }
            }
        }
        let mut shape = lead;
        shape.push(m);
        shape.push(n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, rg, Op::MatMul { a, b }))
    }

    /// Elementwise addition; the smaller operand's shape must be a suffix of
    /// the larger's (broadcast over leading dims).
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (big, small, big_is_a) = if sa.len() >= sb.len() { (&sa, &sb, true) } else { (&sb, &sa, false) };
        if &big[big.len() - small.len()..] != small.as_slice() {
            return Err(Error::ShapeMismatch { op: "add", shapes: format!("{} + {}", shape_str(&sa), shape_str(&sb)) });
        }
        let chunk: usize = small.iter().product::<usize>().max(1);
        let (da, db) = (self.value(a), self.value(b));
        let (dbig, dsmall) = if big_is_a { (da, db) } else { (db, da) };
        let mut out = Vec::with_capacity(dbig.len());
        for (i, v) in dbig.iter().enumerate() {
            out.push(v + dsmall[i % chunk]);
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(big.clone(), out, rg, Op::Add { a, b }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                shapes: format!("{} * {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            });
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Mul { a, b }))
    }

    /// Multiplies by a compile-time scalar.
    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let out: Vec<f64> = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::Scale { a, c })
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: VarId, d1: usize, d2: usize) -> Result<VarId> {
        let shape = self.shape(a).to_vec();
        if d1 >= shape.len() || d2 >= shape.len() {
            return Err(Error::ShapeMismatch { op: "transpose", shapes: format!("{} axes {d1},{d2}", shape_str(&shape)) });
        }
        let out_shape = swapped(&shape, d1, d2);
        let out = permuted_copy(self.value(a), &shape, d1, d2);
        let rg = self.needs(a);
        Ok(self.push(out_shape, out, rg, Op::Transpose { a, d1, d2 }))
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                shapes: format!("{} -> {}", shape_str(self.shape(a)), shape_str(&shape)),
            });
        }
        let data = self.value(a).to_vec();
        let rg = self.needs(a);
        Ok(self.push(shape, data, rg, Op::Reshape { a }))
    }

    /// Concatenates along the last dim; leading dims must match.
    pub fn concat(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::ShapeMismatch { op: "concat", shapes: format!("{} ++ {}", shape_str(&sa), shape_str(&sb)) });
        }
        let (wa, wb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).len() / wa;
        let mut out = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            out.extend_from_slice(&self.value(a)[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&self.value(b)[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = wa + wb;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, rg, Op::Concat { a, b }))
    }

    /// Max-subtracted softmax over the last dim.
    pub fn softmax(&mut self, a: VarId) -> VarId {
        let shape = self.shape(a).to_vec();
        let w = *shape.last().unwrap_or(&1);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(w) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.needs(a);
        self.push(shape, out, rg, Op::Softmax { a })
    }

    /// Layer normalization over the last dim with learned scale and shift.
    pub fn layer_norm(&mut self, a: VarId, gamma: VarId, beta: VarId) -> Result<VarId> {
        const EPS: f64 = 1e-5;
        let shape = self.shape(a).to_vec();
        let w = *shape.last().unwrap_or(&1);
        if self.shape(gamma) != [w] || self.shape(beta) != [w] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                shapes: format!(
                    "{} with scale {} shift {}",
                    shape_str(&shape),
                    shape_str(self.shape(gamma)),
                    shape_str(self.shape(beta))
                ),
            });
        }
        let n_rows = self.value(a).len() / w;
        let mut normalized = vec![0.0; self.value(a).len()];
        let mut inv_std = vec![0.0; n_rows];
        let mut floored = vec![false; n_rows];
        let mut out = vec![0.0; self.value(a).len()];
        {
            let x = self.value(a);
            let g = self.value(gamma);
            let b = self.value(beta);
            for r in 0..n_rows {
                let row = &x[r * w..(r + 1) * w];
                let mean = row.iter().sum::<f64>() / w as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
                // epsilon is a floor, so non-degenerate rows normalize to
                // variance exactly one
                floored[r] = var < EPS;
                let istd = 1.0 / var.max(EPS).sqrt();
                inv_std[r] = istd;
                for j in 0..w {
                    let xhat = (row[j] - mean) * istd;
                    normalized[r * w + j] = xhat;
                    out[r * w + j] = g[j] * xhat + b[j];
                }
            }
        }
        let rg = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(shape, out, rg, Op::LayerNorm { a, gamma, beta, normalized, inv_std, floored }))
    }

    /// tanh-approximated GELU activation.
    pub fn gelu_approx(&mut self, a: VarId) -> VarId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, rg, Op::GeluApprox { a })
    }

    /// Gathers rows of an embedding table: output shape `ids_shape ++ [d]`.
    pub fn embedding_lookup(&mut self, table: VarId, ids: &[usize], ids_shape: &[usize]) -> Result<VarId> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::ShapeMismatch { op: "embedding_lookup", shapes: shape_str(&ts) });
        }
        let (v, d) = (ts[0], ts[1]);
        if ids.len() != ids_shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                shapes: format!("{} ids vs shape {}", ids.len(), shape_str(ids_shape)),
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::ShapeMismatch {
                    op: "embedding_lookup",
                    shapes: format!("id {id} outside table height {v}"),
                });
            }
            out.extend_from_slice(&self.value(table)[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let rg = self.needs(table);
        Ok(self.push(shape, out, rg, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Mean cross-entropy over mask-true positions. `logits` has shape
    /// `(..., classes)`; `targets`/`mask` are flat over the leading dims.
    pub fn cross_entropy_masked(&mut self, logits: VarId, targets: &[usize], mask: &[bool]) -> Result<VarId> {
        let shape = self.shape(logits).to_vec();
        let classes = *shape.last().unwrap_or(&1);
        let rows = self.value(logits).len() / classes;
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_masked",
                shapes: format!("{rows} rows vs {} targets / {} mask", targets.len(), mask.len()),
            });
        }
        let n_masked = mask.iter().filter(|&&m| m).count();
        if n_masked == 0 {
            return Err(Error::ShapeMismatch { op: "cross_entropy_masked", shapes: "empty mask".into() });
        }
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        {
            let x = self.value(logits);
            for r in 0..rows {
                let row = &x[r * classes..(r + 1) * classes];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..classes {
                    let e = (row[j] - max).exp();
                    probs[r * classes + j] = e;
                    sum += e;
                }
                for j in 0..classes {
                    probs[r * classes + j] /= sum;
                }
                if mask[r] {
                    loss -= probs[r * classes + targets[r]].max(1e-300).ln();
                }
            }
        }
        loss /= n_masked as f64;
        let rg = self.needs(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropyMasked { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, n_masked },
        ))
    }

    /// Sum of all elements (scalar).
    pub fn sum(&mut self, a: VarId) -> VarId {
        let total: f64 = self.value(a).iter().sum();
        let rg = self.needs(a);
        self.push(vec![1], vec![total], rg, Op::Sum { a })
    }

    fn accumulate(&mut self, id: VarId, delta: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].data.len();
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Populates gradients of every `requires_grad` node reachable from the
    /// scalar `loss`. A second call without a fresh forward pass is rejected.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.backward_done {
            return Err(Error::ShapeMismatch { op: "backward", shapes: "tape already consumed".into() });
        }
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                shapes: format!("loss must be scalar, got {}", shape_str(self.shape(loss))),
            });
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = self.nodes[i].grad.clone() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let sa = self.shape(a).to_vec();
                    let sb = self.shape(b).to_vec();
                    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                    let n = sb[sb.len() - 1];
                    let batch = grad_out.len() / (m * n);
                    let a_stride = if sa.len() == 2 && sb.len() > 2 { 0 } else { m * k };
                    let b_stride = if sb.len() == 2 && sa.len() > 2 { 0 } else { k * n };
                    if self.needs(a) {
                        let mut da = vec![0.0; self.value(a).len()];
                        let db = self.value(b);
                        for t in 0..batch {
                            let go = &grad_out[t * m * n..(t + 1) * m * n];
                            let pb = &db[t * b_stride..t * b_stride + k * n];
                            let pa = &mut da[t * a_stride..t * a_stride + m * k];
                            // dA = dC . B^T
                            for ii in 0..m {
                                for j in 0..n {
                                    let g = go[ii * n + j];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for l in 0..k {
                                        pa[ii * k + l] += g * pb[l * n + j];
                                    }
                                }
                            }
                        }
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let mut dbg = vec![0.0; self.value(b).len()];
                        let da = self.value(a);
                        for t in 0..batch {
                            let go = &grad_out[t * m * n..(t + 1) * m * n];
                            let pa = &da[t * a_stride..t * a_stride + m * k];
                            let pb = &mut dbg[t * b_stride..t * b_stride + k * n];
                            // dB = A^T . dC
                            for ii in 0..m {
                                for l in 0..k {
                                    let av = pa[ii * k + l];
                                    if av == 0.0 {
                                        continue;
                                    }
                                    for j in 0..n {
                                        pb[l * n + j] += av * go[ii * n + j];
                                    }
                                }
                            }
                        }
                        self.accumulate(b, &dbg);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for id in [a, b] {
                        if !self.needs(id) {
                            continue;
                        }
                        let n = self.value(id).len();
                        if n == grad_out.len() {
                            self.accumulate(id, &grad_out);
                        } else {
                            // smaller operand: fold grads over leading dims
                            let mut folded = vec![0.0; n];
                            for (i, g) in grad_out.iter().enumerate() {
                                folded[i % n] += g;
                            }
                            self.accumulate(id, &folded);
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let da: Vec<f64> = grad_out.iter().zip(self.value(b)).map(|(g, y)| g * y).collect();
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<f64> = grad_out.iter().zip(self.value(a)).map(|(g, x)| g * x).collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    let da: Vec<f64> = grad_out.iter().map(|g| g * c).collect();
                    self.accumulate(a, &da);
                }
                Op::Transpose { a, d1, d2 } => {
                    let (a, d1, d2) = (*a, *d1, *d2);
                    let out_shape = self.nodes[i].shape.clone();
                    let da = permuted_copy(&grad_out, &out_shape, d1, d2);
                    self.accumulate(a, &da);
                }
                Op::Reshape { a } => {
                    let a = *a;
                    self.accumulate(a, &grad_out);
                }
                Op::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let wa = *self.shape(a).last().unwrap();
                    let wb = *self.shape(b).last().unwrap();
                    let rows = grad_out.len() / (wa + wb);
                    if self.needs(a) {
                        let mut da = Vec::with_capacity(rows * wa);
                        for r in 0..rows {
                            da.extend_from_slice(&grad_out[r * (wa + wb)..r * (wa + wb) + wa]);
                        }
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let mut db = Vec::with_capacity(rows * wb);
                        for r in 0..rows {
                            db.extend_from_slice(&grad_out[r * (wa + wb) + wa..(r + 1) * (wa + wb)]);
                        }
                        self.accumulate(b, &db);
                    }
                }
                Op::Softmax { a } => {
                    let a = *a;
                    let w = *self.nodes[i].shape.last().unwrap_or(&1);
                    let y = self.nodes[i].data.clone();
                    let mut da = vec![0.0; y.len()];
                    for r in 0..y.len() / w {
                        let yr = &y[r * w..(r + 1) * w];
                        let gr = &grad_out[r * w..(r + 1) * w];
                        let dot: f64 = yr.iter().zip(gr).map(|(v, g)| v * g).sum();
                        for j in 0..w {
                            da[r * w + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm { a, gamma, beta, normalized, inv_std, floored } => {
                    let (a, gamma, beta) = (*a, *gamma, *beta);
                    let normalized = normalized.clone();
                    let inv_std = inv_std.clone();
                    let floored = floored.clone();
                    let w = *self.nodes[i].shape.last().unwrap_or(&1);
                    let n_rows = normalized.len() / w;
                    let gvals = self.value(gamma).to_vec();
                    if self.needs(gamma) {
                        let mut dg = vec![0.0; w];
                        for r in 0..n_rows {
                            for j in 0..w {
                                dg[j] += grad_out[r * w + j] * normalized[r * w + j];
                            }
                        }
                        self.accumulate(gamma, &dg);
                    }
                    if self.needs(beta) {
                        let mut db = vec![0.0; w];
                        for r in 0..n_rows {
                            for j in 0..w {
                                db[j] += grad_out[r * w + j];
                            }
                        }
                        self.accumulate(beta, &db);
                    }
                    if self.needs(a) {
                        let mut da = vec![0.0; normalized.len()];
                        for r in 0..n_rows {
                            let mut sum_dyg = 0.0;
                            let mut sum_dyg_xhat = 0.0;
                            for j in 0..w {
                                let dyg = grad_out[r * w + j] * gvals[j];
                                sum_dyg += dyg;
                                sum_dyg_xhat += dyg * normalized[r * w + j];
                            }
                            for j in 0..w {
                                let dyg = grad_out[r * w + j] * gvals[j];
                                // on floored rows inv_std is a constant, so
                                // the variance term drops out
                                let var_term = if floored[r] {
                                    0.0
                                } else {
                                    normalized[r * w + j] * sum_dyg_xhat / w as f64
                                };
                                da[r * w + j] =
                                    inv_std[r] * (dyg - sum_dyg / w as f64 - var_term);
                            }
                        }
                        self.accumulate(a, &da);
                    }
                }
                Op::GeluApprox { a } => {
                    let a = *a;
                    let da: Vec<f64> = self
                        .value(a)
                        .iter()
                        .zip(&grad_out)
                        .map(|(&x, g)| g * gelu_grad(x))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Embedding { table, ids } => {
                    let table = *table;
                    let ids = ids.clone();
                    let d = self.shape(table)[1];
                    let mut dt = vec![0.0; self.value(table).len()];
                    for (pos, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += grad_out[pos * d + j];
                        }
                    }
                    self.accumulate(table, &dt);
                }
                Op::CrossEntropyMasked { logits, targets, mask, probs, n_masked } => {
                    let logits = *logits;
                    let targets = targets.clone();
                    let mask = mask.clone();
                    let probs = probs.clone();
                    let n_masked = *n_masked;
                    let classes = *self.shape(logits).last().unwrap();
                    let scale = grad_out[0] / n_masked as f64;
                    let mut dl = vec![0.0; probs.len()];
                    for (r, (&target, &masked)) in targets.iter().zip(&mask).enumerate() {
                        if !masked {
                            continue;
                        }
                        for j in 0..classes {
                            let onehot = (j == target) as u8 as f64;
                            dl[r * classes + j] = scale * (probs[r * classes + j] - onehot);
                        }
                    }
                    self.accumulate(logits, &dl);
                }
                Op::Sum { a } => {
                    let a = *a;
                    let da = vec![grad_out[0]; self.value(a).len()];
                    self.accumulate(a, &da);
                }
            }
        }
        Ok(())
    }
}

fn swapped(shape: &[usize], d1: usize, d2: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.swap(d1, d2);
    s
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `data` (of `shape`) into the layout with axes `d1`/`d2` swapped.
fn permuted_copy(data: &[f64], shape: &[usize], d1: usize, d2: usize) -> Vec<f64> {
    if d1 == d2 {
        return data.to_vec();
    }
    let out_shape = swapped(shape, d1, d2);
    let in_strides = strides(shape);
    let out_strides = strides(&out_shape);
    let mut out = vec![0.0; data.len()];
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for &v in data {
        // map input multi-index to output multi-index (d1 <-> d2 swapped)
        let mut off = 0;
        for (axis, &i) in idx.iter().enumerate() {
            let out_axis = if axis == d1 { d2 } else if axis == d2 { d1 } else { axis };
            off += i * out_strides[out_axis];
        }
        out[off] = v;
        // increment the multi-index
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
        let _ = in_strides;
    }
    out
}
