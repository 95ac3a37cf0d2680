use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a gradient tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(super) usize);

/// A tensor's link to the tape it was recorded on. The tape id guards
/// against mixing tensors across tapes.
#[derive(Debug, Clone, Copy)]
pub(super) struct TapeRef {
    pub tape_id: u64,
    pub node: NodeId,
}

/// Optional input edge: `None` for untracked (constant) inputs.
pub(super) type In = Option<NodeId>;

/// One recorded operation together with the values its backward rule needs.
#[derive(Debug)]
pub(super) enum Op {
    Leaf,
    Add {
        a: In,
        b: In,
    },
    Sub {
        a: In,
        b: In,
    },
    Mul {
        a: In,
        b: In,
        a_vals: Arc<Vec<f64>>,
        b_vals: Arc<Vec<f64>>,
    },
    Scale {
        x: In,
        factor: f64,
    },
    AddRowBias {
        x: In,
        bias: In,
        rows: usize,
        cols: usize,
    },
    Matmul {
        a: In,
        b: In,
        a_vals: Arc<Vec<f64>>,
        b_vals: Arc<Vec<f64>>,
        r: usize,
        k: usize,
        c: usize,
    },
    Relu {
        x: In,
        x_vals: Arc<Vec<f64>>,
    },
    Sigmoid {
        x: In,
        out_vals: Arc<Vec<f64>>,
    },
    Tanh {
        x: In,
        out_vals: Arc<Vec<f64>>,
    },
    Sum {
        x: In,
    },
    Reshape {
        x: In,
    },
    /// Rank-1 concatenation; `parts` holds each part's length.
    Concat {
        parts: Vec<(In, usize)>,
    },
    /// Column-wise concatenation of rank-2 tensors with equal row counts;
    /// `parts` holds each part's width.
    ConcatCols {
        parts: Vec<(In, usize)>,
        rows: usize,
    },
    SliceCols {
        x: In,
        start: usize,
        width: usize,
        rows: usize,
        in_cols: usize,
    },
    SelectRows {
        x: In,
        indices: Arc<Vec<usize>>,
        cols: usize,
    },
    /// Stack rank-1 tensors of equal length as matrix rows.
    StackRows {
        parts: Vec<In>,
        cols: usize,
    },
    Conv2d {
        input: In,
        kernels: In,
        bias: In,
        in_vals: Arc<Vec<f64>>,
        k_vals: Arc<Vec<f64>>,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
    },
    /// `argmax` maps each output element to the flat input index it came from.
    MaxPool2d {
        x: In,
        argmax: Arc<Vec<usize>>,
    },
    /// `scale_mask` is the per-element forward factor (0 or 1/(1-rate)).
    Dropout {
        x: In,
        scale_mask: Arc<Vec<f64>>,
    },
    BatchNorm {
        x: In,
        gamma: In,
        beta: In,
        x_hat: Arc<Vec<f64>>,
        inv_std: Arc<Vec<f64>>,
        gamma_vals: Arc<Vec<f64>>,
        rows: usize,
        cols: usize,
        train: bool,
    },
    /// Scatter embedding rows into grid cells: output is channel-major
    /// `[emb_cols x n_cells]`, slot `(row, cell)` writes embedding row `row`
    /// at spatial cell `cell`.
    PlaceGrid {
        emb: In,
        slots: Arc<Vec<(usize, usize)>>,
        emb_cols: usize,
        n_cells: usize,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    out_len: usize,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Reverse-mode gradient tape.
///
/// Operations append nodes in execution order, so the node list is
/// topologically sorted by construction; [`Tape::backward`] replays it in
/// exact reverse order, accumulating gradients additively across fan-out.
/// A tape is single-threaded; independent tapes may run concurrently.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register `t` as a leaf so it can receive a gradient. Idempotent for
    /// tensors already tracked on this tape; a handle from another tape is
    /// replaced.
    pub fn watch(&mut self, t: &mut Tensor) {
        if let Some(r) = t.node {
            if r.tape_id == self.id {
                return;
            }
        }
        let node = self.push(Op::Leaf, t.numel());
        t.node = Some(TapeRef {
            tape_id: self.id,
            node,
        });
    }

    pub(super) fn push(&mut self, op: Op, out_len: usize) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, out_len });
        id
    }

    /// The input edge for `t`, or an error if `t` is tracked on a different
    /// tape (a stale handle from a previous training step, usually).
    pub(super) fn input_of(&self, t: &Tensor) -> Result<In> {
        match t.node {
            None => Ok(None),
            Some(r) if r.tape_id == self.id => Ok(Some(r.node)),
            Some(_) => Err(Error::Invariant(
                "tensor is tracked on a different tape".to_string(),
            )),
        }
    }

    pub(super) fn attach(&self, t: &mut Tensor, node: NodeId) {
        t.node = Some(TapeRef {
            tape_id: self.id,
            node,
        });
    }

    /// Run the backward pass from a scalar loss, returning a gradient per
    /// tape node. Nodes the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::argument(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape()),
            ));
        }
        let seed = match self.input_of(loss)? {
            Some(id) => id,
            None => {
                return Err(Error::argument(
                    "backward",
                    "loss tensor is not on the tape".to_string(),
                ))
            }
        };

        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.out_len]).collect();
        grads[seed.0][0] = 1.0;

        for id in (0..self.nodes.len()).rev() {
            if grads[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            self.propagate(&self.nodes[id].op, &g, &mut grads);
            grads[id] = g;
        }

        Ok(Gradients {
            tape_id: self.id,
            grads,
        })
    }

    fn propagate(&self, op: &Op, g: &[f64], grads: &mut [Vec<f64>]) {
        let acc = |grads: &mut [Vec<f64>], id: In, f: &mut dyn FnMut(&mut [f64])| {
            if let Some(NodeId(i)) = id {
                f(&mut grads[i]);
            }
        };
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                acc(grads, *a, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
                acc(grads, *b, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
            }
            Op::Sub { a, b } => {
                acc(grads, *a, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
                acc(grads, *b, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di -= gi;
                    }
                });
            }
            Op::Mul {
                a,
                b,
                a_vals,
                b_vals,
            } => {
                acc(grads, *a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * b_vals[i];
                    }
                });
                acc(grads, *b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * a_vals[i];
                    }
                });
            }
            Op::Scale { x, factor } => {
                acc(grads, *x, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += factor * gi;
                    }
                });
            }
            Op::AddRowBias { x, bias, rows, cols } => {
                acc(grads, *x, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
                acc(grads, *bias, &mut |d| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            d[c] += g[r * cols + c];
                        }
                    }
                });
            }
            Op::Matmul {
                a,
                b,
                a_vals,
                b_vals,
                r,
                k,
                c,
            } => {
                let (r, k, c) = (*r, *k, *c);
                // dA = G . B^T. Materializing B^T turns the inner loop into
                // contiguous row updates, which vectorize; the dot-product
                // form cannot (f64 reduction order is fixed).
                acc(grads, *a, &mut |d| {
                    let mut bt = vec![0.0; c * k];
                    for j in 0..k {
                        for t in 0..c {
                            bt[t * k + j] = b_vals[j * c + t];
                        }
                    }
                    for i in 0..r {
                        let grow = &g[i * c..(i + 1) * c];
                        let drow = &mut d[i * k..(i + 1) * k];
                        for (t, &g_it) in grow.iter().enumerate() {
                            if g_it == 0.0 {
                                continue;
                            }
                            let btrow = &bt[t * k..(t + 1) * k];
                            for (dv, bv) in drow.iter_mut().zip(btrow) {
                                *dv += g_it * bv;
                            }
                        }
                    }
                });
                // dB = A^T . G, accumulated row-wise: dB[i] += A[t][i] * G[t].
                acc(grads, *b, &mut |d| {
                    for t in 0..r {
                        let arow = &a_vals[t * k..(t + 1) * k];
                        let grow = &g[t * c..(t + 1) * c];
                        for (i, &a_ti) in arow.iter().enumerate() {
                            if a_ti == 0.0 {
                                continue;
                            }
                            let drow = &mut d[i * c..(i + 1) * c];
                            for (dv, gv) in drow.iter_mut().zip(grow) {
                                *dv += a_ti * gv;
                            }
                        }
                    }
                });
            }
            Op::Relu { x, x_vals } => {
                acc(grads, *x, &mut |d| {
                    for i in 0..d.len() {
                        if x_vals[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sigmoid { x, out_vals } => {
                acc(grads, *x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * out_vals[i] * (1.0 - out_vals[i]);
                    }
                });
            }
            Op::Tanh { x, out_vals } => {
                acc(grads, *x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - out_vals[i] * out_vals[i]);
                    }
                });
            }
            Op::Sum { x } => {
                acc(grads, *x, &mut |d| {
                    for di in d.iter_mut() {
                        *di += g[0];
                    }
                });
            }
            Op::Reshape { x } => {
                acc(grads, *x, &mut |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi;
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for (part, len) in parts {
                    acc(grads, *part, &mut |d| {
                        for i in 0..*len {
                            d[i] += g[offset + i];
                        }
                    });
                    offset += len;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let mut offset = 0;
                for (part, width) in parts {
                    acc(grads, *part, &mut |d| {
                        for r in 0..*rows {
                            for c in 0..*width {
                                d[r * width + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += width;
                }
            }
            Op::SliceCols {
                x,
                start,
                width,
                rows,
                in_cols,
            } => {
                acc(grads, *x, &mut |d| {
                    for r in 0..*rows {
                        for c in 0..*width {
                            d[r * in_cols + start + c] += g[r * width + c];
                        }
                    }
                });
            }
            Op::SelectRows { x, indices, cols } => {
                acc(grads, *x, &mut |d| {
                    for (out_r, &in_r) in indices.iter().enumerate() {
                        for c in 0..*cols {
                            d[in_r * cols + c] += g[out_r * cols + c];
                        }
                    }
                });
            }
            Op::StackRows { parts, cols } => {
                for (r, part) in parts.iter().enumerate() {
                    acc(grads, *part, &mut |d| {
                        for c in 0..*cols {
                            d[c] += g[r * cols + c];
                        }
                    });
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                in_vals,
                k_vals,
                c_in,
                h,
                w,
                c_out,
                kh,
                kw,
            } => {
                let (c_in, h, w, c_out, kh, kw) = (*c_in, *h, *w, *c_out, *kh, *kw);
                let oh = h - kh + 1;
                let ow = w - kw + 1;
                acc(grads, *input, &mut |d| {
                    for o in 0..c_out {
                        for i in 0..oh {
                            for j in 0..ow {
                                let gv = g[o * oh * ow + i * ow + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    for p in 0..kh {
                                        for q in 0..kw {
                                            d[ci * h * w + (i + p) * w + (j + q)] +=
                                                gv * k_vals[((o * c_in + ci) * kh + p) * kw + q];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                acc(grads, *kernels, &mut |d| {
                    for o in 0..c_out {
                        for ci in 0..c_in {
                            for p in 0..kh {
                                for q in 0..kw {
                                    let mut s = 0.0;
                                    for i in 0..oh {
                                        for j in 0..ow {
                                            s += g[o * oh * ow + i * ow + j]
                                                * in_vals[ci * h * w + (i + p) * w + (j + q)];
                                        }
                                    }
                                    d[((o * c_in + ci) * kh + p) * kw + q] += s;
                                }
                            }
                        }
                    }
                });
                acc(grads, *bias, &mut |d| {
                    for o in 0..c_out {
                        let mut s = 0.0;
                        for ij in 0..oh * ow {
                            s += g[o * oh * ow + ij];
                        }
                        d[o] += s;
                    }
                });
            }
            Op::MaxPool2d { x, argmax } => {
                acc(grads, *x, &mut |d| {
                    for (out_i, &in_i) in argmax.iter().enumerate() {
                        d[in_i] += g[out_i];
                    }
                });
            }
            Op::Dropout { x, scale_mask } => {
                acc(grads, *x, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * scale_mask[i];
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                gamma_vals,
                rows,
                cols,
                train,
            } => {
                let (rows, cols) = (*rows, *cols);
                acc(grads, *beta, &mut |d| {
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += g[r * cols + c];
                        }
                    }
                });
                acc(grads, *gamma, &mut |d| {
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += g[r * cols + c] * x_hat[r * cols + c];
                        }
                    }
                });
                acc(grads, *x, &mut |d| {
                    if *train {
                        // d x = gamma * inv_std / B * (B*g - sum_g - x_hat * sum(g*x_hat))
                        let b = rows as f64;
                        for c in 0..cols {
                            let mut sum_g = 0.0;
                            let mut sum_gx = 0.0;
                            for r in 0..rows {
                                sum_g += g[r * cols + c];
                                sum_gx += g[r * cols + c] * x_hat[r * cols + c];
                            }
                            let k = gamma_vals[c] * inv_std[c] / b;
                            for r in 0..rows {
                                d[r * cols + c] += k
                                    * (b * g[r * cols + c]
                                        - sum_g
                                        - x_hat[r * cols + c] * sum_gx);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                d[r * cols + c] += g[r * cols + c] * gamma_vals[c] * inv_std[c];
                            }
                        }
                    }
                });
            }
            Op::PlaceGrid {
                emb,
                slots,
                emb_cols,
                n_cells,
            } => {
                acc(grads, *emb, &mut |d| {
                    for &(row, cell) in slots.iter() {
                        for ch in 0..*emb_cols {
                            d[row * emb_cols + ch] += g[ch * n_cells + cell];
                        }
                    }
                });
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradient map produced by [`Tape::backward`]: one f64 buffer per tape
/// node, in recording order.
#[derive(Debug)]
pub struct Gradients {
    tape_id: u64,
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`, or `None` when `t` was not
    /// tracked on the tape that produced this map.
    pub fn of(&self, t: &Tensor) -> Option<&[f64]> {
        match t.node {
            Some(r) if r.tape_id == self.tape_id => Some(&self.grads[r.node.0]),
            _ => None,
        }
    }

    pub fn by_id(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
