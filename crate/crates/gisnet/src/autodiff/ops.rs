//! Differentiable operations. Each function validates shapes, computes the
//! forward value, and records a backward rule when any input is tracked on
//! the given tape. With `tape = None` the arithmetic runs without recording.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

use super::tape::{In, Op, Tape};
use super::{Mode, Tensor};

/// Running batch-norm statistics, one entry per feature column.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }
}

fn record(tape: Option<&mut Tape>, ins: &[&Tensor], out: &mut Tensor, make: impl FnOnce(&[In]) -> Op) -> Result<()> {
    if let Some(tape) = tape {
        let edges: Vec<In> = ins
            .iter()
            .map(|t| tape.input_of(t))
            .collect::<Result<_>>()?;
        if edges.iter().any(|e| e.is_some()) {
            let id = tape.push(make(&edges), out.numel());
            tape.attach(out, id);
        }
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn add(tape: Option<&mut Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    let mut out = Tensor::from_vec(a.shape().to_vec(), values)?;
    record(tape, &[a, b], &mut out, |e| Op::Add { a: e[0], b: e[1] })?;
    Ok(out)
}

pub fn sub(tape: Option<&mut Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    let mut out = Tensor::from_vec(a.shape().to_vec(), values)?;
    record(tape, &[a, b], &mut out, |e| Op::Sub { a: e[0], b: e[1] })?;
    Ok(out)
}

/// Elementwise (Hadamard) product.
pub fn mul(tape: Option<&mut Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    let mut out = Tensor::from_vec(a.shape().to_vec(), values)?;
    let (av, bv) = (a.values_arc(), b.values_arc());
    record(tape, &[a, b], &mut out, |e| Op::Mul {
        a: e[0],
        b: e[1],
        a_vals: av,
        b_vals: bv,
    })?;
    Ok(out)
}

/// Multiply by a plain constant.
pub fn scale(tape: Option<&mut Tape>, x: &Tensor, factor: f64) -> Result<Tensor> {
    let values = x.values().iter().map(|v| v * factor).collect();
    let mut out = Tensor::from_vec(x.shape().to_vec(), values)?;
    record(tape, &[x], &mut out, |e| Op::Scale { x: e[0], factor })?;
    Ok(out)
}

/// `x[r,c] + bias[c]` for a rank-2 `x` and rank-1 `bias`.
pub fn add_row_bias(tape: Option<&mut Tape>, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != x.shape()[1] {
        return Err(Error::shape(
            "add_row_bias",
            format!("x {:?} vs bias {:?}", x.shape(), bias.shape()),
        ));
    }
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let bv = bias.values();
    let values = x
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v + bv[i % cols])
        .collect();
    let mut out = Tensor::from_vec(vec![rows, cols], values)?;
    record(tape, &[x, bias], &mut out, |e| Op::AddRowBias {
        x: e[0],
        bias: e[1],
        rows,
        cols,
    })?;
    Ok(out)
}

/// Standard matrix product of rank-2 tensors `[r x k] . [k x c]`.
pub fn matmul(tape: Option<&mut Tape>, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(
            "matmul",
            format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
        ));
    }
    let (r, k, c) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (av, bv) = (a.values(), b.values());
    let mut values = vec![0.0; r * c];
    for i in 0..r {
        for p in 0..k {
            let aip = av[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bv[p * c..(p + 1) * c];
            let orow = &mut values[i * c..(i + 1) * c];
            for (o, bq) in orow.iter_mut().zip(brow) {
                *o += aip * bq;
            }
        }
    }
    let mut out = Tensor::from_vec(vec![r, c], values)?;
    let (av, bv) = (a.values_arc(), b.values_arc());
    record(tape, &[a, b], &mut out, |e| Op::Matmul {
        a: e[0],
        b: e[1],
        a_vals: av,
        b_vals: bv,
        r,
        k,
        c,
    })?;
    Ok(out)
}

/// Elementwise `max(x, 0)`; the subgradient at exactly 0 is 0.
pub fn relu(tape: Option<&mut Tape>, x: &Tensor) -> Result<Tensor> {
    let values = x.values().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let mut out = Tensor::from_vec(x.shape().to_vec(), values)?;
    let xv = x.values_arc();
    record(tape, &[x], &mut out, |e| Op::Relu {
        x: e[0],
        x_vals: xv,
    })?;
    Ok(out)
}

pub fn sigmoid(tape: Option<&mut Tape>, x: &Tensor) -> Result<Tensor> {
    let values: Vec<f64> = x.values().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let mut out = Tensor::from_vec(x.shape().to_vec(), values)?;
    let ov = out.values_arc();
    record(tape, &[x], &mut out, |e| Op::Sigmoid {
        x: e[0],
        out_vals: ov,
    })?;
    Ok(out)
}

pub fn tanh(tape: Option<&mut Tape>, x: &Tensor) -> Result<Tensor> {
    let values: Vec<f64> = x.values().iter().map(|&v| v.tanh()).collect();
    let mut out = Tensor::from_vec(x.shape().to_vec(), values)?;
    let ov = out.values_arc();
    record(tape, &[x], &mut out, |e| Op::Tanh {
        x: e[0],
        out_vals: ov,
    })?;
    Ok(out)
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(tape: Option<&mut Tape>, x: &Tensor) -> Result<Tensor> {
    let total: f64 = x.values().iter().sum();
    let mut out = Tensor::scalar(total);
    record(tape, &[x], &mut out, |e| Op::Sum { x: e[0] })?;
    Ok(out)
}

pub fn reshape(tape: Option<&mut Tape>, x: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != x.numel() || shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(
            "reshape",
            format!("cannot view {:?} as {:?}", x.shape(), shape),
        ));
    }
    let mut out = Tensor::from_vec(shape, x.values().to_vec())?;
    record(tape, &[x], &mut out, |e| Op::Reshape { x: e[0] })?;
    Ok(out)
}

/// Concatenate rank-1 tensors into one vector.
pub fn concat(tape: Option<&mut Tape>, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::argument("concat", "empty part list"));
    }
    if let Some(p) = parts.iter().find(|p| p.rank() != 1) {
        return Err(Error::shape(
            "concat",
            format!("expected rank-1 parts, got shape {:?}", p.shape()),
        ));
    }
    let mut values = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
    for p in parts {
        values.extend_from_slice(p.values());
    }
    let mut out = Tensor::from_vec(vec![values.len()], values)?;
    let lens: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
    record(tape, parts, &mut out, |e| Op::Concat {
        parts: e.iter().copied().zip(lens).collect(),
    })?;
    Ok(out)
}

/// Concatenate rank-2 tensors with equal row counts along columns.
pub fn concat_cols(tape: Option<&mut Tape>, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::argument("concat_cols", "empty part list"));
    }
    let rows = parts[0].shape().first().copied().unwrap_or(0);
    if let Some(p) = parts.iter().find(|p| p.rank() != 2 || p.shape()[0] != rows) {
        return Err(Error::shape(
            "concat_cols",
            format!("expected [{rows} x _] parts, got shape {:?}", p.shape()),
        ));
    }
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut values = vec![0.0; rows * total];
    for r in 0..rows {
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            values[r * total + offset..r * total + offset + w]
                .copy_from_slice(&p.values()[r * w..(r + 1) * w]);
            offset += w;
        }
    }
    let mut out = Tensor::from_vec(vec![rows, total], values)?;
    record(tape, parts, &mut out, |e| Op::ConcatCols {
        parts: e.iter().copied().zip(widths).collect(),
        rows,
    })?;
    Ok(out)
}

/// Columns `[start, start+width)` of a rank-2 tensor.
pub fn slice_cols(tape: Option<&mut Tape>, x: &Tensor, start: usize, width: usize) -> Result<Tensor> {
    if x.rank() != 2 || width == 0 || start + width > x.shape()[1] {
        return Err(Error::shape(
            "slice_cols",
            format!(
                "columns [{start}, {}) out of range for shape {:?}",
                start + width,
                x.shape()
            ),
        ));
    }
    let (rows, in_cols) = (x.shape()[0], x.shape()[1]);
    let mut values = vec![0.0; rows * width];
    for r in 0..rows {
        values[r * width..(r + 1) * width]
            .copy_from_slice(&x.values()[r * in_cols + start..r * in_cols + start + width]);
    }
    let mut out = Tensor::from_vec(vec![rows, width], values)?;
    record(tape, &[x], &mut out, |e| Op::SliceCols {
        x: e[0],
        start,
        width,
        rows,
        in_cols,
    })?;
    Ok(out)
}

/// Gather rows of a rank-2 tensor in the given order (repeats allowed).
pub fn select_rows(tape: Option<&mut Tape>, x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape(
            "select_rows",
            format!("expected rank-2 input, got {:?}", x.shape()),
        ));
    }
    let (in_rows, cols) = (x.shape()[0], x.shape()[1]);
    if indices.is_empty() {
        return Err(Error::argument("select_rows", "empty index list"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= in_rows) {
        return Err(Error::argument(
            "select_rows",
            format!("row index {bad} out of range for {in_rows} rows"),
        ));
    }
    let mut values = vec![0.0; indices.len() * cols];
    for (r, &i) in indices.iter().enumerate() {
        values[r * cols..(r + 1) * cols].copy_from_slice(&x.values()[i * cols..(i + 1) * cols]);
    }
    let mut out = Tensor::from_vec(vec![indices.len(), cols], values)?;
    let idx = Arc::new(indices.to_vec());
    record(tape, &[x], &mut out, |e| Op::SelectRows {
        x: e[0],
        indices: idx,
        cols,
    })?;
    Ok(out)
}

/// Stack rank-1 tensors of equal length as the rows of a matrix.
pub fn stack_rows(tape: Option<&mut Tape>, parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::argument("stack_rows", "empty part list"));
    }
    let cols = parts[0].numel();
    if let Some(p) = parts.iter().find(|p| p.rank() != 1 || p.numel() != cols) {
        return Err(Error::shape(
            "stack_rows",
            format!("expected rank-1 length {cols}, got shape {:?}", p.shape()),
        ));
    }
    let mut values = Vec::with_capacity(parts.len() * cols);
    for p in parts {
        values.extend_from_slice(p.values());
    }
    let mut out = Tensor::from_vec(vec![parts.len(), cols], values)?;
    record(tape, parts, &mut out, |e| Op::StackRows {
        parts: e.to_vec(),
        cols,
    })?;
    Ok(out)
}

/// Valid (no padding) stride-1 2-D convolution over a `[C_in x H x W]`
/// input with `[C_out x C_in x kh x kw]` kernels and a `[C_out]` bias.
pub fn conv2d(tape: Option<&mut Tape>, input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 || kernels.rank() != 4 || bias.rank() != 1 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "expected input rank 3, kernels rank 4, bias rank 1; got {:?}, {:?}, {:?}",
                input.shape(),
                kernels.shape(),
                bias.shape()
            ),
        ));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kc, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kc != c_in || bias.shape()[0] != c_out {
        return Err(Error::shape(
            "conv2d",
            format!(
                "channel mismatch: input {:?}, kernels {:?}, bias {:?}",
                input.shape(),
                kernels.shape(),
                bias.shape()
            ),
        ));
    }
    if kh > h || kw > w {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} larger than input {h}x{w}"),
        ));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let (iv, kv, bv) = (input.values(), kernels.values(), bias.values());
    let mut values = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = bv[o];
                for ci in 0..c_in {
                    for p in 0..kh {
                        for q in 0..kw {
                            s += iv[ci * h * w + (i + p) * w + (j + q)]
                                * kv[((o * c_in + ci) * kh + p) * kw + q];
                        }
                    }
                }
                values[o * oh * ow + i * ow + j] = s;
            }
        }
    }
    let mut out = Tensor::from_vec(vec![c_out, oh, ow], values)?;
    let (in_vals, k_vals) = (input.values_arc(), kernels.values_arc());
    record(tape, &[input, kernels, bias], &mut out, |e| Op::Conv2d {
        input: e[0],
        kernels: e[1],
        bias: e[2],
        in_vals,
        k_vals,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
    })?;
    Ok(out)
}

/// Non-overlapping max pooling over a `[C x H x W]` input; trailing rows and
/// columns that do not fill a window are dropped. Within a window, ties go
/// to the first element in row-major order.
pub fn maxpool2d(tape: Option<&mut Tape>, input: &Tensor, window: (usize, usize)) -> Result<Tensor> {
    let (ph, pw) = window;
    if ph == 0 || pw == 0 {
        return Err(Error::argument("maxpool2d", "window dimension of zero"));
    }
    if input.rank() != 3 {
        return Err(Error::shape(
            "maxpool2d",
            format!("expected rank-3 input, got {:?}", input.shape()),
        ));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if ph > h || pw > w {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {ph}x{pw} larger than input {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / ph, w / pw);
    let iv = input.values();
    let mut values = vec![0.0; c * oh * ow];
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for p in 0..ph {
                    for q in 0..pw {
                        let idx = ch * h * w + (i * ph + p) * w + (j * pw + q);
                        if iv[idx] > best {
                            best = iv[idx];
                            best_idx = idx;
                        }
                    }
                }
                values[ch * oh * ow + i * ow + j] = best;
                argmax[ch * oh * ow + i * ow + j] = best_idx;
            }
        }
    }
    let mut out = Tensor::from_vec(vec![c, oh, ow], values)?;
    let argmax = Arc::new(argmax);
    record(tape, &[input], &mut out, |e| Op::MaxPool2d { x: e[0], argmax })?;
    Ok(out)
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`; eval mode is the
/// identity.
pub fn dropout(
    tape: Option<&mut Tape>,
    x: &Tensor,
    rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::argument(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    let mask: Vec<f64> = if mode == Mode::Train && rate > 0.0 {
        let keep = 1.0 / (1.0 - rate);
        (0..x.numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect()
    } else {
        vec![1.0; x.numel()]
    };
    let values = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
    let mut out = Tensor::from_vec(x.shape().to_vec(), values)?;
    let mask = Arc::new(mask);
    record(tape, &[x], &mut out, |e| Op::Dropout {
        x: e[0],
        scale_mask: mask,
    })?;
    Ok(out)
}

/// Batch normalization over the rows of a `[batch x d]` tensor.
///
/// Train mode normalizes by the batch mean and (biased) variance and folds
/// the batch statistics into `running` with the given momentum (the running
/// variance uses the unbiased estimate). Eval mode normalizes by the frozen
/// running statistics.
pub fn batchnorm(
    tape: Option<&mut Tape>,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    momentum: f64,
    eps: f64,
    mode: Mode,
) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape(
            "batchnorm",
            format!("expected rank-2 input, got {:?}", x.shape()),
        ));
    }
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    if gamma.shape() != [cols] || beta.shape() != [cols] || running.mean.len() != cols {
        return Err(Error::shape(
            "batchnorm",
            format!(
                "feature width {cols} vs gamma {:?}, beta {:?}, running {}",
                gamma.shape(),
                beta.shape(),
                running.mean.len()
            ),
        ));
    }
    let train = mode == Mode::Train;
    if train && rows < 2 {
        return Err(Error::argument(
            "batchnorm",
            "train mode requires batch size >= 2",
        ));
    }
    let xv = x.values();
    let (mean, var) = if train {
        let mut mean = vec![0.0; cols];
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += xv[r * cols + c];
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        for r in 0..rows {
            for c in 0..cols {
                let d = xv[r * cols + c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= rows as f64;
        }
        for c in 0..cols {
            running.mean[c] = (1.0 - momentum) * running.mean[c] + momentum * mean[c];
            let unbiased = var[c] * rows as f64 / (rows as f64 - 1.0);
            running.var[c] = (1.0 - momentum) * running.var[c] + momentum * unbiased;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (gv, bv) = (gamma.values(), beta.values());
    let mut x_hat = vec![0.0; rows * cols];
    let mut values = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let xh = (xv[r * cols + c] - mean[c]) * inv_std[c];
            x_hat[r * cols + c] = xh;
            values[r * cols + c] = gv[c] * xh + bv[c];
        }
    }
    let mut out = Tensor::from_vec(vec![rows, cols], values)?;
    let x_hat = Arc::new(x_hat);
    let inv_std = Arc::new(inv_std);
    let gamma_vals = gamma.values_arc();
    record(tape, &[x, gamma, beta], &mut out, |e| Op::BatchNorm {
        x: e[0],
        gamma: e[1],
        beta: e[2],
        x_hat,
        inv_std,
        gamma_vals,
        rows,
        cols,
        train,
    })?;
    Ok(out)
}

/// Scatter rows of an `[n x C]` embedding matrix into a `[C x h x w]` grid
/// tensor. `slots` pairs an embedding row with a flat spatial cell index
/// (`row * w + col`); untouched cells stay exactly zero. Slots must target
/// distinct cells.
pub fn scatter_rows_to_grid(
    tape: Option<&mut Tape>,
    emb: &Tensor,
    slots: &[(usize, usize)],
    h: usize,
    w: usize,
) -> Result<Tensor> {
    if emb.rank() != 2 {
        return Err(Error::shape(
            "scatter_rows_to_grid",
            format!("expected rank-2 embeddings, got {:?}", emb.shape()),
        ));
    }
    let (n, c) = (emb.shape()[0], emb.shape()[1]);
    let n_cells = h * w;
    let mut seen = vec![false; n_cells];
    for &(row, cell) in slots {
        if row >= n || cell >= n_cells {
            return Err(Error::argument(
                "scatter_rows_to_grid",
                format!("slot ({row}, {cell}) out of range for {n} rows, {n_cells} cells"),
            ));
        }
        if seen[cell] {
            return Err(Error::argument(
                "scatter_rows_to_grid",
                format!("duplicate cell {cell}"),
            ));
        }
        seen[cell] = true;
    }
    let ev = emb.values();
    let mut values = vec![0.0; c * n_cells];
    for &(row, cell) in slots {
        for ch in 0..c {
            values[ch * n_cells + cell] = ev[row * c + ch];
        }
    }
    let mut out = Tensor::from_vec(vec![c, h, w], values)?;
    let slots = Arc::new(slots.to_vec());
    record(tape, &[emb], &mut out, |e| Op::PlaceGrid {
        emb: e[0],
        slots,
        emb_cols: c,
        n_cells,
    })?;
    Ok(out)
}
