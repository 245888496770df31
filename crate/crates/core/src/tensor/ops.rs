use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor, TensorError};

/// Every primitive the tape knows how to record and differentiate.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    /// Elementwise add; the right operand may also be a `1 × n` row added to every row.
    Add,
    Sub,
    Mul,
    Scale(f64),
    Concat { axis: usize },
    Narrow { axis: usize, start: usize, len: usize },
    Transpose,
    Sigmoid,
    Tanh,
    Ln,
    LeakyRelu { slope: f64 },
    /// `mask`, when given, has one flag per element; `false` entries get probability 0.
    Softmax { axis: usize, mask: Option<Vec<bool>> },
    LogSoftmax { axis: usize },
    /// Gathers rows of the (single) table input.
    EmbeddingLookup { ids: Vec<usize> },
    /// `None` reduces to `1 × 1`.
    Sum { axis: Option<usize> },
    Mean,
    Mse,
    /// Mean negative log-likelihood over log-probability rows; `None` rows are ignored.
    Nll { targets: Vec<Option<usize>> },
    BceWithLogits { targets: Vec<f64> },
    Dropout { rate: f64, train: bool, seed: u64 },
    StopGradient,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Concat { .. } => "concat",
            OpKind::Narrow { .. } => "narrow",
            OpKind::Transpose => "transpose",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Ln => "ln",
            OpKind::LeakyRelu { .. } => "leaky_relu",
            OpKind::Softmax { .. } => "softmax",
            OpKind::LogSoftmax { .. } => "log_softmax",
            OpKind::EmbeddingLookup { .. } => "embedding_lookup",
            OpKind::Sum { .. } => "sum",
            OpKind::Mean => "mean",
            OpKind::Mse => "mse",
            OpKind::Nll { .. } => "nll",
            OpKind::BceWithLogits { .. } => "bce_with_logits",
            OpKind::Dropout { .. } => "dropout",
            OpKind::StopGradient => "stop_gradient",
        }
    }

    /// Resolves a parameter-free op by name; parameterized kinds use their defaults
    /// (axis 1, slope 0.2, no mask).
    pub fn from_name(name: &str) -> Result<OpKind> {
        Ok(match name {
            "matmul" => OpKind::MatMul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "transpose" => OpKind::Transpose,
            "sigmoid" => OpKind::Sigmoid,
            "tanh" => OpKind::Tanh,
            "ln" => OpKind::Ln,
            "leaky_relu" => OpKind::LeakyRelu { slope: 0.2 },
            "softmax" => OpKind::Softmax {
                axis: 1,
                mask: None,
            },
            "log_softmax" => OpKind::LogSoftmax { axis: 1 },
            "concat" => OpKind::Concat { axis: 1 },
            "sum" => OpKind::Sum { axis: None },
            "mean" => OpKind::Mean,
            "mse" => OpKind::Mse,
            "stop_gradient" => OpKind::StopGradient,
            other => return Err(TensorError::UnknownOp(other.to_string())),
        })
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Mse => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Iterates the lanes of a rank-2 tensor along `axis`, yielding the flat indices of each lane.
fn lanes(rows: usize, cols: usize, axis: usize) -> Vec<Vec<usize>> {
    if axis == 1 {
        (0..rows)
            .map(|r| (0..cols).map(|c| r * cols + c).collect())
            .collect()
    } else {
        (0..cols)
            .map(|c| (0..rows).map(|r| r * cols + c).collect())
            .collect()
    }
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(TensorError::InvalidArgument {
            op,
            msg: format!("axis {axis} out of range for rank 2"),
        });
    }
    Ok(())
}

/// Random keep-mask for dropout, already scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub(crate) fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let op = kind.name();
    if let Some(n) = kind.arity() {
        if inputs.len() != n {
            return Err(TensorError::InvalidArgument {
                op,
                msg: format!("expected {n} inputs, got {}", inputs.len()),
            });
        }
    } else if inputs.is_empty() {
        return Err(TensorError::InvalidArgument {
            op,
            msg: "no inputs".into(),
        });
    }
    let x = inputs[0];
    match kind {
        OpKind::MatMul => {
            let b = inputs[1];
            let (_, k) = x.dims2(op)?;
            let (k2, _) = b.dims2(op)?;
            if k != k2 {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            Ok(x.matmul_raw(b))
        }
        OpKind::Add => {
            let b = inputs[1];
            if x.shape() == b.shape() {
                return Ok(x.zip_map(b, |p, q| p + q));
            }
            let (m, n) = x.dims2(op)?;
            if b.shape() != [1, n] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut out = x.clone();
            for r in 0..m {
                for (o, v) in out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b.data()) {
                    *o += v;
                }
            }
            Ok(out)
        }
        OpKind::Sub => {
            same_shape(op, x, inputs[1])?;
            Ok(x.zip_map(inputs[1], |p, q| p - q))
        }
        OpKind::Mul => {
            same_shape(op, x, inputs[1])?;
            Ok(x.zip_map(inputs[1], |p, q| p * q))
        }
        OpKind::Scale(c) => Ok(x.map(|v| v * c)),
        OpKind::Concat { axis } => {
            check_axis(op, *axis)?;
            let (r0, c0) = x.dims2(op)?;
            for t in &inputs[1..] {
                let (r, c) = t.dims2(op)?;
                if (*axis == 1 && r != r0) || (*axis == 0 && c != c0) {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        left: x.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
            }
            if *axis == 0 {
                let rows = inputs.iter().map(|t| t.rows()).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for t in inputs {
                    data.extend_from_slice(t.data());
                }
                Ok(Tensor::matrix(rows, c0, data))
            } else {
                let cols: usize = inputs.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for t in inputs {
                        data.extend_from_slice(t.row_slice(r));
                    }
                }
                Ok(Tensor::matrix(r0, cols, data))
            }
        }
        OpKind::Narrow { axis, start, len } => {
            check_axis(op, *axis)?;
            let (m, n) = x.dims2(op)?;
            let extent = if *axis == 0 { m } else { n };
            if start + len > extent {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("range {start}..{} exceeds extent {extent}", start + len),
                });
            }
            if *axis == 0 {
                Ok(Tensor::matrix(
                    *len,
                    n,
                    x.data()[start * n..(start + len) * n].to_vec(),
                ))
            } else {
                let mut data = Vec::with_capacity(m * len);
                for r in 0..m {
                    data.extend_from_slice(&x.row_slice(r)[*start..start + len]);
                }
                Ok(Tensor::matrix(m, *len, data))
            }
        }
        OpKind::Transpose => {
            x.dims2(op)?;
            Ok(x.transpose_raw())
        }
        OpKind::Sigmoid => Ok(x.map(sigmoid)),
        OpKind::Tanh => Ok(x.map(f64::tanh)),
        OpKind::Ln => Ok(x.map(f64::ln)),
        OpKind::LeakyRelu { slope } => {
            if *slope <= 0.0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("slope must be positive, got {slope}"),
                });
            }
            Ok(x.map(|v| if v > 0.0 { v } else { slope * v }))
        }
        OpKind::Softmax { axis, mask } => {
            check_axis(op, *axis)?;
            let (m, n) = x.dims2(op)?;
            if let Some(mask) = mask {
                if mask.len() != x.numel() {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        left: x.shape().to_vec(),
                        right: vec![mask.len()],
                    });
                }
            }
            let keep = |i: usize| mask.as_ref().is_none_or(|mk| mk[i]);
            let mut out = Tensor::zeros(&[m, n]);
            for (lane_idx, lane) in lanes(m, n, *axis).into_iter().enumerate() {
                let max = lane
                    .iter()
                    .filter(|&&i| keep(i))
                    .map(|&i| x.data()[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY && !lane.iter().any(|&i| keep(i)) {
                    if lane.is_empty() {
                        continue;
                    }
                    return Err(TensorError::AllMasked {
                        op,
                        lane: lane_idx,
                    });
                }
                let mut total = 0.0;
                for &i in &lane {
                    if keep(i) {
                        let e = (x.data()[i] - max).exp();
                        out.data_mut()[i] = e;
                        total += e;
                    }
                }
                for &i in &lane {
                    out.data_mut()[i] /= total;
                }
            }
            Ok(out)
        }
        OpKind::LogSoftmax { axis } => {
            check_axis(op, *axis)?;
            let (m, n) = x.dims2(op)?;
            let mut out = Tensor::zeros(&[m, n]);
            for lane in lanes(m, n, *axis) {
                let max = lane
                    .iter()
                    .map(|&i| x.data()[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max + lane.iter().map(|&i| (x.data()[i] - max).exp()).sum::<f64>().ln();
                for &i in &lane {
                    out.data_mut()[i] = x.data()[i] - lse;
                }
            }
            Ok(out)
        }
        OpKind::EmbeddingLookup { ids } => {
            let (rows, dim) = x.dims2(op)?;
            let mut data = Vec::with_capacity(ids.len() * dim);
            for (position, &index) in ids.iter().enumerate() {
                if index >= rows {
                    return Err(TensorError::IndexOutOfRange {
                        op,
                        position,
                        index,
                        bound: rows,
                    });
                }
                data.extend_from_slice(x.row_slice(index));
            }
            Ok(Tensor::matrix(ids.len(), dim, data))
        }
        OpKind::Sum { axis } => match axis {
            None => Ok(Tensor::scalar(x.sum())),
            Some(a) => {
                check_axis(op, *a)?;
                let (m, n) = x.dims2(op)?;
                if *a == 0 {
                    let mut out = vec![0.0; n];
                    for r in 0..m {
                        for (o, v) in out.iter_mut().zip(x.row_slice(r)) {
                            *o += v;
                        }
                    }
                    Ok(Tensor::matrix(1, n, out))
                } else {
                    Ok(Tensor::matrix(
                        m,
                        1,
                        (0..m).map(|r| x.row_slice(r).iter().sum()).collect(),
                    ))
                }
            }
        },
        OpKind::Mean => {
            if x.numel() == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: "mean of an empty tensor".into(),
                });
            }
            Ok(Tensor::scalar(x.sum() / x.numel() as f64))
        }
        OpKind::Mse => {
            let b = inputs[1];
            same_shape(op, x, b)?;
            if x.numel() == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: "mse of empty tensors".into(),
                });
            }
            let s: f64 = x
                .data()
                .iter()
                .zip(b.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            Ok(Tensor::scalar(s / x.numel() as f64))
        }
        OpKind::Nll { targets } => {
            let (m, n) = x.dims2(op)?;
            if targets.len() != m {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: vec![targets.len()],
                });
            }
            let mut total = 0.0;
            let mut count = 0usize;
            for (position, t) in targets.iter().enumerate() {
                if let Some(t) = *t {
                    if t >= n {
                        return Err(TensorError::IndexOutOfRange {
                            op,
                            position,
                            index: t,
                            bound: n,
                        });
                    }
                    total -= x.get(position, t);
                    count += 1;
                }
            }
            if count == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: "every target row is ignored".into(),
                });
            }
            Ok(Tensor::scalar(total / count as f64))
        }
        OpKind::BceWithLogits { targets } => {
            if targets.len() != x.numel() {
                return Err(TensorError::ShapeMismatch {
                    op,
                    left: x.shape().to_vec(),
                    right: vec![targets.len()],
                });
            }
            if x.numel() == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: "bce of empty tensors".into(),
                });
            }
            let s: f64 = x
                .data()
                .iter()
                .zip(targets)
                .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
                .sum();
            Ok(Tensor::scalar(s / x.numel() as f64))
        }
        OpKind::Dropout { rate, train, seed } => {
            if !(0.0..1.0).contains(rate) {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("rate must lie in [0, 1), got {rate}"),
                });
            }
            if !*train || *rate == 0.0 {
                return Ok(x.clone());
            }
            let mask = dropout_mask(x.numel(), *rate, *seed);
            let mut out = x.clone();
            for (o, m) in out.data_mut().iter_mut().zip(&mask) {
                *o *= m;
            }
            Ok(out)
        }
        OpKind::StopGradient => Ok(x.clone()),
    }
}

/// Gradients for each input given the upstream gradient `g` of the output.
/// Entries for inputs that do not need a gradient may be `None`.
pub(crate) fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let x = inputs[0];
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match kind {
        OpKind::MatMul => {
            let b = inputs[1];
            vec![
                want(0).then(|| g.matmul_raw(&b.transpose_raw())),
                want(1).then(|| x.transpose_raw().matmul_raw(g)),
            ]
        }
        OpKind::Add => {
            let b = inputs[1];
            let gb = want(1).then(|| {
                if b.shape() == x.shape() {
                    g.clone()
                } else {
                    let n = b.cols();
                    let mut acc = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (a, v) in acc.iter_mut().zip(g.row_slice(r)) {
                            *a += v;
                        }
                    }
                    Tensor::matrix(1, n, acc)
                }
            });
            vec![want(0).then(|| g.clone()), gb]
        }
        OpKind::Sub => vec![want(0).then(|| g.clone()), want(1).then(|| g.map(|v| -v))],
        OpKind::Mul => vec![
            want(0).then(|| g.zip_map(inputs[1], |a, b| a * b)),
            want(1).then(|| g.zip_map(x, |a, b| a * b)),
        ],
        OpKind::Scale(c) => vec![Some(g.map(|v| v * c))],
        OpKind::Concat { axis } => {
            let mut res = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let len = if *axis == 0 { t.rows() } else { t.cols() };
                if want(i) {
                    let part = forward(
                        &OpKind::Narrow {
                            axis: *axis,
                            start: offset,
                            len,
                        },
                        &[g],
                    )
                    .expect("concat backward slice");
                    res.push(Some(part));
                } else {
                    res.push(None);
                }
                offset += len;
            }
            res
        }
        OpKind::Narrow { axis, start, len } => {
            let (m, n) = (x.rows(), x.cols());
            let mut gx = Tensor::zeros(&[m, n]);
            if *axis == 0 {
                gx.data_mut()[start * n..(start + len) * n].copy_from_slice(g.data());
            } else {
                for r in 0..m {
                    gx.data_mut()[r * n + start..r * n + start + len]
                        .copy_from_slice(g.row_slice(r));
                }
            }
            vec![Some(gx)]
        }
        OpKind::Transpose => vec![Some(g.transpose_raw())],
        OpKind::Sigmoid => vec![Some(g.zip_map(out, |a, y| a * y * (1.0 - y)))],
        OpKind::Tanh => vec![Some(g.zip_map(out, |a, y| a * (1.0 - y * y)))],
        OpKind::Ln => vec![Some(g.zip_map(x, |a, v| a / v))],
        OpKind::LeakyRelu { slope } => {
            vec![Some(g.zip_map(x, |a, v| if v > 0.0 { a } else { a * slope }))]
        }
        OpKind::Softmax { axis, .. } => {
            let (m, n) = (out.rows(), out.cols());
            let mut gx = Tensor::zeros(&[m, n]);
            for lane in lanes(m, n, *axis) {
                let dot: f64 = lane.iter().map(|&i| out.data()[i] * g.data()[i]).sum();
                for &i in &lane {
                    gx.data_mut()[i] = out.data()[i] * (g.data()[i] - dot);
                }
            }
            vec![Some(gx)]
        }
        OpKind::LogSoftmax { axis } => {
            let (m, n) = (out.rows(), out.cols());
            let mut gx = Tensor::zeros(&[m, n]);
            for lane in lanes(m, n, *axis) {
                let total: f64 = lane.iter().map(|&i| g.data()[i]).sum();
                for &i in &lane {
                    gx.data_mut()[i] = g.data()[i] - out.data()[i].exp() * total;
                }
            }
            vec![Some(gx)]
        }
        OpKind::EmbeddingLookup { ids } => {
            let dim = x.cols();
            let mut gx = Tensor::zeros(x.shape());
            for (pos, &id) in ids.iter().enumerate() {
                for (a, v) in gx.data_mut()[id * dim..(id + 1) * dim]
                    .iter_mut()
                    .zip(g.row_slice(pos))
                {
                    *a += v;
                }
            }
            vec![Some(gx)]
        }
        OpKind::Sum { axis } => {
            let (m, n) = (x.rows(), x.cols());
            let gx = match axis {
                None => Tensor::full(x.shape(), g.item()),
                Some(0) => {
                    let mut t = Tensor::zeros(&[m, n]);
                    for r in 0..m {
                        t.data_mut()[r * n..(r + 1) * n].copy_from_slice(g.data());
                    }
                    t
                }
                Some(_) => {
                    let mut t = Tensor::zeros(&[m, n]);
                    for r in 0..m {
                        let v = g.data()[r];
                        t.data_mut()[r * n..(r + 1) * n].fill(v);
                    }
                    t
                }
            };
            vec![Some(gx)]
        }
        OpKind::Mean => vec![Some(Tensor::full(x.shape(), g.item() / x.numel() as f64))],
        OpKind::Mse => {
            let scale = 2.0 * g.item() / x.numel() as f64;
            let diff = x.zip_map(inputs[1], |p, q| p - q);
            vec![
                want(0).then(|| diff.map(|d| d * scale)),
                want(1).then(|| diff.map(|d| -d * scale)),
            ]
        }
        OpKind::Nll { targets } => {
            let count = targets.iter().filter(|t| t.is_some()).count() as f64;
            let mut gx = Tensor::zeros(x.shape());
            let n = x.cols();
            for (r, t) in targets.iter().enumerate() {
                if let Some(t) = t {
                    gx.data_mut()[r * n + t] = -g.item() / count;
                }
            }
            vec![Some(gx)]
        }
        OpKind::BceWithLogits { targets } => {
            let scale = g.item() / x.numel() as f64;
            let data = x
                .data()
                .iter()
                .zip(targets)
                .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                .collect();
            vec![Some(Tensor::new(x.shape().to_vec(), data).expect("bce grad shape"))]
        }
        OpKind::Dropout { rate, train, seed } => {
            if !*train || *rate == 0.0 {
                return vec![Some(g.clone())];
            }
            let mask = dropout_mask(x.numel(), *rate, *seed);
            let mut gx = g.clone();
            for (a, m) in gx.data_mut().iter_mut().zip(&mask) {
                *a *= m;
            }
            vec![Some(gx)]
        }
        OpKind::StopGradient => vec![None],
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}
