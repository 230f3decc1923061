//! Forward kernels and their backward counterparts.
//!
//! Layout conventions: activations are `[H, W, C]`, conv kernels are
//! `[K, K, Cin, Cout]`, dense weights are `[D, U]`. Convolution is
//! cross-correlation (no kernel flip). Sums that can span more than 4096
//! terms (the dense contraction) accumulate in `f64`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Output spatial extents for a conv layer, or an error when the kernel
/// does not fit inside the padded input.
pub fn conv2d_output_shape(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if stride < 1 {
        return Err(Error::Argument("conv stride must be >= 1".into()));
    }
    if kernel > h + 2 * padding || kernel > w + 2 * padding {
        return Err(Error::Dimension(format!(
            "kernel {kernel} exceeds padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    Ok((
        conv_out_extent(h, kernel, stride, padding),
        conv_out_extent(w, kernel, stride, padding),
    ))
}

pub fn maxpool2d_output_shape(h: usize, w: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window < 1 || stride < 1 {
        return Err(Error::Argument("pool window and stride must be >= 1".into()));
    }
    if window > h || window > w {
        return Err(Error::Dimension(format!(
            "pool window {window} exceeds input {h}x{w}"
        )));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// 2D cross-correlation over an `[H, W, Cin]` input with `[K, K, Cin, Cout]`
/// kernels plus a per-channel bias.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [h, w, cin] = dims3(input, "conv input")?;
    let [k0, k1, kcin, cout] = dims4(kernels, "conv kernels")?;
    if k0 != k1 {
        return Err(Error::Dimension(format!(
            "conv kernels must be square, got {k0}x{k1}"
        )));
    }
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "kernel input channels {kcin} do not match input channels {cin} \
             (input {:?}, kernels {:?})",
            input.shape(),
            kernels.shape()
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Dimension(format!(
            "conv bias shape {:?} does not match {cout} output channels",
            bias.shape()
        )));
    }
    let k = k0;
    let (oh, ow) = conv2d_output_shape(h, w, k, stride, padding)?;

    let x = input.data();
    let wk = kernels.data();
    let b = bias.data();
    let mut out = vec![0.0f32; oh * ow * cout];

    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            acc.copy_from_slice(b);
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xo = (iy as usize * w + ix as usize) * cin;
                    let ko = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xo + ci];
                        let krow = &wk[ko + ci * cout..ko + (ci + 1) * cout];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out)
}

/// Gradients of conv2d w.r.t. input, kernels, and bias.
pub(crate) fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &[f32],
    stride: usize,
    padding: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (kernels.shape()[0], kernels.shape()[3]);
    let (oh, ow) = (
        conv_out_extent(h, k, stride, padding),
        conv_out_extent(w, k, stride, padding),
    );

    let x = input.data();
    let wk = kernels.data();
    let mut gx = vec![0.0f32; x.len()];
    let mut gw = vec![0.0f32; wk.len()];
    let mut gb = vec![0.0f32; cout];

    for oy in 0..oh {
        for ox in 0..ow {
            let go = &grad_out[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
            for (gbc, &g) in gb.iter_mut().zip(go) {
                *gbc += g;
            }
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xo = (iy as usize * w + ix as usize) * cin;
                    let ko = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[xo + ci];
                        let krow = &wk[ko + ci * cout..ko + (ci + 1) * cout];
                        let gwrow = &mut gw[ko + ci * cout..ko + (ci + 1) * cout];
                        let mut acc = 0.0f32;
                        for co in 0..cout {
                            let g = go[co];
                            acc += g * krow[co];
                            gwrow[co] += g * xv;
                        }
                        gx[xo + ci] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Max pooling over `[H, W, C]`; trailing rows/cols that do not fill a
/// window are dropped. Returns the pooled tensor and the flat argmax index
/// of every output element (ties broken by first row-major occurrence).
pub fn maxpool2d_with_indices(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<u32>)> {
    let [h, w, c] = dims3(input, "pool input")?;
    let (oh, ow) = maxpool2d_output_shape(h, w, window, stride)?;
    let x = input.data();
    let mut out = vec![0.0f32; oh * ow * c];
    let mut idx = vec![0u32; oh * ow * c];

    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0u32;
                for ky in 0..window {
                    for kx in 0..window {
                        let at = ((oy * stride + ky) * w + (ox * stride + kx)) * c + ch;
                        let v = x[at];
                        if v > best {
                            best = v;
                            best_at = at as u32;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = best;
                idx[o] = best_at;
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, idx))
}

pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_with_indices(input, window, stride).map(|(t, _)| t)
}

/// Fully connected layer: `out[u] = sum_d input[d] * weights[d, u] + bias[u]`.
/// The contraction accumulates in `f64` (D reaches 100352 in the canonical
/// network).
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = match input.shape() {
        [d] => *d,
        other => {
            return Err(Error::Dimension(format!(
                "dense input must be a vector, got {other:?}"
            )))
        }
    };
    let [wd, u] = dims2(weights, "dense weights")?;
    if wd != d {
        return Err(Error::Dimension(format!(
            "dense weights expect {wd} inputs, input has {d}"
        )));
    }
    if bias.shape() != [u] {
        return Err(Error::Dimension(format!(
            "dense bias shape {:?} does not match {u} units",
            bias.shape()
        )));
    }
    let x = input.data();
    let wm = weights.data();
    let mut acc = vec![0.0f64; u];
    for (dd, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let xv = xv as f64;
        let row = &wm[dd * u..(dd + 1) * u];
        for (a, &wv) in acc.iter_mut().zip(row) {
            *a += xv * wv as f64;
        }
    }
    let out: Vec<f32> = acc
        .iter()
        .zip(bias.data())
        .map(|(&a, &b)| (a + b as f64) as f32)
        .collect();
    Tensor::new(vec![u], out)
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let d = input.shape()[0];
    let u = weights.shape()[1];
    let x = input.data();
    let wm = weights.data();

    let mut gx = vec![0.0f32; d];
    let mut gw = vec![0.0f32; d * u];
    for dd in 0..d {
        let row = &wm[dd * u..(dd + 1) * u];
        let grow = &mut gw[dd * u..(dd + 1) * u];
        let xv = x[dd];
        let mut acc = 0.0f64;
        for uu in 0..u {
            let g = grad_out[uu];
            acc += g as f64 * row[uu] as f64;
            grow[uu] += g * xv;
        }
        gx[dd] = acc as f32;
    }
    (gx, gw, grad_out.to_vec())
}

/// Elementwise `max(x, 0)`. NaN anywhere in the input is a numeric error.
pub fn relu(input: &Tensor) -> Result<Tensor> {
    if input.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("relu input contains NaN".into()));
    }
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Row-wise softmax over the last axis with max-subtraction for stability.
/// Accepts a vector `[C]` or a batch `[B, C]`.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input must be finite".into()));
    }
    let c = *input.shape().last().ok_or_else(|| {
        Error::Dimension("softmax input must have at least one axis".into())
    })?;
    let mut out = vec![0.0f32; input.numel()];
    for (row, orow) in input.data().chunks(c).zip(out.chunks_mut(c)) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = ((v - m) as f64).exp();
            *o = e as f32;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o = (*o as f64 / sum) as f32;
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the true classes. `probs` is `[B, C]`
/// (or `[C]` for a single row); probabilities are clamped to 1e-12 before
/// the log.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize]) -> Result<f32> {
    let (b, c) = match probs.shape() {
        [c] => (1usize, *c),
        [b, c] => (*b, *c),
        other => {
            return Err(Error::Dimension(format!(
                "cross-entropy expects [B, C] probabilities, got {other:?}"
            )))
        }
    };
    if labels.len() != b {
        return Err(Error::Argument(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let mut total = 0.0f64;
    for (i, (row, &label)) in probs.data().chunks(c).zip(labels).enumerate() {
        if label >= c {
            return Err(Error::Argument(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let sum: f64 = row.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::Argument(format!(
                "probability row {i} sums to {sum}, expected 1"
            )));
        }
        total += -(row[label] as f64).max(PROB_FLOOR).ln();
    }
    Ok((total / b as f64) as f32)
}

pub(crate) fn cross_entropy_backward(probs: &Tensor, labels: &[usize], grad: f32) -> Vec<f32> {
    let c = *probs.shape().last().unwrap();
    let b = labels.len();
    let mut gx = vec![0.0f32; probs.numel()];
    for (i, &label) in labels.iter().enumerate() {
        let p = probs.data()[i * c + label] as f64;
        if p > PROB_FLOOR {
            gx[i * c + label] = (-(grad as f64) / (b as f64 * p)) as f32;
        }
    }
    gx
}

/// Softmax Jacobian-vector product: `gx_i = s_i * (g_i - sum_j g_j s_j)`,
/// applied per row.
pub(crate) fn softmax_backward(output: &Tensor, grad_out: &[f32]) -> Vec<f32> {
    let c = *output.shape().last().unwrap();
    let mut gx = vec![0.0f32; output.numel()];
    for ((srow, grow), orow) in output
        .data()
        .chunks(c)
        .zip(grad_out.chunks(c))
        .zip(gx.chunks_mut(c))
    {
        let dot: f64 = srow
            .iter()
            .zip(grow)
            .map(|(&s, &g)| s as f64 * g as f64)
            .sum();
        for ((o, &s), &g) in orow.iter_mut().zip(srow).zip(grow) {
            *o = (s as f64 * (g as f64 - dot)) as f32;
        }
    }
    gx
}

fn dims2(t: &Tensor, what: &str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::Dimension(format!("{what} must be 2-D, got {other:?}"))),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    match t.shape() {
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(Error::Dimension(format!("{what} must be 3-D, got {other:?}"))),
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::Dimension(format!("{what} must be 4-D, got {other:?}"))),
    }
}
