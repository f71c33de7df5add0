//! Slow direct-summation reference path with multiply instrumentation.
//!
//! Everything here is written as plain nested loops, independent of the
//! im2col engine in [`crate::nn`], so the two can be checked against each
//! other. The returned counts tally every scalar weight multiplication and
//! nothing else (no bias adds, activations, pooling comparisons or softmax
//! exponentials), which is the same convention [`crate::footprint`] predicts.

use crate::error::{KwsError, Result};
use crate::tensor::Tensor;
use crate::zoo::{ArchSpec, LayerSpec, WeightSet};

/// Direct six-loop valid convolution. Returns the output and the number of
/// scalar weight multiplications performed.
pub fn conv2d_naive(
    input: &Tensor,
    weights: &Tensor,
    bias: &[f32],
    stride: (usize, usize),
) -> Result<(Tensor, u64)> {
    let (t, f, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (m, r, c_w, n) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    if c_w != c || bias.len() != n {
        return Err(KwsError::ShapeMismatch {
            context: "conv2d_naive".into(),
            expected: vec![m, r, c, n],
            got: weights.shape().to_vec(),
        });
    }
    let (s, v) = stride;
    if m > t || r > f || s == 0 || v == 0 {
        return Err(KwsError::InvalidGeometry {
            context: "conv2d_naive".into(),
            detail: format!("{m}x{r} filter stride {s}x{v} on {t}x{f} input"),
        });
    }
    let t_out = (t - m) / s + 1;
    let f_out = (f - r) / v + 1;
    let mut out = vec![0.0f32; t_out * f_out * n];
    let mut multiplies = 0u64;
    for i in 0..t_out {
        for j in 0..f_out {
            for k in 0..n {
                let mut acc = bias[k] as f64;
                for a in 0..m {
                    for b in 0..r {
                        for cc in 0..c {
                            let x = input.at3(i * s + a, j * v + b, cc) as f64;
                            let w = weights.data()[((a * r + b) * c + cc) * n + k] as f64;
                            acc += x * w;
                            multiplies += 1;
                        }
                    }
                }
                out[(i * f_out + j) * n + k] = acc as f32;
            }
        }
    }
    Ok((Tensor::from_vec(&[t_out, f_out, n], out)?, multiplies))
}

/// Direct dot-product dense layer (no activation). Returns output and count.
pub fn dense_naive(input: &[f32], weights: &Tensor, bias: &[f32]) -> Result<(Vec<f32>, u64)> {
    let (in_dim, out_dim) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != in_dim || bias.len() != out_dim {
        return Err(KwsError::ShapeMismatch {
            context: "dense_naive".into(),
            expected: vec![in_dim, out_dim],
            got: vec![input.len(), bias.len()],
        });
    }
    let mut out = Vec::with_capacity(out_dim);
    let mut multiplies = 0u64;
    for k in 0..out_dim {
        let mut acc = bias[k] as f64;
        for (i, &x) in input.iter().enumerate() {
            acc += x as f64 * weights.data()[i * out_dim + k] as f64;
            multiplies += 1;
        }
        out.push(acc as f32);
    }
    Ok((out, multiplies))
}

fn maxpool_naive(input: &Tensor, p: usize, q: usize) -> Tensor {
    let (t, f, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (t_out, f_out) = (t / p, f / q);
    let mut out = vec![0.0f32; t_out * f_out * c];
    for i in 0..t_out {
        for j in 0..f_out {
            for k in 0..c {
                let mut best = f32::NEG_INFINITY;
                for a in 0..p {
                    for b in 0..q {
                        best = best.max(input.at3(i * p + a, j * q + b, k));
                    }
                }
                out[(i * f_out + j) * c + k] = best;
            }
        }
    }
    Tensor::from_vec(&[t_out, f_out, c], out).expect("pool shape")
}

fn relu_naive(values: &mut [f32]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn softmax_naive(values: &[f32]) -> Vec<f32> {
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = values.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Straight-line composition of the naive per-layer routines. Returns the
/// posterior and the total instrumented multiply count.
pub fn forward_naive(spec: &ArchSpec, weights: &WeightSet, input: &Tensor) -> Result<(Vec<f32>, u64)> {
    weights.validate(spec)?;
    let mut act = if input.shape().len() == 2 {
        Tensor::from_vec(
            &[input.shape()[0], input.shape()[1], 1],
            input.data().to_vec(),
        )?
    } else {
        input.clone()
    };
    let mut flat: Option<Vec<f32>> = None;
    let mut multiplies = 0u64;
    for (layer, lw) in spec.layers.iter().zip(&weights.layers) {
        match layer {
            LayerSpec::Conv { stride, pool, .. } => {
                let (conv, count) = conv2d_naive(&act, &lw.weights, &lw.bias, *stride)?;
                multiplies += count;
                let mut conv = conv;
                relu_naive(conv.data_mut());
                act = maxpool_naive(&conv, pool.0, pool.1);
            }
            LayerSpec::Lin { .. } => {
                let input = flat.take().unwrap_or_else(|| act.data().to_vec());
                let (out, count) = dense_naive(&input, &lw.weights, &lw.bias)?;
                multiplies += count;
                flat = Some(out);
            }
            LayerSpec::Dnn { .. } => {
                let input = flat.take().unwrap_or_else(|| act.data().to_vec());
                let (mut out, count) = dense_naive(&input, &lw.weights, &lw.bias)?;
                multiplies += count;
                relu_naive(&mut out);
                flat = Some(out);
            }
            LayerSpec::Softmax { .. } => {
                let input = flat.take().unwrap_or_else(|| act.data().to_vec());
                let (out, count) = dense_naive(&input, &lw.weights, &lw.bias)?;
                multiplies += count;
                flat = Some(softmax_naive(&out));
            }
        }
    }
    Ok((flat.expect("spec ends in softmax"), multiplies))
}
