//! Feedforward inference over 32-bit float tensors.
//!
//! Convolutions are valid (unpadded) and implemented by patch-matrix
//! expansion (im2col) followed by one matrix multiply. Activations are
//! stored as f32; per-element accumulation uses a wider f64 accumulator.

use crate::error::{KwsError, Result};
use crate::footprint::conv_extent;
use crate::tensor::Tensor;
use crate::zoo::{ArchSpec, LayerSpec, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Softmax,
}

/// Convolution layer parameters. Weights are [m, r, c_in, n] row-major.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Vec<f32>,
    /// (time, frequency) stride.
    pub stride: (usize, usize),
    /// (time, frequency) max-pool window applied after the activation.
    pub pool: (usize, usize),
}

/// Fully-connected layer parameters. Weights are [in_dim, out_dim] row-major.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub weights: Tensor,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

/// Valid convolution of a (T, F, C) input producing (T', F', n).
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let w = &params.weights;
    if input.shape().len() != 3 || w.shape().len() != 4 {
        return Err(KwsError::ShapeMismatch {
            context: "conv2d".into(),
            expected: vec![3, 4],
            got: vec![input.shape().len(), w.shape().len()],
        });
    }
    let (t, f, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (m, r, c_w, n) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if c_w != c {
        return Err(KwsError::ShapeMismatch {
            context: "conv2d input channels".into(),
            expected: vec![m, r, c, n],
            got: w.shape().to_vec(),
        });
    }
    if params.bias.len() != n {
        return Err(KwsError::ShapeMismatch {
            context: "conv2d bias".into(),
            expected: vec![n],
            got: vec![params.bias.len()],
        });
    }
    let (s, v) = params.stride;
    let t_out = conv_extent(t, m, s).ok_or_else(|| KwsError::InvalidGeometry {
        context: "conv2d".into(),
        detail: format!("filter m={m} stride {s} does not fit {t} frames"),
    })?;
    let f_out = conv_extent(f, r, v).ok_or_else(|| KwsError::InvalidGeometry {
        context: "conv2d".into(),
        detail: format!("filter r={r} stride {v} does not fit {f} bands"),
    })?;

    // im2col: one row of patch values per output position.
    let patch_len = m * r * c;
    let positions = t_out * f_out;
    let mut patches = vec![0.0f32; positions * patch_len];
    let in_data = input.data();
    for i in 0..t_out {
        for j in 0..f_out {
            let row = (i * f_out + j) * patch_len;
            let mut dst = row;
            for a in 0..m {
                let src = ((i * s + a) * f + j * v) * c;
                // r consecutive frequency bands, c channels each.
                patches[dst..dst + r * c].copy_from_slice(&in_data[src..src + r * c]);
                dst += r * c;
            }
        }
    }

    // Single matrix multiply: (positions x patch_len) . (patch_len x n).
    let wdata = w.data();
    let mut out = vec![0.0f32; positions * n];
    let mut acc = vec![0.0f64; n];
    for pos in 0..positions {
        for (k, slot) in acc.iter_mut().enumerate() {
            *slot = params.bias[k] as f64;
        }
        let patch = &patches[pos * patch_len..(pos + 1) * patch_len];
        for (pl, &x) in patch.iter().enumerate() {
            let wrow = &wdata[pl * n..(pl + 1) * n];
            let x = x as f64;
            for (slot, &wk) in acc.iter_mut().zip(wrow) {
                *slot += x * wk as f64;
            }
        }
        for (k, &slot) in acc.iter().enumerate() {
            out[pos * n + k] = slot as f32;
        }
    }
    Tensor::from_vec(&[t_out, f_out, n], out)
}

/// Non-overlapping max pooling with floor semantics; the remainder rows and
/// columns are dropped.
pub fn maxpool(input: &Tensor, p: usize, q: usize) -> Result<Tensor> {
    if input.shape().len() != 3 {
        return Err(KwsError::ShapeMismatch {
            context: "maxpool".into(),
            expected: vec![3],
            got: vec![input.shape().len()],
        });
    }
    let (t, f, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if p == 0 || q == 0 || p > t || q > f {
        return Err(KwsError::InvalidGeometry {
            context: "maxpool".into(),
            detail: format!("window {p}x{q} on {t}x{f} input"),
        });
    }
    let (t_out, f_out) = (t / p, f / q);
    let mut out = vec![f32::NEG_INFINITY; t_out * f_out * c];
    for i in 0..t_out {
        for j in 0..f_out {
            for a in 0..p {
                for b in 0..q {
                    let src = ((i * p + a) * f + j * q + b) * c;
                    let dst = (i * f_out + j) * c;
                    for k in 0..c {
                        let v = input.data()[src + k];
                        if v > out[dst + k] {
                            out[dst + k] = v;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[t_out, f_out, c], out)
}

/// Fully-connected layer: y = W'x + b, then the declared activation.
/// The input is consumed flat, in (time, frequency, channel) row-major order.
pub fn dense(input: &Tensor, params: &DenseParams) -> Result<Tensor> {
    let w = &params.weights;
    if w.shape().len() != 2 {
        return Err(KwsError::ShapeMismatch {
            context: "dense weights".into(),
            expected: vec![2],
            got: vec![w.shape().len()],
        });
    }
    let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
    if input.len() != in_dim {
        return Err(KwsError::ShapeMismatch {
            context: "dense input".into(),
            expected: vec![in_dim],
            got: vec![input.len()],
        });
    }
    if params.bias.len() != out_dim {
        return Err(KwsError::ShapeMismatch {
            context: "dense bias".into(),
            expected: vec![out_dim],
            got: vec![params.bias.len()],
        });
    }
    let mut acc: Vec<f64> = params.bias.iter().map(|&b| b as f64).collect();
    let wdata = w.data();
    for (i, &x) in input.data().iter().enumerate() {
        let x = x as f64;
        let wrow = &wdata[i * out_dim..(i + 1) * out_dim];
        for (slot, &wk) in acc.iter_mut().zip(wrow) {
            *slot += x * wk as f64;
        }
    }
    let mut out: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
    match params.activation {
        Activation::None => {}
        Activation::Relu => {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        Activation::Softmax => out = softmax(&out),
    }
    Tensor::from_vec(&[out_dim], out)
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(input.shape(), data).expect("same shape")
}

/// Numerically stable softmax: max-subtracted exponentiation.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    assert!(!logits.is_empty(), "softmax of empty vector");
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// An executable model: an architecture bound to validated weights.
pub struct Model {
    spec: ArchSpec,
    layers: Vec<ExecLayer>,
}

enum ExecLayer {
    Conv(ConvParams),
    Dense(DenseParams),
}

impl Model {
    /// Binds weights to a spec, validating every layer shape.
    pub fn new(spec: ArchSpec, weights: WeightSet) -> Result<Model> {
        weights.validate(&spec)?;
        let layers = spec
            .layers
            .iter()
            .zip(weights.layers)
            .map(|(layer, lw)| match layer {
                LayerSpec::Conv { stride, pool, .. } => ExecLayer::Conv(ConvParams {
                    weights: lw.weights,
                    bias: lw.bias,
                    stride: *stride,
                    pool: *pool,
                }),
                LayerSpec::Lin { .. } => ExecLayer::Dense(DenseParams {
                    weights: lw.weights,
                    bias: lw.bias,
                    activation: Activation::None,
                }),
                LayerSpec::Dnn { .. } => ExecLayer::Dense(DenseParams {
                    weights: lw.weights,
                    bias: lw.bias,
                    activation: Activation::Relu,
                }),
                LayerSpec::Softmax { .. } => ExecLayer::Dense(DenseParams {
                    weights: lw.weights,
                    bias: lw.bias,
                    activation: Activation::Softmax,
                }),
            })
            .collect();
        Ok(Model { spec, layers })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    /// Runs the feedforward pass: conv stages apply conv -> relu -> pool, then
    /// the fully-connected stages. Returns the softmax posterior.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f32>> {
        let mut act = if input.shape().len() == 2 {
            // A (t, f) feature matrix is a single-channel image.
            Tensor::from_vec(
                &[input.shape()[0], input.shape()[1], 1],
                input.data().to_vec(),
            )?
        } else {
            input.clone()
        };
        for (index, layer) in self.layers.iter().enumerate() {
            act = match layer {
                ExecLayer::Conv(params) => {
                    let conv = conv2d(&act, params).map_err(|e| at_layer(e, index))?;
                    maxpool(&relu(&conv), params.pool.0, params.pool.1)
                        .map_err(|e| at_layer(e, index))?
                }
                ExecLayer::Dense(params) => {
                    dense(&act.flattened(), params).map_err(|e| at_layer(e, index))?
                }
            };
        }
        Ok(act.data().to_vec())
    }
}

/// Tags a propagated shape error with the failing layer index.
fn at_layer(err: KwsError, index: usize) -> KwsError {
    match err {
        KwsError::ShapeMismatch {
            context,
            expected,
            got,
        } => KwsError::ShapeMismatch {
            context: format!("layer {index}: {context}"),
            expected,
            got,
        },
        KwsError::InvalidGeometry { context, detail } => KwsError::InvalidGeometry {
            context: format!("layer {index}: {context}"),
            detail,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor3(t: usize, f: usize, c: usize, data: Vec<f32>) -> Tensor {
        Tensor::from_vec(&[t, f, c], data).unwrap()
    }

    #[test]
    fn table_one_conv_shape() {
        let input = Tensor::zeros(&[101, 40, 1]);
        let params = ConvParams {
            weights: Tensor::zeros(&[20, 8, 1, 64]),
            bias: vec![0.0; 64],
            stride: (1, 1),
            pool: (1, 1),
        };
        let out = conv2d(&input, &params).unwrap();
        assert_eq!(out.shape(), &[82, 33, 64]);
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input = tensor3(3, 4, 1, (0..12).map(|v| v as f32).collect());
        let params = ConvParams {
            weights: Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            bias: vec![0.0],
            stride: (1, 1),
            pool: (1, 1),
        };
        let out = conv2d(&input, &params).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_rejects_channel_mismatch_with_both_shapes() {
        let input = Tensor::zeros(&[5, 5, 2]);
        let params = ConvParams {
            weights: Tensor::zeros(&[2, 2, 3, 4]),
            bias: vec![0.0; 4],
            stride: (1, 1),
            pool: (1, 1),
        };
        match conv2d(&input, &params).unwrap_err() {
            KwsError::ShapeMismatch { expected, got, .. } => {
                assert_eq!(expected, vec![2, 2, 2, 4]);
                assert_eq!(got, vec![2, 2, 3, 4]);
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn unit_pool_is_identity() {
        let input = tensor3(2, 3, 2, (0..12).map(|v| v as f32).collect());
        let out = maxpool(&input, 1, 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn pool_of_amplitude_table() {
        // 4x4 of 1..16 row-major, 2x2 windows.
        let input = tensor3(4, 4, 1, (1..=16).map(|v| v as f32).collect());
        let out = maxpool(&input, 2, 2).unwrap();
        assert_eq!(out.shape(), &[2, 2, 1]);
        assert_eq!(out.data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn pool_drops_trailing_remainder() {
        let input = Tensor::zeros(&[82, 33, 64]);
        let out = maxpool(&input, 1, 3).unwrap();
        assert_eq!(out.shape(), &[82, 11, 64]);
    }

    #[test]
    fn pool_window_exceeding_dims_is_an_error() {
        let input = Tensor::zeros(&[4, 4, 1]);
        assert!(maxpool(&input, 5, 1).is_err());
        assert!(maxpool(&input, 1, 5).is_err());
    }

    #[test]
    fn dense_identity_weights() {
        let input = Tensor::from_vec(&[3], vec![1.5, -2.0, 0.25]).unwrap();
        let eye = vec![
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ];
        let params = DenseParams {
            weights: Tensor::from_vec(&[3, 3], eye).unwrap(),
            bias: vec![0.0; 3],
            activation: Activation::None,
        };
        let out = dense(&input, &params).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn dense_zero_weights_yield_activated_bias() {
        let input = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let params = DenseParams {
            weights: Tensor::zeros(&[4, 2]),
            bias: vec![-1.0, 2.0],
            activation: Activation::Relu,
        };
        let out = dense(&input, &params).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
    }

    #[test]
    fn dense_length_mismatch_is_shape_error() {
        let input = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap();
        let params = DenseParams {
            weights: Tensor::zeros(&[4, 2]),
            bias: vec![0.0; 2],
            activation: Activation::None,
        };
        assert!(matches!(
            dense(&input, &params).unwrap_err(),
            KwsError::ShapeMismatch { .. }
        ));
    }

    #[test]
    fn relu_basics_and_idempotence() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 3.5, 0.0]).unwrap();
        let once = relu(&t);
        assert_eq!(once.data(), &[0.0, 3.5, 0.0]);
        assert_eq!(relu(&once), once);
    }

    #[test]
    fn softmax_symmetry() {
        let p = softmax(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_normalizes_and_keeps_argmax() {
        let logits: Vec<f32> = (0..12).map(|i| ((i * 37 % 11) as f32) * 0.3 - 1.0).collect();
        let p = softmax(&logits);
        let sum: f32 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let argmax_in = (0..12).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
        let argmax_out = (0..12).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax_in, argmax_out);
        assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn zero_weight_model_is_uniform() {
        let spec = crate::zoo::builtin_arch("trad-fpool3").unwrap();
        let shapes = spec.layer_weight_shapes().unwrap();
        let weights = WeightSet {
            layers: shapes
                .iter()
                .map(|(ws, bl)| crate::zoo::LayerWeights {
                    weights: Tensor::zeros(ws),
                    bias: vec![0.0; *bl],
                })
                .collect(),
        };
        let model = Model::new(spec, weights).unwrap();
        let posterior = model.forward(&Tensor::zeros(&[101, 40])).unwrap();
        assert_eq!(posterior.len(), 12);
        for p in posterior {
            assert!((p - 1.0 / 12.0).abs() < 1e-7);
        }
    }

    #[test]
    fn posterior_sums_to_one_for_random_weights() {
        let spec = crate::zoo::builtin_arch("one-fstride8").unwrap();
        let weights = crate::zoo::init_weights(&spec, 3).unwrap();
        let model = Model::new(spec, weights).unwrap();
        let input = Tensor::from_vec(
            &[101, 40],
            (0..101 * 40).map(|i| ((i % 17) as f32) * 0.1 - 0.8).collect(),
        )
        .unwrap();
        let posterior = model.forward(&input).unwrap();
        let sum: f32 = posterior.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
