//! Parameter and multiply accounting, per layer and in total.
//!
//! Conventions, chosen to reproduce the published per-layer tables exactly:
//! biases are excluded from parameter counts, multiplies count only the
//! scalar weight multiplications of the convolution/matmul (no bias adds,
//! activations, pooling comparisons or softmax exponentials), and conv
//! multiplies are taken on the pre-pooling output grid. Convolutions are
//! valid (unpadded); pooling uses floor division with the remainder dropped.

use crate::error::{KwsError, Result};
use crate::zoo::{ArchSpec, LayerSpec};

/// Activation shape between layers: spatial until the first fully-connected
/// layer, flat afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageShape {
    Spatial { t: usize, f: usize, c: usize },
    Flat(usize),
}

impl StageShape {
    /// Element count; the flattening order is (time, frequency, channel).
    pub fn flat_len(&self) -> usize {
        match *self {
            StageShape::Spatial { t, f, c } => t * f * c,
            StageShape::Flat(n) => n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            StageShape::Spatial { t, f, c } => vec![t, f, c],
            StageShape::Flat(n) => vec![n],
        }
    }
}

/// Footprint of a single layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerFootprint {
    /// Position in the model; assigned by [`model_footprint`].
    pub index: usize,
    pub kind: &'static str,
    pub params: u64,
    pub multiplies: u64,
    pub output: StageShape,
}

/// Per-layer footprints plus totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FootprintReport {
    pub layers: Vec<LayerFootprint>,
    pub total_params: u64,
    pub total_multiplies: u64,
}

/// Valid-convolution output extent: floor((in - filter) / stride) + 1.
pub fn conv_extent(input: usize, filter: usize, stride: usize) -> Option<usize> {
    if filter == 0 || stride == 0 || filter > input {
        return None;
    }
    Some((input - filter) / stride + 1)
}

/// Footprint of one layer given its input shape.
pub fn layer_footprint(layer: &LayerSpec, in_shape: &StageShape) -> Result<LayerFootprint> {
    match *layer {
        LayerSpec::Conv {
            m,
            r,
            n,
            stride,
            pool,
        } => {
            let (t, f, c) = match *in_shape {
                StageShape::Spatial { t, f, c } => (t, f, c),
                StageShape::Flat(_) => {
                    return Err(KwsError::InvalidGeometry {
                        context: "conv layer".into(),
                        detail: "conv cannot follow a fully-connected layer".into(),
                    })
                }
            };
            let geom_err = |detail: String| KwsError::InvalidGeometry {
                context: "conv layer".into(),
                detail,
            };
            if n == 0 {
                return Err(geom_err("zero feature maps".into()));
            }
            let t_out = conv_extent(t, m, stride.0)
                .ok_or_else(|| geom_err(format!("filter m={m} stride {} on {t} frames", stride.0)))?;
            let f_out = conv_extent(f, r, stride.1)
                .ok_or_else(|| geom_err(format!("filter r={r} stride {} on {f} bands", stride.1)))?;
            if pool.0 == 0 || pool.1 == 0 || pool.0 > t_out || pool.1 > f_out {
                return Err(geom_err(format!(
                    "pool {}x{} on {t_out}x{f_out} conv output",
                    pool.0, pool.1
                )));
            }
            let params = (m * r * c * n) as u64;
            // Positions counted on the pre-pooling grid.
            let multiplies = params * (t_out * f_out) as u64;
            Ok(LayerFootprint {
                index: 0,
                kind: "conv",
                params,
                multiplies,
                output: StageShape::Spatial {
                    t: t_out / pool.0,
                    f: f_out / pool.1,
                    c: n,
                },
            })
        }
        LayerSpec::Lin { n } | LayerSpec::Dnn { n } | LayerSpec::Softmax { n } => {
            if n == 0 {
                return Err(KwsError::InvalidGeometry {
                    context: format!("{} layer", layer.kind()),
                    detail: "zero output width".into(),
                });
            }
            let in_dim = in_shape.flat_len() as u64;
            Ok(LayerFootprint {
                index: 0,
                kind: layer.kind(),
                params: in_dim * n as u64,
                multiplies: in_dim * n as u64,
                output: StageShape::Flat(n),
            })
        }
    }
}

/// Chains [`layer_footprint`] over a model. Totals are exact u64 sums.
pub fn model_footprint(spec: &ArchSpec) -> Result<FootprintReport> {
    let mut shape = StageShape::Spatial {
        t: spec.input_shape.0,
        f: spec.input_shape.1,
        c: spec.input_shape.2,
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (index, layer) in spec.layers.iter().enumerate() {
        let mut fp = layer_footprint(layer, &shape).map_err(|e| match e {
            KwsError::InvalidGeometry { context, detail } => KwsError::InvalidGeometry {
                context: format!("layer {index} ({context})"),
                detail,
            },
            other => other,
        })?;
        fp.index = index;
        shape = fp.output.clone();
        layers.push(fp);
    }
    let total_params = layers.iter().map(|l| l.params).sum();
    let total_multiplies = layers.iter().map(|l| l.multiplies).sum();
    Ok(FootprintReport {
        layers,
        total_params,
        total_multiplies,
    })
}

/// 3-significant-figure engineering notation with K/M suffix, round-half-up.
/// Values below 1000 print raw.
pub fn format_count(n: u64) -> String {
    if n < 1000 {
        return n.to_string();
    }
    let in_k = round_3sig(n as f64 / 1e3);
    if in_k.0 < 1000.0 {
        format!("{}K", render(in_k))
    } else {
        format!("{}M", render(round_3sig(n as f64 / 1e6)))
    }
}

/// Rounds to 3 significant figures (half away from zero); returns the value
/// and the number of decimals to print it with.
fn round_3sig(v: f64) -> (f64, usize) {
    let decimals = if v >= 100.0 {
        0
    } else if v >= 10.0 {
        1
    } else {
        2
    };
    let scale = 10f64.powi(decimals as i32);
    ((v * scale + 0.5).floor() / scale, decimals)
}

fn render((v, decimals): (f64, usize)) -> String {
    format!("{v:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::builtin_arch;

    fn conv_layer(m: usize, r: usize, n: usize, pool: (usize, usize)) -> LayerSpec {
        LayerSpec::Conv {
            m,
            r,
            n,
            stride: (1, 1),
            pool,
        }
    }

    fn spatial(t: usize, f: usize, c: usize) -> StageShape {
        StageShape::Spatial { t, f, c }
    }

    #[test]
    fn first_conv_of_the_base_model() {
        let fp = layer_footprint(&conv_layer(20, 8, 64, (1, 3)), &spatial(101, 40, 1)).unwrap();
        assert_eq!(fp.params, 10_240);
        assert_eq!(fp.multiplies, 27_709_440);
        assert_eq!(fp.output, spatial(82, 11, 64));
        assert_eq!(format_count(fp.params), "10.2K");
        assert_eq!(format_count(fp.multiplies), "27.7M");
    }

    #[test]
    fn bottleneck_on_flattened_conv_output() {
        let fp = layer_footprint(&LayerSpec::Lin { n: 32 }, &spatial(73, 8, 64)).unwrap();
        assert_eq!(fp.params, 1_196_032);
        assert_eq!(fp.multiplies, 1_196_032);
        assert_eq!(format_count(fp.params), "1.20M");
    }

    #[test]
    fn degenerate_unit_conv() {
        let fp = layer_footprint(&conv_layer(1, 1, 1, (1, 1)), &spatial(1, 1, 1)).unwrap();
        assert_eq!(fp.params, 1);
        assert_eq!(fp.multiplies, 1);
    }

    #[test]
    fn softmax_on_128_dim_input() {
        let fp = layer_footprint(&LayerSpec::Softmax { n: 12 }, &StageShape::Flat(128)).unwrap();
        assert_eq!(fp.params, 1_536);
        assert_eq!(fp.multiplies, 1_536);
        assert_eq!(format_count(fp.params), "1.54K");
    }

    #[test]
    fn base_model_totals() {
        let report = model_footprint(&builtin_arch("trad-fpool3").unwrap()).unwrap();
        assert_eq!(report.total_params, 1_375_744);
        assert_eq!(report.total_multiplies, 124_593_664);
        assert_eq!(format_count(report.total_multiplies), "125M");
    }

    #[test]
    fn compact_model_totals() {
        let report = model_footprint(&builtin_arch("one-stride1").unwrap()).unwrap();
        assert_eq!(report.total_params, 953_872);
        assert_eq!(report.total_multiplies, 5_763_088);
        assert_eq!(format_count(report.total_params), "954K");
        assert_eq!(format_count(report.total_multiplies), "5.76M");
    }

    #[test]
    fn count_formatting() {
        assert_eq!(format_count(0), "0");
        assert_eq!(format_count(999), "999");
        assert_eq!(format_count(1_000), "1.00K");
        assert_eq!(format_count(1_536), "1.54K");
        assert_eq!(format_count(10_240), "10.2K");
        assert_eq!(format_count(163_840), "164K");
        assert_eq!(format_count(999_999), "1.00M");
        assert_eq!(format_count(4_959_504), "4.96M");
        assert_eq!(format_count(95_682_560), "95.7M");
        assert_eq!(format_count(124_593_664), "125M");
    }

    #[test]
    fn params_strictly_increase_with_feature_maps() {
        let mut last = 0;
        for n in [1, 2, 8, 64, 128] {
            let fp = layer_footprint(&conv_layer(20, 8, n, (1, 1)), &spatial(101, 40, 1)).unwrap();
            assert!(fp.params > last && fp.multiplies >= fp.params);
            last = fp.params;
        }
    }

    #[test]
    fn pooling_never_changes_params() {
        let base = layer_footprint(&conv_layer(20, 8, 64, (1, 1)), &spatial(101, 40, 1)).unwrap();
        for pool in [(1, 3), (2, 2), (3, 1), (82, 33)] {
            let fp = layer_footprint(&conv_layer(20, 8, 64, pool), &spatial(101, 40, 1)).unwrap();
            assert_eq!(fp.params, base.params);
            assert_eq!(fp.multiplies, base.multiplies);
        }
    }

    #[test]
    fn totals_are_additive_over_layers() {
        for name in crate::zoo::BUILTIN_NAMES {
            let report = model_footprint(&builtin_arch(name).unwrap()).unwrap();
            let p: u64 = report.layers.iter().map(|l| l.params).sum();
            let m: u64 = report.layers.iter().map(|l| l.multiplies).sum();
            assert_eq!(p, report.total_params);
            assert_eq!(m, report.total_multiplies);
        }
    }

    #[test]
    fn conv_after_flatten_is_rejected() {
        let err = layer_footprint(&conv_layer(2, 2, 2, (1, 1)), &StageShape::Flat(32)).unwrap_err();
        assert!(matches!(err, KwsError::InvalidGeometry { .. }));
    }
}
