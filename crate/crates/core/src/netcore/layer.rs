use alloc::vec;
use alloc::vec::Vec;

use super::ops::{self, ConvGeom};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// Square-kernel 2-D convolution over `C×H×W` inputs.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Flatten,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Linear { .. } => "linear",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Linear { .. } | LayerKind::Conv2d { .. })
    }

    /// `(weight shape, bias shape, fan_in)` for parameterised layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match *self {
            LayerKind::Linear {
                in_features,
                out_features,
            } => Some((
                vec![out_features, in_features],
                vec![out_features],
                in_features,
            )),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
                in_channels * kernel * kernel,
            )),
            LayerKind::Relu | LayerKind::Flatten => None,
        }
    }

    /// Per-sample output shape, or an error naming layer `index`.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let ctx = || alloc::format!("layer {index} ({})", self.name());
        match *self {
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(Error::shape(ctx(), [in_features], input));
                }
                Ok(vec![out_features])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(Error::shape(
                        ctx(),
                        alloc::format!("[{in_channels}, H, W]"),
                        input,
                    ));
                }
                if stride == 0 || kernel == 0 {
                    return Err(Error::Config(alloc::format!(
                        "{}: kernel and stride must be positive",
                        ctx()
                    )));
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel || w < kernel {
                    return Err(Error::shape(
                        ctx(),
                        alloc::format!("spatial size >= {kernel} after padding"),
                        input,
                    ));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn conv_geom(&self, input: &[usize], output: &[usize]) -> ConvGeom {
        match *self {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom {
                channels: input[0],
                height: input[1],
                width: input[2],
                kernel,
                stride,
                padding,
                out_h: output[1],
                out_w: output[2],
            },
            _ => unreachable!("conv geometry requested for {}", self.name()),
        }
    }
}

/// `(dW, db)` as flat buffers.
type WeightGrads = (Vec<f64>, Vec<f64>);

/// One layer of a [`super::Model`].
///
/// `index` is the 1-based position from the input over all layers;
/// `position` is the 1-based position among weight-bearing layers only.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub index: usize,
    pub kind: LayerKind,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub(crate) in_shape: Vec<usize>,
    pub(crate) out_shape: Vec<usize>,
}

impl Layer {
    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_ref().map_or(0, Tensor::len)
    }

    /// Forward over a batch of `batch` samples laid out contiguously.
    pub(crate) fn forward(&self, batch: usize, x: &[f64]) -> Vec<f64> {
        let in_len: usize = self.in_shape.iter().product();
        let out_len: usize = self.out_shape.iter().product();
        match self.kind {
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                let w = self.weight.as_ref().expect("linear weight").data();
                let b = self.bias.as_ref().expect("linear bias").data();
                let mut y = Vec::with_capacity(batch * out_features);
                for _ in 0..batch {
                    y.extend_from_slice(b);
                }
                // Transposed weights let the kernel skip inactive inputs.
                let wt = ops::transpose(w, out_features, in_features);
                ops::gemm_nn(x, &wt, batch, in_features, out_features, &mut y);
                y
            }
            LayerKind::Conv2d { out_channels, .. } => {
                let g = self.kind.conv_geom(&self.in_shape, &self.out_shape);
                let w = self.weight.as_ref().expect("conv weight").data();
                let b = self.bias.as_ref().expect("conv bias").data();
                let (rows, p) = (g.col_rows(), g.positions());
                let mut col = vec![0.0; rows * p];
                let mut y = vec![0.0; batch * out_len];
                for n in 0..batch {
                    ops::im2col(&x[n * in_len..(n + 1) * in_len], &g, &mut col);
                    let dst = &mut y[n * out_len..(n + 1) * out_len];
                    for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                        chunk.fill(b[oc]);
                    }
                    ops::gemm_nn(w, &col, out_channels, rows, p, dst);
                }
                y
            }
            LayerKind::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerKind::Flatten => x.to_vec(),
        }
    }

    /// Backward given the layer input `x` and upstream gradient `dy`.
    /// Returns `(dx, optional (dW, db))`.
    pub(crate) fn backward(
        &self,
        batch: usize,
        x: &[f64],
        dy: &[f64],
        need_dx: bool,
    ) -> (Vec<f64>, Option<WeightGrads>) {
        let in_len: usize = self.in_shape.iter().product();
        let out_len: usize = self.out_shape.iter().product();
        match self.kind {
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                let w = self.weight.as_ref().expect("linear weight").data();
                let mut dw = vec![0.0; out_features * in_features];
                ops::gemm_tn(dy, x, batch, out_features, in_features, &mut dw);
                let mut db = vec![0.0; out_features];
                for row in dy.chunks(out_features) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                let mut dx = Vec::new();
                if need_dx {
                    dx = vec![0.0; batch * in_features];
                    ops::gemm_nn(dy, w, batch, out_features, in_features, &mut dx);
                }
                (dx, Some((dw, db)))
            }
            LayerKind::Conv2d { out_channels, .. } => {
                let g = self.kind.conv_geom(&self.in_shape, &self.out_shape);
                let w = self.weight.as_ref().expect("conv weight").data();
                let (rows, p) = (g.col_rows(), g.positions());
                let mut col = vec![0.0; rows * p];
                let mut dcol = vec![0.0; rows * p];
                let mut dw = vec![0.0; out_channels * rows];
                let mut db = vec![0.0; out_channels];
                let mut dx = if need_dx {
                    vec![0.0; batch * in_len]
                } else {
                    Vec::new()
                };
                for n in 0..batch {
                    let dout = &dy[n * out_len..(n + 1) * out_len];
                    ops::im2col(&x[n * in_len..(n + 1) * in_len], &g, &mut col);
                    ops::gemm_nt(dout, &col, out_channels, p, rows, &mut dw);
                    for (oc, chunk) in dout.chunks(p).enumerate() {
                        db[oc] += chunk.iter().sum::<f64>();
                    }
                    if need_dx {
                        dcol.fill(0.0);
                        ops::gemm_tn(w, dout, out_channels, rows, p, &mut dcol);
                        ops::col2im(&dcol, &g, &mut dx[n * in_len..(n + 1) * in_len]);
                    }
                }
                (dx, Some((dw, db)))
            }
            LayerKind::Relu => {
                let dx = x
                    .iter()
                    .zip(dy)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                (dx, None)
            }
            LayerKind::Flatten => (dy.to_vec(), None),
        }
    }
}
