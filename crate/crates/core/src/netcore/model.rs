use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::layer::{Layer, LayerKind};
use crate::{seeded_rng, Error, Result, Tensor};

const INIT_STREAM: u64 = 0x1;

/// Ordered stack of layers applied to per-sample inputs of `input_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

/// Layer inputs recorded by [`Model::forward`], consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One entry per model layer; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Model {
    /// Builds a model with Kaiming-uniform (fan-in) weights and zero biases.
    pub fn new(input_shape: Vec<usize>, kinds: &[LayerKind], seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed, INIT_STREAM);
        Self::build(input_shape, kinds, |kind| {
            let (ws, bs, fan_in) = kind.param_shapes().expect("parameterised layer");
            let bound = libm::sqrt(6.0 / fan_in as f64);
            let n: usize = ws.iter().product();
            let w = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            let bn = bs[0];
            Ok((Tensor::from_parts(ws, w), Tensor::zeros(vec![bn])))
        })
    }

    /// Builds a model from explicit parameters, one entry per parameterised
    /// layer in forward order.
    pub fn from_params(
        input_shape: Vec<usize>,
        kinds: &[LayerKind],
        params: Vec<(Tensor, Tensor)>,
    ) -> Result<Self> {
        let expected = kinds.iter().filter(|k| k.has_params()).count();
        if params.len() != expected {
            return Err(Error::shape("parameter list", expected, params.len()));
        }
        let mut it = params.into_iter();
        let mut idx = 0;
        Self::build(input_shape, kinds, |kind| {
            idx += 1;
            let (w, b) = it.next().expect("counted above");
            let (ws, bs, _) = kind.param_shapes().expect("parameterised layer");
            if w.shape() != ws.as_slice() || b.shape() != bs.as_slice() {
                return Err(Error::shape(
                    alloc::format!("parameters of weight layer {idx}"),
                    (ws, bs),
                    (w.shape().to_vec(), b.shape().to_vec()),
                ));
            }
            Ok((w, b))
        })
    }

    fn build(
        input_shape: Vec<usize>,
        kinds: &[LayerKind],
        mut params: impl FnMut(&LayerKind) -> Result<(Tensor, Tensor)>,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            let out = kind.output_shape(i + 1, &shape)?;
            let (weight, bias) = if kind.has_params() {
                let (w, b) = params(kind)?;
                (Some(w), Some(b))
            } else {
                (None, None)
            };
            layers.push(Layer {
                index: i + 1,
                kind: *kind,
                weight,
                bias,
                in_shape: shape,
                out_shape: out.clone(),
            });
            shape = out;
        }
        if shape.len() != 1 {
            return Err(Error::Config(alloc::format!(
                "model output must be a class vector, got per-sample shape {shape:?}"
            )));
        }
        if !layers.iter().any(|l| l.kind.has_params()) {
            return Err(Error::Config("model has no weight-bearing layer".into()));
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// Fully connected network with ReLU between layers. Multi-dimensional
    /// inputs are flattened first.
    pub fn mlp(
        input_shape: Vec<usize>,
        hidden: &[usize],
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut kinds = Vec::new();
        if input_shape.len() > 1 {
            kinds.push(LayerKind::Flatten);
        }
        let mut width: usize = input_shape.iter().product();
        for &h in hidden {
            kinds.push(LayerKind::Linear {
                in_features: width,
                out_features: h,
            });
            kinds.push(LayerKind::Relu);
            width = h;
        }
        kinds.push(LayerKind::Linear {
            in_features: width,
            out_features: classes,
        });
        Self::new(input_shape, &kinds, seed)
    }

    /// Two stride-2 convolutions followed by two linear layers.
    pub fn smallconv(input_shape: Vec<usize>, classes: usize, seed: u64) -> Result<Self> {
        Self::new(
            input_shape.clone(),
            &Self::smallconv_kinds(&input_shape, classes)?,
            seed,
        )
    }

    pub fn smallconv_kinds(input_shape: &[usize], classes: usize) -> Result<Vec<LayerKind>> {
        if input_shape.len() != 3 {
            return Err(Error::Config(alloc::format!(
                "smallconv needs C×H×W inputs, got {input_shape:?}"
            )));
        }
        let conv = |i, o| LayerKind::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let down = |d: usize| (d - 1) / 2 + 1;
        let flat = 32 * down(down(input_shape[1])) * down(down(input_shape[2]));
        Ok(vec![
            conv(input_shape[0], 16),
            LayerKind::Relu,
            conv(16, 32),
            LayerKind::Relu,
            LayerKind::Flatten,
            LayerKind::Linear {
                in_features: flat,
                out_features: 64,
            },
            LayerKind::Relu,
            LayerKind::Linear {
                in_features: 64,
                out_features: classes,
            },
        ])
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().expect("non-empty").out_shape[0]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind).collect()
    }

    /// Weight-bearing layers in forward order. Their enumeration order is the
    /// layer position used by importance allocation and masks.
    pub fn prunable(&self) -> impl Iterator<Item = &Layer> {
        self.layers.iter().filter(|l| l.weight.is_some())
    }

    pub fn prunable_sizes(&self) -> Vec<usize> {
        self.prunable().map(Layer::param_count).collect()
    }

    pub fn total_prunable(&self) -> usize {
        self.prunable().map(Layer::param_count).sum()
    }

    pub fn total_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.param_count() + l.bias.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    /// Mutable weight data of the `position`-th (0-based) prunable layer.
    pub fn prunable_weight_mut(&mut self, position: usize) -> Option<&mut [f64]> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.weight.as_mut())
            .nth(position)
            .map(Tensor::data_mut)
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &mut Tensor)> {
        self.layers
            .iter_mut()
            .filter_map(|l| match (&mut l.weight, &mut l.bias) {
                (Some(w), Some(b)) => Some((w, b)),
                _ => None,
            })
    }

    /// Weight and bias tensors of every parameterised layer in forward order.
    pub fn params(&self) -> impl Iterator<Item = (&Tensor, &Tensor)> {
        self.layers
            .iter()
            .filter_map(|l| match (&l.weight, &l.bias) {
                (Some(w), Some(b)) => Some((w, b)),
                _ => None,
            })
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let first = &self.layers[0];
            return Err(Error::shape(
                alloc::format!("layer {} ({}) input", first.index, first.kind.name()),
                alloc::format!("[batch, {:?}]", self.input_shape),
                shape,
            ));
        }
        Ok(shape[0])
    }

    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let n = self.check_batch(batch)?;
        let mut cache = ForwardCache {
            batch: n,
            inputs: Vec::with_capacity(self.layers.len()),
            shapes: self.layers.iter().map(|l| l.in_shape.clone()).collect(),
        };
        let mut x = batch.data().to_vec();
        for layer in &self.layers {
            let y = layer.forward(n, &x);
            cache.inputs.push(if layer.kind == LayerKind::Flatten {
                Vec::new()
            } else {
                x
            });
            x = y;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward logits".into()));
        }
        let logits = Tensor::from_parts(vec![n, self.num_classes()], x);
        Ok((logits, cache))
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        for layer in &self.layers {
            x = layer.forward(n, &x);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("forward logits".into()));
        }
        Ok(Tensor::from_parts(vec![n, self.num_classes()], x))
    }

    /// Reverse pass from the loss gradient w.r.t. the logits.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<Gradients> {
        let matches = cache.inputs.len() == self.layers.len()
            && cache
                .shapes
                .iter()
                .zip(&self.layers)
                .all(|(s, l)| *s == l.in_shape);
        if !matches {
            return Err(Error::Usage(
                "forward cache was not produced by this model".into(),
            ));
        }
        let expect = [cache.batch, self.num_classes()];
        if dlogits.shape() != expect {
            return Err(Error::shape("loss gradient", expect, dlogits.shape()));
        }
        let mut grads: Vec<Option<ParamGrad>> = vec![None; self.layers.len()];
        let mut dy = dlogits.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, pg) = layer.backward(cache.batch, &cache.inputs[i], &dy, i > 0);
            if let Some((dw, db)) = pg {
                let (ws, bs, _) = layer.kind.param_shapes().expect("parameterised layer");
                grads[i] = Some(ParamGrad {
                    weight: Tensor::from_parts(ws, dw),
                    bias: Tensor::from_parts(bs, db),
                });
            }
            dy = dx;
        }
        Ok(Gradients { layers: grads })
    }
}

impl Gradients {
    /// Gradient of each parameterised layer, in forward order.
    pub fn params(&self) -> impl Iterator<Item = &ParamGrad> {
        self.layers.iter().flatten()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamGrad> {
        self.layers.iter_mut().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::softmax_cross_entropy;

    fn linear(i: usize, o: usize) -> LayerKind {
        LayerKind::Linear {
            in_features: i,
            out_features: o,
        }
    }

    #[test]
    fn identity_linear_is_identity() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 4] = 1.0;
        }
        let model = Model::from_params(
            vec![3],
            &[linear(3, 3)],
            vec![(
                Tensor::new(vec![3, 3], eye).unwrap(),
                Tensor::zeros(vec![3]),
            )],
        )
        .unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 0.25, -7.0]).unwrap();
        let (y, _) = model.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let model = Model::from_params(
            vec![4],
            &[linear(4, 3), LayerKind::Relu, linear(3, 2)],
            vec![
                (Tensor::zeros(vec![3, 4]), Tensor::zeros(vec![3])),
                (Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![2])),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 4], vec![3.0, -1.0, 2.0, 9.0]).unwrap();
        assert!(model
            .forward(&x)
            .unwrap()
            .0
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn shape_error_names_layer() {
        let err = Model::new(vec![4], &[linear(5, 2)], 0).unwrap_err();
        match err {
            Error::Shape { context, .. } => assert!(context.contains("layer 1")),
            e => panic!("unexpected {e:?}"),
        }
        let model = Model::new(vec![4], &[linear(4, 2)], 0).unwrap();
        let bad = Tensor::zeros(vec![2, 5]);
        assert!(matches!(model.forward(&bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn cache_from_another_model_is_rejected() {
        let a = Model::new(vec![4], &[linear(4, 2)], 0).unwrap();
        let b = Model::new(vec![3], &[linear(3, 2)], 0).unwrap();
        let (y, cache) = b.forward(&Tensor::zeros(vec![1, 3])).unwrap();
        assert!(matches!(a.backward(&cache, &y), Err(Error::Usage(_))));
    }

    #[test]
    fn single_neuron_squared_loss_gradient() {
        // L = (w x - y)^2 with dL/dlogit = 2(wx - y) gives dL/dw = 2(wx - y) x.
        let (w, x, y) = (0.7, 1.5, 0.2);
        let model = Model::from_params(
            vec![1],
            &[linear(1, 1)],
            vec![(
                Tensor::new(vec![1, 1], vec![w]).unwrap(),
                Tensor::zeros(vec![1]),
            )],
        )
        .unwrap();
        let (out, cache) = model
            .forward(&Tensor::new(vec![1, 1], vec![x]).unwrap())
            .unwrap();
        let d = Tensor::new(vec![1, 1], vec![2.0 * (out.data()[0] - y)]).unwrap();
        let g = model.backward(&cache, &d).unwrap();
        let gw = g.params().next().unwrap().weight.data()[0];
        assert!((gw - 2.0 * (w * x - y) * x).abs() < 1e-15);
    }

    #[test]
    fn unused_input_has_zero_gradient() {
        // Weight row 1 of the first layer feeds a unit killed by the ReLU for
        // this input, so neither it nor its input weights matter.
        let model = Model::from_params(
            vec![2],
            &[linear(2, 2), LayerKind::Relu, linear(2, 1)],
            vec![
                (
                    Tensor::new(vec![2, 2], vec![1.0, 0.0, -1.0, -1.0]).unwrap(),
                    Tensor::zeros(vec![2]),
                ),
                (
                    Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
                    Tensor::zeros(vec![1]),
                ),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let (y, cache) = model.forward(&x).unwrap();
        let g = model.backward(&cache, &y).unwrap();
        let first = g.params().next().unwrap().weight.data().to_vec();
        assert_eq!(&first[2..], &[0.0, 0.0]);
    }

    #[test]
    fn smallconv_cifar_size() {
        let m = Model::smallconv(vec![3, 32, 32], 10, 0).unwrap();
        assert_eq!(m.prunable_sizes(), vec![432, 4608, 131072, 640]);
        let (y, _) = m.forward(&Tensor::zeros(vec![2, 3, 32, 32])).unwrap();
        assert_eq!(y.shape(), &[2, 10]);
        let (loss, _) = softmax_cross_entropy(&y, &[0, 1]).unwrap();
        assert!(loss.is_finite());
    }
}
