//! Ordered layer stacks: forward with per-layer activation caching, and
//! backpropagation from a loss gradient to per-parameter gradients.

use crate::attention::{CbamBlock, CbamCache, CbamGrads};
use crate::error::{Error, Result};
use crate::nn::activ::{relu, relu_backward, sigmoid, sigmoid_backward, softmax_channels, softmax_channels_backward};
use crate::nn::conv::{ConvCache, ConvLayer};
use crate::nn::dense::DenseLayer;
use crate::nn::pool::{maxpool2, maxpool2_backward, upsample2, upsample2_backward};
use crate::tensor::{ImageTensor, Real};

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    Dense(DenseLayer<T>),
    Cbam(CbamBlock<T>),
    Relu,
    MaxPool2,
    Upsample2,
    /// (b,h,w,c) -> (b,1,1,h*w*c); the buffer is already contiguous.
    Flatten,
    /// (b,1,1,h*w*c) -> (b,h,w,c).
    Reshape { height: usize, width: usize, channels: usize },
    SoftmaxChannels,
    Sigmoid,
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Dense(_) => "dense",
            Layer::Cbam(_) => "cbam",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::Upsample2 => "upsample2",
            Layer::Flatten => "flatten",
            Layer::Reshape { .. } => "reshape",
            Layer::SoftmaxChannels => "softmax_channels",
            Layer::Sigmoid => "sigmoid",
        }
    }

    /// Immutable views of this layer's parameter arrays, in canonical order.
    pub fn param_arrays(&self) -> Vec<(&'static str, &[T])> {
        match self {
            Layer::Conv(l) => vec![("kernels", l.kernels()), ("bias", l.bias())],
            Layer::Dense(l) => vec![("weight", l.weight()), ("bias", l.bias())],
            Layer::Cbam(b) => vec![
                ("mlp_w1", b.channel.w1()),
                ("mlp_w2", b.channel.w2()),
                ("spatial_kernels", b.spatial.conv().kernels()),
                ("spatial_bias", b.spatial.conv().bias()),
            ],
            _ => Vec::new(),
        }
    }

    /// Mutable views, same order as [`Layer::param_arrays`].
    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Conv(l) => {
                let (k, b) = l.kernels_bias_mut();
                vec![k, b]
            }
            Layer::Dense(l) => {
                let (w, b) = l.weight_bias_mut();
                vec![w, b]
            }
            Layer::Cbam(b) => {
                let (w1, w2, sk, sb) = b.params_mut();
                vec![w1, w2, sk, sb]
            }
            _ => Vec::new(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.param_arrays().iter().map(|(_, a)| a.len()).sum()
    }
}

/// Activations recorded by [`forward_cached`], one entry per layer.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    Dense { input: ImageTensor<T> },
    Cbam(CbamCache<T>),
    /// Pre-activation values; the backward mask `v > 0` is identical on
    /// either side of the relu.
    Relu { pre: ImageTensor<T> },
    MaxPool2 { indices: Vec<usize>, input_dims: (usize, usize, usize, usize) },
    Upsample2,
    Flatten { input_dims: (usize, usize, usize, usize) },
    Reshape { input_dims: (usize, usize, usize, usize) },
    SoftmaxChannels { output: ImageTensor<T> },
    Sigmoid { output: ImageTensor<T> },
}

/// Per-layer parameter gradients, aligned with the layer list.
#[derive(Debug, Clone)]
pub enum LayerGrads<T> {
    Conv { kernels: Vec<T>, bias: Vec<T> },
    Dense { weight: Vec<T>, bias: Vec<T> },
    Cbam(CbamGrads<T>),
    None,
}

impl<T: Real> LayerGrads<T> {
    /// Gradient arrays in the same order as [`Layer::param_arrays`].
    pub fn arrays(&self) -> Vec<&[T]> {
        match self {
            LayerGrads::Conv { kernels, bias } => vec![kernels, bias],
            LayerGrads::Dense { weight, bias } => vec![weight, bias],
            LayerGrads::Cbam(g) => vec![&g.mlp_w1, &g.mlp_w2, &g.spatial_kernels, &g.spatial_bias],
            LayerGrads::None => Vec::new(),
        }
    }

    fn arrays_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            LayerGrads::Conv { kernels, bias } => vec![kernels, bias],
            LayerGrads::Dense { weight, bias } => vec![weight, bias],
            LayerGrads::Cbam(g) => vec![&mut g.mlp_w1, &mut g.mlp_w2, &mut g.spatial_kernels, &mut g.spatial_bias],
            LayerGrads::None => Vec::new(),
        }
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &LayerGrads<T>) {
        let other_arrays = other.arrays();
        for (mine, theirs) in self.arrays_mut().into_iter().zip(other_arrays) {
            debug_assert_eq!(mine.len(), theirs.len());
            for (a, &b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    /// Elementwise `self *= s`.
    pub fn scale(&mut self, s: T) {
        for arr in self.arrays_mut() {
            for v in arr.iter_mut() {
                *v *= s;
            }
        }
    }
}

pub fn zero_grads<T: Real>(layers: &[Layer<T>]) -> Vec<LayerGrads<T>> {
    layers
        .iter()
        .map(|l| match l {
            Layer::Conv(c) => {
                let g = c.zero_grads();
                LayerGrads::Conv { kernels: g.kernels, bias: g.bias }
            }
            Layer::Dense(d) => {
                let g = d.zero_grads();
                LayerGrads::Dense { weight: g.weight, bias: g.bias }
            }
            Layer::Cbam(b) => LayerGrads::Cbam(b.zero_grads()),
            _ => LayerGrads::None,
        })
        .collect()
}

/// Forward through the stack, recording what backward needs.
pub fn forward_cached<T: Real>(layers: &[Layer<T>], input: &ImageTensor<T>) -> Result<(ImageTensor<T>, Vec<LayerCache<T>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut x = input.clone();
    for layer in layers {
        x = match layer {
            Layer::Conv(l) => {
                let (out, cache) = l.forward_cached(&x)?;
                caches.push(LayerCache::Conv(cache));
                out
            }
            Layer::Dense(l) => {
                let out = l.forward(&x)?;
                caches.push(LayerCache::Dense { input: x });
                out
            }
            Layer::Cbam(b) => {
                let (out, cache) = b.forward_cached(x)?;
                caches.push(LayerCache::Cbam(cache));
                out
            }
            Layer::Relu => {
                let out = relu(&x);
                caches.push(LayerCache::Relu { pre: x });
                out
            }
            Layer::MaxPool2 => {
                let dims = x.dims();
                let (out, indices) = maxpool2(&x)?;
                caches.push(LayerCache::MaxPool2 { indices, input_dims: dims });
                out
            }
            Layer::Upsample2 => {
                caches.push(LayerCache::Upsample2);
                upsample2(&x)
            }
            Layer::Flatten => {
                let dims = x.dims();
                caches.push(LayerCache::Flatten { input_dims: dims });
                x.reshaped(1, 1, dims.1 * dims.2 * dims.3)?
            }
            Layer::Reshape { height, width, channels } => {
                let dims = x.dims();
                caches.push(LayerCache::Reshape { input_dims: dims });
                x.reshaped(*height, *width, *channels)?
            }
            Layer::SoftmaxChannels => {
                let out = softmax_channels(&x)?;
                caches.push(LayerCache::SoftmaxChannels { output: out.clone() });
                out
            }
            Layer::Sigmoid => {
                let out = sigmoid(&x);
                caches.push(LayerCache::Sigmoid { output: out.clone() });
                out
            }
        };
    }
    Ok((x, caches))
}

/// Forward without caching (inference).
pub fn forward<T: Real>(layers: &[Layer<T>], input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let mut x = input.clone();
    for layer in layers {
        x = match layer {
            Layer::Conv(l) => l.forward(&x)?,
            Layer::Dense(l) => l.forward(&x)?,
            Layer::Cbam(b) => b.forward(&x)?,
            Layer::Relu => relu(&x),
            Layer::MaxPool2 => maxpool2(&x)?.0,
            Layer::Upsample2 => upsample2(&x),
            Layer::Flatten => {
                let (_, h, w, c) = x.dims();
                x.reshaped(1, 1, h * w * c)?
            }
            Layer::Reshape { height, width, channels } => x.reshaped(*height, *width, *channels)?,
            Layer::SoftmaxChannels => softmax_channels(&x)?,
            Layer::Sigmoid => sigmoid(&x),
        };
    }
    Ok(x)
}

/// Backpropagate a loss gradient through the stack. Returns per-layer
/// parameter gradients (aligned with `layers`) and the gradient with
/// respect to the stack input.
pub fn backward_pass<T: Real>(
    layers: &[Layer<T>],
    caches: &[LayerCache<T>],
    loss_gradient: &ImageTensor<T>,
) -> Result<(Vec<LayerGrads<T>>, ImageTensor<T>)> {
    if caches.len() != layers.len() {
        return Err(Error::State(format!(
            "backward pass needs {} cached activations, got {}",
            layers.len(),
            caches.len()
        )));
    }
    let mut grads: Vec<LayerGrads<T>> = (0..layers.len()).map(|_| LayerGrads::None).collect();
    let mut g = loss_gradient.clone();
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        g = match (layer, cache) {
            (Layer::Conv(l), LayerCache::Conv(cache)) => {
                let (pg, gi) = l.backward_cached(cache, &g)?;
                grads[i] = LayerGrads::Conv { kernels: pg.kernels, bias: pg.bias };
                gi
            }
            (Layer::Dense(l), LayerCache::Dense { input }) => {
                let (pg, gi) = l.backward(input, &g)?;
                grads[i] = LayerGrads::Dense { weight: pg.weight, bias: pg.bias };
                gi
            }
            (Layer::Cbam(b), LayerCache::Cbam(cache)) => {
                let (pg, gi) = b.backward(cache, &g)?;
                grads[i] = LayerGrads::Cbam(pg);
                gi
            }
            (Layer::Relu, LayerCache::Relu { pre }) => relu_backward(pre, &g)?,
            (Layer::MaxPool2, LayerCache::MaxPool2 { indices, input_dims }) => {
                maxpool2_backward(indices, &g, *input_dims)?
            }
            (Layer::Upsample2, LayerCache::Upsample2) => upsample2_backward(&g)?,
            (Layer::Flatten, LayerCache::Flatten { input_dims }) => {
                g.reshaped(input_dims.1, input_dims.2, input_dims.3)?
            }
            (Layer::Reshape { .. }, LayerCache::Reshape { input_dims }) => {
                g.reshaped(input_dims.1, input_dims.2, input_dims.3)?
            }
            (Layer::SoftmaxChannels, LayerCache::SoftmaxChannels { output }) => {
                softmax_channels_backward(output, &g)?
            }
            (Layer::Sigmoid, LayerCache::Sigmoid { output }) => sigmoid_backward(output, &g)?,
            (layer, _) => {
                return Err(Error::State(format!(
                    "cache at position {i} does not match layer `{}`",
                    layer.kind()
                )))
            }
        };
    }
    Ok((grads, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::uniform_tensor;

    #[test]
    fn single_dense_squared_error_matches_hand_derivative() {
        // y = w*x + b with x = 2, w = 3, b = 1 -> y = 7
        // L = (y - 5)^2 -> dL/dy = 4, dL/dw = 4*x = 8, dL/db = 4, dL/dx = 4*w = 12
        let layers = vec![Layer::Dense(DenseLayer::new(1, 1, vec![3.0], vec![1.0]).unwrap())];
        let input = ImageTensor::new(1, 1, 1, 1, vec![2.0]).unwrap();
        let (out, caches) = forward_cached(&layers, &input).unwrap();
        assert_eq!(out.data(), &[7.0]);
        let loss_grad = ImageTensor::new(1, 1, 1, 1, vec![2.0 * (7.0 - 5.0)]).unwrap();
        let (grads, grad_in) = backward_pass(&layers, &caches, &loss_grad).unwrap();
        match &grads[0] {
            LayerGrads::Dense { weight, bias } => {
                assert_eq!(weight, &vec![8.0]);
                assert_eq!(bias, &vec![4.0]);
            }
            other => panic!("unexpected grads {other:?}"),
        }
        assert_eq!(grad_in.data(), &[12.0]);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let layers = vec![
            Layer::Conv(ConvLayer::new(3, 3, 1, 2, uniform_tensor(1, 3, 3, 2, 70).into_data(), vec![0.1, 0.2], crate::nn::conv::Padding::Same).unwrap()),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Flatten,
            Layer::Dense(DenseLayer::new(8, 3, uniform_tensor(1, 1, 1, 24, 71).into_data(), vec![0.0; 3]).unwrap()),
        ];
        let input = uniform_tensor(2, 4, 4, 1, 72);
        let (out, caches) = forward_cached(&layers, &input).unwrap();
        let zero = ImageTensor::zeros(out.batch(), 1, 1, 3);
        let (grads, grad_in) = backward_pass(&layers, &caches, &zero).unwrap();
        for g in &grads {
            for arr in g.arrays() {
                assert!(arr.iter().all(|&v| v == 0.0));
            }
        }
        assert!(grad_in.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_cache_is_state_error() {
        let layers: Vec<Layer<f64>> = vec![Layer::Relu, Layer::MaxPool2];
        let g = ImageTensor::zeros(1, 1, 1, 1);
        assert!(matches!(
            backward_pass(&layers, &[], &g),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn flatten_reshape_round_trip_preserves_data() {
        let layers = vec![
            Layer::Flatten,
            Layer::Reshape { height: 2, width: 3, channels: 2 },
        ];
        let input = uniform_tensor(2, 2, 3, 2, 73);
        let (out, _) = forward_cached(&layers, &input).unwrap();
        assert_eq!(out.dims(), input.dims());
        assert_eq!(out.data(), input.data());
    }
}
