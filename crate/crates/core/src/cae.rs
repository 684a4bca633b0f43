//! The convolutional autoencoder: a four-conv + three-dense encoder down to
//! a linear embedding layer, a mirrored decoder with a 3-channel output
//! head, optional CBAM blocks behind every encoder convolution, seeded
//! training with Adam on the reconstruction cross-entropy, and the
//! embedding-dimension sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::CbamBlock;
use crate::data::subset::{split, LabeledDataset};
use crate::error::{Error, Result};
use crate::knn::{knn_scores, KnnConfig, PointSet};
use crate::metrics::roc_auc;
use crate::nn::adam::{AdamHyper, AdamState};
use crate::nn::conv::{ConvLayer, Padding};
use crate::nn::dense::DenseLayer;
use crate::nn::init::he_uniform;
use crate::nn::loss::bce_loss;
use crate::nn::stack::{backward_pass, forward, forward_cached, zero_grads, Layer, LayerGrads};
use crate::seeding::{derive_seed, stream_rng};
use crate::tensor::{ImageTensor, Real};

/// Decoder output activation. The channel softmax follows the published
/// architecture; the sigmoid head is selectable because pairing a softmax
/// with binary cross-entropy is unconventional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Softmax3,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

/// Architecture description. Defaults follow the published network:
/// 64x64x3 input, conv filters 64/32/16/8 with 2x2 pooling, dense units
/// 128/64/32, a 20-wide linear embedding, and a mirrored decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeSpec {
    pub input_dims: (usize, usize, usize),
    pub encoder_conv_filters: [usize; 4],
    pub encoder_dense_units: [usize; 3],
    pub embedding_dim: usize,
    pub output_head: OutputHead,
    pub use_attention: bool,
    pub attention_reduction: usize,
    pub attention_kernel: usize,
    pub kernel_size: usize,
}

impl Default for CaeSpec {
    fn default() -> Self {
        Self {
            input_dims: (64, 64, 3),
            encoder_conv_filters: [64, 32, 16, 8],
            encoder_dense_units: [128, 64, 32],
            embedding_dim: 20,
            output_head: OutputHead::Softmax3,
            use_attention: false,
            attention_reduction: 8,
            attention_kernel: 7,
            kernel_size: 3,
        }
    }
}

impl CaeSpec {
    pub fn with_attention() -> Self {
        Self { use_attention: true, ..Self::default() }
    }

    /// Spatial dims at the bottleneck after the four pooling halvings.
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let (h, w, _) = self.input_dims;
        (h / 16, w / 16, self.encoder_conv_filters[3])
    }

    /// Width of the flattened bottleneck.
    pub fn flatten_len(&self) -> usize {
        let (h, w, c) = self.bottleneck();
        h * w * c
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.input_dims;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!(
                "input dims must be divisible by 16 for the four pooling stages, got {h}x{w}"
            )));
        }
        if c < 2 && self.output_head == OutputHead::Softmax3 {
            return Err(Error::Config("softmax output head needs >= 2 channels".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        if self.kernel_size % 2 == 0 || self.attention_kernel % 2 == 0 {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.attention_reduction == 0 {
            return Err(Error::Config("attention reduction must be >= 1".into()));
        }
        if self.encoder_conv_filters.iter().any(|&f| f == 0) || self.encoder_dense_units.iter().any(|&u| u == 0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.encoder_dense_units[0] != self.flatten_len() {
            return Err(Error::Config(format!(
                "first dense width {} must equal the flattened bottleneck {} so the decoder mirrors the encoder",
                self.encoder_dense_units[0],
                self.flatten_len()
            )));
        }
        Ok(())
    }
}

/// Encoder plus decoder as one ordered layer stack; `encoder_len` marks the
/// embedding boundary.
#[derive(Debug, Clone)]
pub struct CaeModel<T> {
    spec: CaeSpec,
    layers: Vec<Layer<T>>,
    encoder_len: usize,
}

/// Build a seeded model with the exact layer chain
/// conv->relu->[cbam]->pool (x4) -> flatten -> dense chain -> embedding,
/// mirrored back up to the 3-channel output head.
pub fn build_cae<T: Real>(spec: &CaeSpec, seed: u64) -> Result<CaeModel<T>> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0xCAE);
    let k = spec.kernel_size;
    let (_, _, c_in) = spec.input_dims;
    let mut layers: Vec<Layer<T>> = Vec::new();

    let mut prev = c_in;
    for &filters in &spec.encoder_conv_filters {
        let kernels = he_uniform(&mut rng, k * k * prev, k * k * prev * filters);
        layers.push(Layer::Conv(ConvLayer::new(k, k, prev, filters, kernels, vec![T::zero(); filters], Padding::Same)?));
        layers.push(Layer::Relu);
        if spec.use_attention {
            layers.push(Layer::Cbam(CbamBlock::seeded(
                filters,
                spec.attention_reduction,
                spec.attention_kernel,
                &mut rng,
            )?));
        }
        layers.push(Layer::MaxPool2);
        prev = filters;
    }
    layers.push(Layer::Flatten);
    let mut width = spec.flatten_len();
    for &units in &spec.encoder_dense_units {
        let weight = he_uniform(&mut rng, width, width * units);
        layers.push(Layer::Dense(DenseLayer::new(width, units, weight, vec![T::zero(); units])?));
        layers.push(Layer::Relu);
        width = units;
    }
    let weight = he_uniform(&mut rng, width, width * spec.embedding_dim);
    layers.push(Layer::Dense(DenseLayer::new(width, spec.embedding_dim, weight, vec![T::zero(); spec.embedding_dim])?));
    let encoder_len = layers.len();

    // decoder: dense chain mirrored, reshape, conv chain mirrored, output head
    let mut width = spec.embedding_dim;
    for &units in spec.encoder_dense_units.iter().rev() {
        let weight = he_uniform(&mut rng, width, width * units);
        layers.push(Layer::Dense(DenseLayer::new(width, units, weight, vec![T::zero(); units])?));
        layers.push(Layer::Relu);
        width = units;
    }
    let (bh, bw, bc) = spec.bottleneck();
    layers.push(Layer::Reshape { height: bh, width: bw, channels: bc });
    let mut prev = bc;
    for &filters in spec.encoder_conv_filters.iter().rev() {
        let kernels = he_uniform(&mut rng, k * k * prev, k * k * prev * filters);
        layers.push(Layer::Conv(ConvLayer::new(k, k, prev, filters, kernels, vec![T::zero(); filters], Padding::Same)?));
        layers.push(Layer::Relu);
        layers.push(Layer::Upsample2);
        prev = filters;
    }
    let kernels = he_uniform(&mut rng, k * k * prev, k * k * prev * c_in);
    layers.push(Layer::Conv(ConvLayer::new(k, k, prev, c_in, kernels, vec![T::zero(); c_in], Padding::Same)?));
    layers.push(match spec.output_head {
        OutputHead::Softmax3 => Layer::SoftmaxChannels,
        OutputHead::Sigmoid => Layer::Sigmoid,
    });

    Ok(CaeModel { spec: spec.clone(), layers, encoder_len })
}

impl<T: Real> CaeModel<T> {
    pub fn spec(&self) -> &CaeSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn encoder(&self) -> &[Layer<T>] {
        &self.layers[..self.encoder_len]
    }

    pub fn decoder(&self) -> &[Layer<T>] {
        &self.layers[self.encoder_len..]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    fn check_input(&self, batch: &ImageTensor<T>) -> Result<()> {
        let (_, h, w, c) = batch.dims();
        if (h, w, c) != self.spec.input_dims {
            return Err(Error::Shape(format!(
                "model expects {:?} inputs, got {h}x{w}x{c}",
                self.spec.input_dims
            )));
        }
        Ok(())
    }

    /// Embeddings for a batch, one row of `embedding_dim` per image.
    pub fn encode(&self, batch: &ImageTensor<T>) -> Result<Vec<Vec<T>>> {
        let out = self.encode_tensor(batch)?;
        Ok((0..out.batch()).map(|b| out.sample_slice(b).to_vec()).collect())
    }

    fn encode_tensor(&self, batch: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        self.check_input(batch)?;
        forward(self.encoder(), batch)
    }

    /// Reconstructions from embedding rows.
    pub fn decode(&self, embeddings: &[Vec<T>]) -> Result<ImageTensor<T>> {
        if embeddings.iter().any(|r| r.len() != self.spec.embedding_dim) {
            return Err(Error::Shape(format!(
                "embeddings must be {} wide",
                self.spec.embedding_dim
            )));
        }
        let carrier = ImageTensor::from_rows(embeddings)?;
        forward(self.decoder(), &carrier)
    }

    /// decode(encode(x)) through the full stack.
    pub fn reconstruct(&self, batch: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        self.check_input(batch)?;
        forward(&self.layers, batch)
    }

    /// Parameter array lengths in canonical order (for optimizer state).
    pub fn param_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| l.param_arrays().into_iter().map(|(_, a)| a.len()))
            .collect()
    }

    /// Canonical names, shapes and views of every parameter array.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (name, layer) in named_layers(&self.layers, self.encoder_len) {
            let shapes = layer.param_shapes();
            for ((role, values), (_, shape)) in layer.param_arrays().into_iter().zip(shapes) {
                out.push((format!("{name}.{role}"), shape, values));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| l.param_arrays_mut()).collect()
    }

    /// Convert parameter precision through f64 (used by persistence).
    pub fn cast<U: Real>(&self) -> CaeModel<U> {
        let mut target: CaeModel<U> = build_cae(&self.spec, 0).expect("validated spec rebuilds");
        let src: Vec<Vec<U>> = self
            .layers
            .iter()
            .flat_map(|l| l.param_arrays().into_iter().map(|(_, a)| a.iter().map(|v| U::of(v.as_f64())).collect()))
            .collect();
        for (dst, values) in target.params_mut().into_iter().zip(src) {
            *dst = values;
        }
        target
    }
}

/// Stable names for every parameterized layer: conv1..convN and
/// dense1..denseN per side, cbam1..cbam4 in the encoder, `decoder.out` for
/// the output convolution.
pub fn named_layers<T: Real>(layers: &[Layer<T>], encoder_len: usize) -> Vec<(String, &Layer<T>)> {
    let mut out = Vec::new();
    let mut conv = 0usize;
    let mut dense = 0usize;
    let mut cbam = 0usize;
    let conv_total_decoder = layers[encoder_len..]
        .iter()
        .filter(|l| matches!(l, Layer::Conv(_)))
        .count();
    let mut decoder_conv_seen = 0usize;
    for (i, layer) in layers.iter().enumerate() {
        let side = if i < encoder_len { "encoder" } else { "decoder" };
        match layer {
            Layer::Conv(_) => {
                let name = if i >= encoder_len {
                    decoder_conv_seen += 1;
                    if decoder_conv_seen == conv_total_decoder {
                        "out".to_string()
                    } else {
                        conv += 1;
                        format!("conv{conv}")
                    }
                } else {
                    conv += 1;
                    format!("conv{conv}")
                };
                out.push((format!("{side}.{name}"), layer));
            }
            Layer::Dense(_) => {
                dense += 1;
                out.push((format!("{side}.dense{dense}"), layer));
            }
            Layer::Cbam(_) => {
                cbam += 1;
                out.push((format!("{side}.cbam{cbam}"), layer));
            }
            _ => {}
        }
    }
    out
}

impl<T: Real> Layer<T> {
    /// Shapes aligned with [`Layer::param_arrays`].
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            Layer::Conv(l) => {
                let (kh, kw, ci, co) = l.kernel_dims();
                vec![("kernels", vec![kh, kw, ci, co]), ("bias", vec![co])]
            }
            Layer::Dense(l) => {
                let (ni, no) = l.dims();
                vec![("weight", vec![ni, no]), ("bias", vec![no])]
            }
            Layer::Cbam(b) => {
                let c = b.channel.channels();
                let h = b.channel.hidden();
                let k = b.spatial.kernel();
                vec![
                    ("mlp_w1", vec![c, h]),
                    ("mlp_w2", vec![h, c]),
                    ("spatial_kernels", vec![k, k, 2, 1]),
                    ("spatial_bias", vec![1]),
                ]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    pub per_epoch: Vec<f64>,
}

/// Samples are processed in fixed-size chunks that parallelize across
/// workers; gradients reduce in chunk order so results do not depend on
/// the thread count.
const GRAD_CHUNK: usize = 8;

fn batch_gradients<T: Real>(
    layers: &[Layer<T>],
    dataset: &ImageTensor<T>,
    batch: &[usize],
) -> Result<(f64, Vec<LayerGrads<T>>)> {
    let chunk_results: Vec<Result<(f64, usize, Vec<LayerGrads<T>>)>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let images = dataset.gather(chunk);
            let (out, caches) = forward_cached(layers, &images)?;
            // per-chunk mean loss; gradients reweighted by chunk size below
            let (loss, loss_grad) = bce_loss(&out, &images)?;
            let (grads, _) = backward_pass(layers, &caches, &loss_grad)?;
            Ok((loss, chunk.len(), grads))
        })
        .collect();
    let mut total = zero_grads(layers);
    let mut loss_sum = 0.0f64;
    for result in chunk_results {
        let (loss, len, mut grads) = result?;
        loss_sum += loss * len as f64;
        let weight = T::of(len as f64);
        for (a, g) in total.iter_mut().zip(grads.iter_mut()) {
            g.scale(weight);
            a.add_assign(g);
        }
    }
    let inv = T::of(1.0 / batch.len() as f64);
    for g in total.iter_mut() {
        g.scale(inv);
    }
    Ok((loss_sum / batch.len() as f64, total))
}

/// Unsupervised training: Adam on the reconstruction cross-entropy, a
/// seeded shuffle per epoch, loss recorded per epoch. Fails with the
/// offending epoch if the loss stops being finite.
pub fn train_cae<T: Real>(model: &mut CaeModel<T>, dataset: &ImageTensor<T>, config: &TrainConfig) -> Result<LossHistory> {
    if dataset.batch() == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    model.check_input(dataset)?;
    if dataset.data().iter().any(|&v| v < T::zero() || v > T::one()) {
        return Err(Error::Data("training images must lie in [0,1]".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let n = dataset.batch();
    let mut adam = AdamState::new(
        AdamHyper::with_learning_rate(config.learning_rate),
        &model.param_lens(),
    )?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = stream_rng(config.seed, 0xE60C + epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut epoch_loss_weighted = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradients(&model.layers, dataset, batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss became {loss}"),
                });
            }
            let flat_grads: Vec<&[T]> = grads.iter().flat_map(|g| g.arrays()).collect();
            let mut params = model.params_mut();
            let mut param_slices: Vec<&mut [T]> = params.iter_mut().map(|v| v.as_mut_slice()).collect();
            adam.step(&mut param_slices, &flat_grads)?;
            epoch_loss_weighted += loss * batch.len() as f64;
        }
        history.push(epoch_loss_weighted / n as f64);
    }
    Ok(LossHistory { per_epoch: history })
}

/// AUC summary of one embedding-dimension setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub dim: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
}

/// One full detect+AUC trial: split, train, embed the test images, score
/// with k-NN, report AUC against the test labels.
fn detection_trial(
    spec: &CaeSpec,
    dataset: &LabeledDataset,
    train_config: &TrainConfig,
    knn_config: &KnnConfig,
    seed: u64,
) -> Result<f64> {
    let (train_set, test_set) = split(dataset, 0.7, derive_seed(seed, 1))?;
    let mut model: CaeModel<f32> = build_cae(spec, derive_seed(seed, 2))?;
    let mut cfg = *train_config;
    cfg.seed = derive_seed(seed, 3);
    train_cae(&mut model, &train_set.images, &cfg)?;
    let embeddings = model.encode(&test_set.images)?;
    let rows: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    let scores = knn_scores(&PointSet::from_rows(&rows)?, knn_config)?;
    Ok(roc_auc(&scores, &test_set.labels)?.auc)
}

/// Train `trials` independent models per embedding dimension and report
/// the mean and (population) standard deviation of the detection AUC.
pub fn sweep_embedding_dim(
    base_spec: &CaeSpec,
    dims: &[usize],
    dataset: &LabeledDataset,
    train_config: &TrainConfig,
    knn_config: &KnnConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if trials == 0 {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    let mut out = Vec::with_capacity(dims.len());
    for &dim in dims {
        let mut aucs = Vec::with_capacity(trials);
        for trial in 0..trials {
            let spec = CaeSpec { embedding_dim: dim, ..base_spec.clone() };
            let trial_seed = derive_seed(seed, ((dim as u64) << 20) | trial as u64);
            let auc = detection_trial(&spec, dataset, train_config, knn_config, trial_seed)
                .map_err(|e| Error::SweepDim { dim, source: Box::new(e) })?;
            aucs.push(auc);
        }
        let mean = aucs.iter().sum::<f64>() / trials as f64;
        let var = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / trials as f64;
        out.push(SweepPoint { dim, mean_auc: mean, std_auc: var.sqrt() });
    }
    Ok(out)
}
