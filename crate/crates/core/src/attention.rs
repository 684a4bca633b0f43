//! Convolutional block attention: channel-wise gating from pooled
//! descriptors through a shared two-layer MLP, then spatial gating from a
//! convolved mean/max map. Both gates are sigmoids, so outputs are the
//! input scaled by factors in (0,1). Applied channel-first.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::conv::{ConvLayer, Padding};
use crate::nn::init::he_uniform;
use crate::tensor::{ImageTensor, Real};

/// Channel gate: `sigmoid(MLP(avgpool(F)) + MLP(maxpool(F)))`, one gate per
/// (batch, channel). The MLP (C -> C/r -> C, ReLU hidden, no biases) is
/// shared between the average and max paths.
#[derive(Debug, Clone)]
pub struct ChannelAttention<T> {
    w1: Vec<T>, // (channels x hidden) row-major
    w2: Vec<T>, // (hidden x channels) row-major
    channels: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct ChannelGrads<T> {
    pub w1: Vec<T>,
    pub w2: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ChannelCache<T> {
    input: ImageTensor<T>,
    avg: Vec<T>,
    max: Vec<T>,
    argmax: Vec<usize>,
    hidden_avg: Vec<T>,
    hidden_max: Vec<T>,
    gate: Vec<T>,
}

impl<T: Real> ChannelAttention<T> {
    pub fn hidden_width(channels: usize, reduction: usize) -> usize {
        (channels / reduction).max(1)
    }

    pub fn new(channels: usize, reduction: usize, w1: Vec<T>, w2: Vec<T>) -> Result<Self> {
        if channels == 0 || reduction == 0 {
            return Err(Error::Config("channel attention needs channels >= 1 and reduction >= 1".into()));
        }
        let hidden = Self::hidden_width(channels, reduction);
        if w1.len() != channels * hidden || w2.len() != hidden * channels {
            return Err(Error::Shape(format!(
                "channel attention MLP expects {}+{} weights, got {}+{}",
                channels * hidden,
                hidden * channels,
                w1.len(),
                w2.len()
            )));
        }
        Ok(Self { w1, w2, channels, hidden })
    }

    pub fn seeded(channels: usize, reduction: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let hidden = Self::hidden_width(channels, reduction);
        let w1 = he_uniform(rng, channels, channels * hidden);
        let w2 = he_uniform(rng, hidden, hidden * channels);
        Self::new(channels, reduction, w1, w2)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn w1(&self) -> &[T] {
        &self.w1
    }

    pub fn w1_mut(&mut self) -> &mut Vec<T> {
        &mut self.w1
    }

    pub fn w2(&self) -> &[T] {
        &self.w2
    }

    pub fn w2_mut(&mut self) -> &mut Vec<T> {
        &mut self.w2
    }

    pub fn weights_mut(&mut self) -> (&mut Vec<T>, &mut Vec<T>) {
        (&mut self.w1, &mut self.w2)
    }

    fn mlp(&self, pooled: &[T]) -> (Vec<T>, Vec<T>) {
        // pooled: length C; returns (hidden post-relu, output scores length C)
        let mut h = vec![T::zero(); self.hidden];
        for (ci, &v) in pooled.iter().enumerate() {
            let row = &self.w1[ci * self.hidden..(ci + 1) * self.hidden];
            for (a, &wv) in h.iter_mut().zip(row) {
                *a += v * wv;
            }
        }
        for a in h.iter_mut() {
            *a = a.max(T::zero());
        }
        let mut s = vec![T::zero(); self.channels];
        for (j, &hv) in h.iter().enumerate() {
            let row = &self.w2[j * self.channels..(j + 1) * self.channels];
            for (a, &wv) in s.iter_mut().zip(row) {
                *a += hv * wv;
            }
        }
        (h, s)
    }

    pub fn forward_cached(&self, input: ImageTensor<T>) -> Result<(ImageTensor<T>, ChannelCache<T>)> {
        let (b, h, w, c) = input.dims();
        if c != self.channels {
            return Err(Error::Shape(format!(
                "channel attention expects {} channels, got {c}",
                self.channels
            )));
        }
        let area = h * w;
        let inv_area = T::of(1.0 / area as f64);
        let mut avg = vec![T::zero(); b * c];
        let mut max = vec![T::neg_infinity(); b * c];
        let mut argmax = vec![0usize; b * c];
        let data = input.data();
        for bi in 0..b {
            for p in 0..area {
                let base = (bi * area + p) * c;
                for ci in 0..c {
                    let v = data[base + ci];
                    avg[bi * c + ci] += v;
                    if v > max[bi * c + ci] {
                        max[bi * c + ci] = v;
                        argmax[bi * c + ci] = base + ci;
                    }
                }
            }
            for ci in 0..c {
                avg[bi * c + ci] *= inv_area;
            }
        }
        let mut hidden_avg = Vec::with_capacity(b * self.hidden);
        let mut hidden_max = Vec::with_capacity(b * self.hidden);
        let mut gate = Vec::with_capacity(b * c);
        for bi in 0..b {
            let (ha, sa) = self.mlp(&avg[bi * c..(bi + 1) * c]);
            let (hm, sm) = self.mlp(&max[bi * c..(bi + 1) * c]);
            hidden_avg.extend_from_slice(&ha);
            hidden_max.extend_from_slice(&hm);
            for (a, m) in sa.iter().zip(&sm) {
                gate.push(T::one() / (T::one() + (-(*a + *m)).exp()));
            }
        }
        let mut out = input.clone();
        for bi in 0..b {
            let g = &gate[bi * c..(bi + 1) * c];
            for px in out.data_mut()[bi * area * c..(bi + 1) * area * c].chunks_mut(c) {
                for (v, &gv) in px.iter_mut().zip(g) {
                    *v *= gv;
                }
            }
        }
        let cache = ChannelCache {
            input,
            avg,
            max,
            argmax,
            hidden_avg,
            hidden_max,
            gate,
        };
        Ok((out, cache))
    }

    pub fn forward(&self, input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Ok(self.forward_cached(input.clone())?.0)
    }

    pub fn backward(&self, cache: &ChannelCache<T>, grad_out: &ImageTensor<T>) -> Result<(ChannelGrads<T>, ImageTensor<T>)> {
        let (b, h, w, c) = cache.input.dims();
        if grad_out.dims() != cache.input.dims() {
            return Err(Error::Shape("channel attention backward: dims mismatch".into()));
        }
        let area = h * w;
        let inv_area = T::of(1.0 / area as f64);
        let mut grads = ChannelGrads {
            w1: vec![T::zero(); self.w1.len()],
            w2: vec![T::zero(); self.w2.len()],
        };
        let mut grad_in = ImageTensor::zeros(b, h, w, c);
        let in_data = cache.input.data();
        let go = grad_out.data();
        // direct path plus gate gradient accumulation
        let mut dgate = vec![T::zero(); b * c];
        {
            let gi = grad_in.data_mut();
            for bi in 0..b {
                let g = &cache.gate[bi * c..(bi + 1) * c];
                for p in 0..area {
                    let base = (bi * area + p) * c;
                    for ci in 0..c {
                        gi[base + ci] += go[base + ci] * g[ci];
                        dgate[bi * c + ci] += go[base + ci] * in_data[base + ci];
                    }
                }
            }
        }
        for bi in 0..b {
            let gate = &cache.gate[bi * c..(bi + 1) * c];
            let ds: Vec<T> = dgate[bi * c..(bi + 1) * c]
                .iter()
                .zip(gate)
                .map(|(&dg, &g)| dg * g * (T::one() - g))
                .collect();
            for (pooled, hidden, is_max) in [
                (&cache.avg[bi * c..(bi + 1) * c], &cache.hidden_avg[bi * self.hidden..(bi + 1) * self.hidden], false),
                (&cache.max[bi * c..(bi + 1) * c], &cache.hidden_max[bi * self.hidden..(bi + 1) * self.hidden], true),
            ] {
                // dW2 and hidden grads
                let mut dh = vec![T::zero(); self.hidden];
                for (j, &hv) in hidden.iter().enumerate() {
                    let w_row = &self.w2[j * self.channels..(j + 1) * self.channels];
                    let dw_row = &mut grads.w2[j * self.channels..(j + 1) * self.channels];
                    let mut dot = T::zero();
                    for ((dw, &wv), &dsv) in dw_row.iter_mut().zip(w_row).zip(&ds) {
                        *dw += hv * dsv;
                        dot += wv * dsv;
                    }
                    dh[j] = if hv > T::zero() { dot } else { T::zero() };
                }
                // dW1 and pooled-descriptor grads
                let gi = grad_in.data_mut();
                for ci in 0..c {
                    let v = pooled[ci];
                    let w_row = &self.w1[ci * self.hidden..(ci + 1) * self.hidden];
                    let dw_row = &mut grads.w1[ci * self.hidden..(ci + 1) * self.hidden];
                    let mut dot = T::zero();
                    for ((dw, &wv), &dhv) in dw_row.iter_mut().zip(w_row).zip(&dh) {
                        *dw += v * dhv;
                        dot += wv * dhv;
                    }
                    if is_max {
                        gi[cache.argmax[bi * c + ci]] += dot;
                    } else {
                        let d = dot * inv_area;
                        for p in 0..area {
                            gi[(bi * area + p) * c + ci] += d;
                        }
                    }
                }
            }
        }
        Ok((grads, grad_in))
    }
}

/// Spatial gate: the channel-mean and channel-max maps are stacked into a
/// 2-channel image, convolved (same padding) down to one channel and passed
/// through a sigmoid; the input is scaled per pixel.
#[derive(Debug, Clone)]
pub struct SpatialAttention<T> {
    conv: ConvLayer<T>,
}

#[derive(Debug, Clone)]
pub struct SpatialGrads<T> {
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SpatialCache<T> {
    input: ImageTensor<T>,
    mean_plane: Vec<T>,
    max_plane: Vec<T>,
    argmax_channel: Vec<usize>,
    gate: Vec<T>,
}

impl<T: Real> SpatialAttention<T> {
    pub fn new(kernel: usize, kernels: Vec<T>, bias: Vec<T>) -> Result<Self> {
        Ok(Self {
            conv: ConvLayer::new(kernel, kernel, 2, 1, kernels, bias, Padding::Same)?,
        })
    }

    pub fn seeded(kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let kernels = he_uniform(rng, kernel * kernel * 2, kernel * kernel * 2);
        Self::new(kernel, kernels, vec![T::zero(); 1])
    }

    pub fn kernel(&self) -> usize {
        self.conv.kernel_dims().0
    }

    pub fn conv(&self) -> &ConvLayer<T> {
        &self.conv
    }

    pub fn conv_mut(&mut self) -> &mut ConvLayer<T> {
        &mut self.conv
    }

    pub fn forward_cached(&self, input: ImageTensor<T>) -> Result<(ImageTensor<T>, SpatialCache<T>)> {
        let (b, h, w, c) = input.dims();
        let inv_c = T::of(1.0 / c as f64);
        let area = b * h * w;
        let mut mean_plane = vec![T::zero(); area];
        let mut max_plane = vec![T::zero(); area];
        let mut argmax_channel = vec![0usize; area];
        for (p, px) in input.data().chunks_exact(c).enumerate() {
            let mut sum = T::zero();
            let mut best = px[0];
            let mut best_c = 0usize;
            for (ci, &v) in px.iter().enumerate() {
                sum += v;
                if v > best {
                    best = v;
                    best_c = ci;
                }
            }
            mean_plane[p] = sum * inv_c;
            max_plane[p] = best;
            argmax_channel[p] = best_c;
        }
        let mut gate = self.plane_conv_forward(&mean_plane, &max_plane, b, h, w);
        for v in gate.iter_mut() {
            *v = T::one() / (T::one() + (-*v).exp());
        }
        let mut out = input.clone();
        for (px, &g) in out.data_mut().chunks_exact_mut(c).zip(&gate) {
            for v in px.iter_mut() {
                *v *= g;
            }
        }
        let cache = SpatialCache {
            input,
            mean_plane,
            max_plane,
            argmax_channel,
            gate,
        };
        Ok((out, cache))
    }

    pub fn forward(&self, input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Ok(self.forward_cached(input.clone())?.0)
    }

    /// Same-padded k x k convolution over the two descriptor planes,
    /// computed directly as shifted row operations.
    fn plane_conv_forward(&self, mean: &[T], max: &[T], b: usize, h: usize, w: usize) -> Vec<T> {
        let k = self.kernel();
        let pad = (k - 1) / 2;
        let kernels = self.conv.kernels();
        let mut scores = vec![self.conv.bias()[0]; b * h * w];
        for bi in 0..b {
            let mean_s = &mean[bi * h * w..(bi + 1) * h * w];
            let max_s = &max[bi * h * w..(bi + 1) * h * w];
            let out_s = &mut scores[bi * h * w..(bi + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wm = kernels[(ky * k + kx) * 2];
                    let wx = kernels[(ky * k + kx) * 2 + 1];
                    let o0 = pad.saturating_sub(kx);
                    let o1 = (w + pad).saturating_sub(kx).min(w);
                    if o0 >= o1 {
                        continue;
                    }
                    let i0 = o0 + kx - pad;
                    for oy in 0..h {
                        let iy = (oy + ky).wrapping_sub(pad);
                        if iy >= h {
                            continue;
                        }
                        let out_row = &mut out_s[oy * w + o0..oy * w + o1];
                        let mean_row = &mean_s[iy * w + i0..iy * w + i0 + (o1 - o0)];
                        let max_row = &max_s[iy * w + i0..iy * w + i0 + (o1 - o0)];
                        for ((o, &mv), &xv) in out_row.iter_mut().zip(mean_row).zip(max_row) {
                            *o += wm * mv + wx * xv;
                        }
                    }
                }
            }
        }
        scores
    }

    /// Gradients of the plane convolution: tap weights via lane-parallel
    /// reductions, plane gradients via the transposed shifted rows.
    #[allow(clippy::too_many_arguments)]
    fn plane_conv_backward(
        &self,
        mean: &[T],
        max: &[T],
        dscore: &[T],
        b: usize,
        h: usize,
        w: usize,
    ) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        const LANES: usize = 16;
        let k = self.kernel();
        let pad = (k - 1) / 2;
        let kernels = self.conv.kernels();
        let mut dk = vec![T::zero(); kernels.len()];
        let mut dbias = T::zero();
        for &g in dscore {
            dbias += g;
        }
        let mut dmean = vec![T::zero(); b * h * w];
        let mut dmax = vec![T::zero(); b * h * w];
        for bi in 0..b {
            let mean_s = &mean[bi * h * w..(bi + 1) * h * w];
            let max_s = &max[bi * h * w..(bi + 1) * h * w];
            let ds_s = &dscore[bi * h * w..(bi + 1) * h * w];
            let dmean_s = &mut dmean[bi * h * w..(bi + 1) * h * w];
            let dmax_s = &mut dmax[bi * h * w..(bi + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wm = kernels[(ky * k + kx) * 2];
                    let wx = kernels[(ky * k + kx) * 2 + 1];
                    let o0 = pad.saturating_sub(kx);
                    let o1 = (w + pad).saturating_sub(kx).min(w);
                    if o0 >= o1 {
                        continue;
                    }
                    let i0 = o0 + kx - pad;
                    let span = o1 - o0;
                    let mut pm = [T::zero(); LANES];
                    let mut px = [T::zero(); LANES];
                    let mut tail_m = T::zero();
                    let mut tail_x = T::zero();
                    for oy in 0..h {
                        let iy = (oy + ky).wrapping_sub(pad);
                        if iy >= h {
                            continue;
                        }
                        let ds_row = &ds_s[oy * w + o0..oy * w + o1];
                        let mean_row = &mean_s[iy * w + i0..iy * w + i0 + span];
                        let max_row = &max_s[iy * w + i0..iy * w + i0 + span];
                        let chunks = span / LANES;
                        for ci in 0..chunks {
                            let d: &[T; LANES] = ds_row[ci * LANES..][..LANES].try_into().unwrap();
                            let m: &[T; LANES] = mean_row[ci * LANES..][..LANES].try_into().unwrap();
                            let x: &[T; LANES] = max_row[ci * LANES..][..LANES].try_into().unwrap();
                            for l in 0..LANES {
                                pm[l] += d[l] * m[l];
                                px[l] += d[l] * x[l];
                            }
                        }
                        for j in chunks * LANES..span {
                            tail_m += ds_row[j] * mean_row[j];
                            tail_x += ds_row[j] * max_row[j];
                        }
                        let dmean_row = &mut dmean_s[iy * w + i0..iy * w + i0 + span];
                        let dmax_row = &mut dmax_s[iy * w + i0..iy * w + i0 + span];
                        for ((dm, dx), &g) in dmean_row.iter_mut().zip(dmax_row.iter_mut()).zip(ds_row) {
                            *dm += wm * g;
                            *dx += wx * g;
                        }
                    }
                    let mut sum_m = T::zero();
                    let mut sum_x = T::zero();
                    for l in 0..LANES {
                        sum_m += pm[l];
                        sum_x += px[l];
                    }
                    dk[(ky * k + kx) * 2] += sum_m + tail_m;
                    dk[(ky * k + kx) * 2 + 1] += sum_x + tail_x;
                }
            }
        }
        (dk, vec![dbias], dmean, dmax)
    }

    pub fn backward(&self, cache: &SpatialCache<T>, grad_out: &ImageTensor<T>) -> Result<(SpatialGrads<T>, ImageTensor<T>)> {
        let (b, h, w, c) = cache.input.dims();
        if grad_out.dims() != cache.input.dims() {
            return Err(Error::Shape("spatial attention backward: dims mismatch".into()));
        }
        let inv_c = T::of(1.0 / c as f64);
        let mut grad_in = ImageTensor::zeros(b, h, w, c);
        let mut dscore = vec![T::zero(); b * h * w];
        {
            let go = grad_out.data();
            let in_data = cache.input.data();
            let gi = grad_in.data_mut();
            for (p, (&g, ds)) in cache.gate.iter().zip(dscore.iter_mut()).enumerate() {
                let mut dg = T::zero();
                for ci in 0..c {
                    gi[p * c + ci] += go[p * c + ci] * g;
                    dg += go[p * c + ci] * in_data[p * c + ci];
                }
                *ds = dg * g * (T::one() - g);
            }
        }
        let (dk, dbias, dmean, dmax) =
            self.plane_conv_backward(&cache.mean_plane, &cache.max_plane, &dscore, b, h, w);
        {
            let gi = grad_in.data_mut();
            for p in 0..b * h * w {
                let d_mean = dmean[p] * inv_c;
                for ci in 0..c {
                    gi[p * c + ci] += d_mean;
                }
                gi[p * c + cache.argmax_channel[p]] += dmax[p];
            }
        }
        Ok((
            SpatialGrads {
                kernels: dk,
                bias: dbias,
            },
            grad_in,
        ))
    }
}

/// Channel attention followed by spatial attention.
#[derive(Debug, Clone)]
pub struct CbamBlock<T> {
    pub channel: ChannelAttention<T>,
    pub spatial: SpatialAttention<T>,
}

#[derive(Debug, Clone)]
pub struct CbamCache<T> {
    channel: ChannelCache<T>,
    spatial: SpatialCache<T>,
}

#[derive(Debug, Clone)]
pub struct CbamGrads<T> {
    pub mlp_w1: Vec<T>,
    pub mlp_w2: Vec<T>,
    pub spatial_kernels: Vec<T>,
    pub spatial_bias: Vec<T>,
}

impl<T: Real> CbamBlock<T> {
    pub fn seeded(channels: usize, reduction: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            channel: ChannelAttention::seeded(channels, reduction, rng)?,
            spatial: SpatialAttention::seeded(kernel, rng)?,
        })
    }

    pub fn parameter_count(&self) -> usize {
        let k = self.spatial.kernel();
        self.channel.w1.len() + self.channel.w2.len() + k * k * 2 + 1
    }

    /// Mutable views of (mlp_w1, mlp_w2, spatial kernels, spatial bias).
    pub fn params_mut(&mut self) -> (&mut Vec<T>, &mut Vec<T>, &mut Vec<T>, &mut Vec<T>) {
        let (w1, w2) = self.channel.weights_mut();
        let (sk, sb) = self.spatial.conv.kernels_bias_mut();
        (w1, w2, sk, sb)
    }

    pub fn forward_cached(&self, input: ImageTensor<T>) -> Result<(ImageTensor<T>, CbamCache<T>)> {
        let (mid, channel) = self.channel.forward_cached(input)?;
        let (out, spatial) = self.spatial.forward_cached(mid)?;
        Ok((out, CbamCache { channel, spatial }))
    }

    pub fn forward(&self, input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Ok(self.forward_cached(input.clone())?.0)
    }

    pub fn backward(&self, cache: &CbamCache<T>, grad_out: &ImageTensor<T>) -> Result<(CbamGrads<T>, ImageTensor<T>)> {
        let (sg, grad_mid) = self.spatial.backward(&cache.spatial, grad_out)?;
        let (cg, grad_in) = self.channel.backward(&cache.channel, &grad_mid)?;
        Ok((
            CbamGrads {
                mlp_w1: cg.w1,
                mlp_w2: cg.w2,
                spatial_kernels: sg.kernels,
                spatial_bias: sg.bias,
            },
            grad_in,
        ))
    }

    pub fn zero_grads(&self) -> CbamGrads<T> {
        let k = self.spatial.kernel();
        CbamGrads {
            mlp_w1: vec![T::zero(); self.channel.w1.len()],
            mlp_w2: vec![T::zero(); self.channel.w2.len()],
            spatial_kernels: vec![T::zero(); k * k * 2],
            spatial_bias: vec![T::zero(); 1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, uniform_tensor};
    use crate::seeding::stream_rng;

    fn zero_channel(c: usize, r: usize) -> ChannelAttention<f64> {
        let hidden = ChannelAttention::<f64>::hidden_width(c, r);
        ChannelAttention::new(c, r, vec![0.0; c * hidden], vec![0.0; hidden * c]).unwrap()
    }

    fn zero_spatial(k: usize) -> SpatialAttention<f64> {
        SpatialAttention::new(k, vec![0.0; k * k * 2], vec![0.0]).unwrap()
    }

    #[test]
    fn zero_mlp_gates_at_half() {
        let block = zero_channel(4, 2);
        let input = uniform_tensor(2, 3, 3, 4, 50);
        let out = block.forward(&input).unwrap();
        for (&o, &i) in out.data().iter().zip(input.data()) {
            assert!((o - i / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_scaling_ratio_constant_per_channel() {
        let mut rng = stream_rng(51, 0);
        let block = ChannelAttention::<f64>::seeded(3, 2, &mut rng).unwrap();
        let input = uniform_tensor(1, 4, 4, 3, 52).map(|v| v + 2.0); // keep nonzero
        let out = block.forward(&input).unwrap();
        for c in 0..3 {
            let r0 = out.get(0, 0, 0, c) / input.get(0, 0, 0, c);
            for y in 0..4 {
                for x in 0..4 {
                    let r = out.get(0, y, x, c) / input.get(0, y, x, c);
                    assert!((r - r0).abs() < 1e-12);
                    assert!(r > 0.0 && r < 1.0);
                }
            }
        }
    }

    #[test]
    fn channel_matches_descriptor_oracle() {
        let mut rng = stream_rng(53, 0);
        let block = ChannelAttention::<f64>::seeded(4, 8, &mut rng).unwrap(); // hidden clamps to 1
        let input = uniform_tensor(2, 3, 5, 4, 54);
        let out = block.forward(&input).unwrap();
        let (b, h, w, c) = input.dims();
        for bi in 0..b {
            for ci in 0..c {
                // pooled descriptors computed directly
                let mut avg = 0.0;
                let mut mx = f64::NEG_INFINITY;
                for y in 0..h {
                    for x in 0..w {
                        avg += input.get(bi, y, x, ci);
                        mx = mx.max(input.get(bi, y, x, ci));
                    }
                }
                avg /= (h * w) as f64;
                // shared MLP applied by hand
                let score = |pooled: &dyn Fn(usize) -> f64| -> f64 {
                    let hidden = block.hidden();
                    let mut hvals = vec![0.0; hidden];
                    for cin in 0..c {
                        for j in 0..hidden {
                            hvals[j] += pooled(cin) * block.w1()[cin * hidden + j];
                        }
                    }
                    for v in hvals.iter_mut() {
                        *v = v.max(0.0);
                    }
                    let mut s = 0.0;
                    for (j, hv) in hvals.iter().enumerate() {
                        s += hv * block.w2()[j * c + ci];
                    }
                    s
                };
                let avg_of = |cin: usize| {
                    let mut a = 0.0;
                    for y in 0..h {
                        for x in 0..w {
                            a += input.get(bi, y, x, cin);
                        }
                    }
                    a / (h * w) as f64
                };
                let max_of = |cin: usize| {
                    let mut m = f64::NEG_INFINITY;
                    for y in 0..h {
                        for x in 0..w {
                            m = m.max(input.get(bi, y, x, cin));
                        }
                    }
                    m
                };
                let s = score(&avg_of) + score(&max_of);
                let gate = 1.0 / (1.0 + (-s).exp());
                let _ = (avg, mx);
                for y in 0..h {
                    for x in 0..w {
                        let want = input.get(bi, y, x, ci) * gate;
                        let got = out.get(bi, y, x, ci);
                        assert!(max_rel_err(&[got], &[want]) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_spatial_conv_gates_at_half() {
        let block = zero_spatial(7);
        let input = uniform_tensor(1, 4, 4, 3, 55);
        let out = block.forward(&input).unwrap();
        for (&o, &i) in out.data().iter().zip(input.data()) {
            assert!((o - i / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spatial_ratio_constant_across_channels() {
        let mut rng = stream_rng(56, 0);
        let block = SpatialAttention::<f64>::seeded(3, &mut rng).unwrap();
        let input = uniform_tensor(1, 4, 4, 3, 57).map(|v| v + 2.0);
        let out = block.forward(&input).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let r0 = out.get(0, y, x, 0) / input.get(0, y, x, 0);
                for c in 1..3 {
                    let r = out.get(0, y, x, c) / input.get(0, y, x, c);
                    assert!((r - r0).abs() < 1e-12);
                    assert!(r > 0.0 && r < 1.0);
                }
            }
        }
    }

    #[test]
    fn spatial_matches_descriptor_oracle() {
        let mut rng = stream_rng(58, 0);
        let block = SpatialAttention::<f64>::seeded(3, &mut rng).unwrap();
        let input = uniform_tensor(1, 5, 4, 3, 59);
        let out = block.forward(&input).unwrap();
        let (_, h, w, c) = input.dims();
        // build the 2-channel descriptor by hand, convolve with the block's
        // own kernel via an independent loop, then gate
        let k = block.kernel();
        let pad = (k - 1) / 2;
        for y in 0..h {
            for x in 0..w {
                let mut s = block.conv().bias()[0];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = y as isize + ky as isize - pad as isize;
                        let ix = x as isize + kx as isize - pad as isize;
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let mut mean = 0.0;
                        let mut mx = f64::NEG_INFINITY;
                        for ci in 0..c {
                            let v = input.get(0, iy as usize, ix as usize, ci);
                            mean += v;
                            mx = mx.max(v);
                        }
                        mean /= c as f64;
                        s += mean * block.conv().kernels()[((ky * k + kx) * 2) * 1];
                        s += mx * block.conv().kernels()[((ky * k + kx) * 2 + 1) * 1];
                    }
                }
                let gate = 1.0 / (1.0 + (-s).exp());
                for ci in 0..c {
                    let want = input.get(0, y, x, ci) * gate;
                    assert!(max_rel_err(&[out.get(0, y, x, ci)], &[want]) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_weighted_cbam_quarters_input() {
        let block = CbamBlock {
            channel: zero_channel(3, 8),
            spatial: zero_spatial(7),
        };
        let input = uniform_tensor(2, 4, 4, 3, 60);
        let out = block.forward(&input).unwrap();
        for (&o, &i) in out.data().iter().zip(input.data()) {
            assert!((o - i / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cbam_preserves_sign_and_bounds() {
        let mut rng = stream_rng(61, 0);
        let block = CbamBlock::<f64>::seeded(4, 8, 7, &mut rng).unwrap();
        let input = uniform_tensor(1, 6, 6, 4, 62).map(f64::abs);
        let out = block.forward(&input).unwrap();
        for (&o, &i) in out.data().iter().zip(input.data()) {
            assert!(o >= 0.0);
            assert!(o.abs() <= i.abs());
        }
    }

    #[test]
    fn channel_gate_invariant_under_spatial_permutation() {
        let mut rng = stream_rng(63, 0);
        let block = ChannelAttention::<f64>::seeded(3, 2, &mut rng).unwrap();
        let input = uniform_tensor(1, 2, 2, 3, 64);
        // reverse the four pixels; per-channel mean and max are preserved
        let (_, h, w, c) = input.dims();
        let mut permuted = ImageTensor::zeros(1, h, w, c);
        for p in 0..h * w {
            let q = h * w - 1 - p;
            for ci in 0..c {
                let v = input.data()[p * c + ci];
                permuted.data_mut()[q * c + ci] = v;
            }
        }
        let a = block.forward(&input).unwrap();
        let b = block.forward(&permuted).unwrap();
        // gates equal => output/input ratio equal per channel
        for ci in 0..c {
            let ra = a.get(0, 0, 0, ci) / input.get(0, 0, 0, ci);
            let rb = b.get(0, 0, 0, ci) / permuted.get(0, 0, 0, ci);
            assert!((ra - rb).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_closed_form() {
        let mut rng = stream_rng(65, 0);
        for &c in &[8usize, 16, 32, 64] {
            let block = CbamBlock::<f64>::seeded(c, 8, 7, &mut rng).unwrap();
            let expected = 2 * c * (c / 8).max(1) + (7 * 7 * 2 + 1);
            assert_eq!(block.parameter_count(), expected);
        }
    }

    #[test]
    fn cbam_gradient_matches_finite_differences() {
        // scalar loss: sum of squares of the block output
        let mut rng = stream_rng(66, 0);
        let mut block = CbamBlock::<f64>::seeded(3, 2, 3, &mut rng).unwrap();
        let input = uniform_tensor(2, 4, 4, 3, 67);
        let loss_of = |blk: &CbamBlock<f64>| -> f64 {
            let out = blk.forward(&input).unwrap();
            out.data().iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = block.forward_cached(input.clone()).unwrap();
        let grad_out = out.map(|v| 2.0 * v);
        let (grads, _) = block.backward(&cache, &grad_out).unwrap();
        let h = 1e-5;
        let mut check = |analytic: &[f64], write: &mut dyn FnMut(&mut CbamBlock<f64>, usize, f64), read: &dyn Fn(&CbamBlock<f64>, usize) -> f64| {
            for i in 0..analytic.len() {
                let orig = read(&block, i);
                write(&mut block, i, orig + h);
                let lp = loss_of(&block);
                write(&mut block, i, orig - h);
                let lm = loss_of(&block);
                write(&mut block, i, orig);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (analytic[i] - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", analytic[i]);
            }
        };
        let g = grads.clone();
        check(
            &g.mlp_w1,
            &mut |b, i, v| b.channel.w1_mut()[i] = v,
            &|b, i| b.channel.w1()[i],
        );
        check(
            &g.mlp_w2,
            &mut |b, i, v| b.channel.w2_mut()[i] = v,
            &|b, i| b.channel.w2()[i],
        );
        check(
            &g.spatial_kernels,
            &mut |b, i, v| b.spatial.conv_mut().kernels_mut()[i] = v,
            &|b, i| b.spatial.conv().kernels()[i],
        );
        check(
            &g.spatial_bias,
            &mut |b, i, v| b.spatial.conv_mut().bias_mut()[i] = v,
            &|b, i| b.spatial.conv().bias()[i],
        );
    }
}
