//! 2-D convolution over batch-height-width-channel tensors.
//!
//! Kernels are stored (kh, kw, c_in, c_out) row-major, which is exactly the
//! (patch-width x c_out) matrix an im2col patch buffer wants to multiply
//! against, so forward and both backward products run through the blocked
//! GEMM in [`crate::nn::gemm`].

use crate::error::{Error, Result};
use crate::nn::gemm::{gemm, gemm_a_transposed};
use crate::tensor::{ImageTensor, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of (k-1)/2 on each side; spatial dims preserved.
    Same,
    /// No padding; output shrinks by k-1.
    Valid,
}

#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    kernels: Vec<T>,
    bias: Vec<T>,
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    padding: Padding,
}

/// Parameter gradients of a [`ConvLayer`], same layouts as the layer.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

/// Forward-pass state kept for backward.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input: ImageTensor<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize, kernels: Vec<T>, bias: Vec<T>, padding: Padding) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
            return Err(Error::Config(format!("conv kernel dims must be odd and >= 1, got {kh}x{kw}")));
        }
        if kernels.len() != kh * kw * c_in * c_out {
            return Err(Error::Shape(format!(
                "conv kernels expect {} values for {kh}x{kw}x{c_in}x{c_out}, got {}",
                kh * kw * c_in * c_out,
                kernels.len()
            )));
        }
        if bias.len() != c_out {
            return Err(Error::Shape(format!("conv bias expects {c_out} values, got {}", bias.len())));
        }
        Ok(Self { kernels, bias, kh, kw, c_in, c_out, padding })
    }

    pub fn zeroed(kh: usize, kw: usize, c_in: usize, c_out: usize, padding: Padding) -> Result<Self> {
        Self::new(kh, kw, c_in, c_out, vec![T::zero(); kh * kw * c_in * c_out], vec![T::zero(); c_out], padding)
    }

    pub fn kernel_dims(&self) -> (usize, usize, usize, usize) {
        (self.kh, self.kw, self.c_in, self.c_out)
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn kernels(&self) -> &[T] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut Vec<T> {
        &mut self.kernels
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Vec<T> {
        &mut self.bias
    }

    pub fn kernels_bias_mut(&mut self) -> (&mut Vec<T>, &mut Vec<T>) {
        (&mut self.kernels, &mut self.bias)
    }

    pub fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            kernels: vec![T::zero(); self.kernels.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    fn pad(&self) -> (usize, usize) {
        match self.padding {
            Padding::Same => ((self.kh - 1) / 2, (self.kw - 1) / 2),
            Padding::Valid => (0, 0),
        }
    }

    fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.padding {
            Padding::Same => Ok((h, w)),
            Padding::Valid => {
                if h < self.kh || w < self.kw {
                    return Err(Error::Shape(format!(
                        "valid conv needs input >= {}x{}, got {h}x{w}",
                        self.kh, self.kw
                    )));
                }
                Ok((h - self.kh + 1, w - self.kw + 1))
            }
        }
    }

    /// Copy one sample's windows into the patch matrix: row = output
    /// position, column = (ky, kx, ci). Out-of-frame cells must already be
    /// zero in `patches` (the geometry is identical for every sample, so
    /// one zero fill serves a whole batch).
    fn im2col(&self, sample: &[T], h: usize, w: usize, oh: usize, ow: usize, patches: &mut [T]) {
        let (c_in, kck) = (self.c_in, self.patch_width());
        let (ph, pw) = self.pad();
        for oy in 0..oh {
            for ky in 0..self.kh {
                // usize wrap-around makes out-of-frame rows/cols large
                let iy = (oy + ky).wrapping_sub(ph);
                if iy >= h {
                    continue;
                }
                let in_row = &sample[(iy * w) * c_in..(iy * w + w) * c_in];
                for ox in 0..ow {
                    let row = &mut patches[(oy * ow + ox) * kck..(oy * ow + ox + 1) * kck];
                    for kx in 0..self.kw {
                        let ix = (ox + kx).wrapping_sub(pw);
                        if ix >= w {
                            continue;
                        }
                        let col = (ky * self.kw + kx) * c_in;
                        row[col..col + c_in].copy_from_slice(&in_row[ix * c_in..(ix + 1) * c_in]);
                    }
                }
            }
        }
    }

    /// Patch-matrix width: kh * kw * c_in.
    fn patch_width(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    /// Windowed dot product plus bias at every output position.
    pub fn forward(&self, input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let (b, h, w, c) = input.dims();
        if c != self.c_in {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.c_in
            )));
        }
        let (oh, ow) = self.out_dims(h, w)?;
        let (c_out, kck) = (self.c_out, self.patch_width());
        let positions = oh * ow;
        let mut out = ImageTensor::zeros(b, oh, ow, c_out);
        // one per-sample buffer reused so inference over large batches
        // stays memory-flat
        let mut patches = vec![T::zero(); positions * kck];
        for bi in 0..b {
            self.im2col(input.sample_slice(bi), h, w, oh, ow, &mut patches);
            let out_sample = &mut out.data_mut()[bi * positions * c_out..(bi + 1) * positions * c_out];
            for px in out_sample.chunks_exact_mut(c_out) {
                px.copy_from_slice(&self.bias);
            }
            gemm(positions, c_out, kck, &patches, &self.kernels, out_sample);
        }
        Ok(out)
    }

    /// Forward keeping what backward needs.
    pub fn forward_cached(&self, input: &ImageTensor<T>) -> Result<(ImageTensor<T>, ConvCache<T>)> {
        let out = self.forward(input)?;
        Ok((out, ConvCache { input: input.clone() }))
    }

    /// Gradients of kernels, bias and input from a cached forward pass.
    pub fn backward_cached(&self, cache: &ConvCache<T>, grad_out: &ImageTensor<T>) -> Result<(ConvGrads<T>, ImageTensor<T>)> {
        let input = &cache.input;
        let (b, h, w, c_in) = input.dims();
        let (ph, pw) = self.pad();
        let (oh, ow) = self.out_dims(h, w)?;
        if grad_out.dims() != (b, oh, ow, self.c_out) {
            return Err(Error::Shape(format!(
                "conv backward: grad dims {:?} do not match output {:?}",
                grad_out.dims(),
                (b, oh, ow, self.c_out)
            )));
        }
        let (c_out, kck) = (self.c_out, self.patch_width());
        let positions = oh * ow;
        let mut grads = self.zero_grads();
        let go = grad_out.data();
        for go_px in go.chunks_exact(c_out) {
            for (dbv, &g) in grads.bias.iter_mut().zip(go_px) {
                *dbv += g;
            }
        }
        let mut kernels_t = vec![T::zero(); kck * c_out];
        for p in 0..kck {
            for co in 0..c_out {
                kernels_t[co * kck + p] = self.kernels[p * c_out + co];
            }
        }
        let mut grad_in = ImageTensor::zeros(b, h, w, c_in);
        // per-sample products keep the working buffers cache-sized
        let mut patches = vec![T::zero(); positions * kck];
        let mut grad_patches = vec![T::zero(); positions * kck];
        for bi in 0..b {
            let go_sample = &go[bi * positions * c_out..(bi + 1) * positions * c_out];
            self.im2col(input.sample_slice(bi), h, w, oh, ow, &mut patches);
            // dW += patches^T . grad_out
            gemm_a_transposed(kck, c_out, positions, &patches, go_sample, &mut grads.kernels);
            // d(patches) = grad_out . W^T, scattered back onto the input
            grad_patches.iter_mut().for_each(|v| *v = T::zero());
            gemm(positions, kck, c_out, go_sample, &kernels_t, &mut grad_patches);
            let gi_sample = &mut grad_in.data_mut()[bi * h * w * c_in..(bi + 1) * h * w * c_in];
            let gp_sample = &grad_patches[..];
            for oy in 0..oh {
                for ky in 0..self.kh {
                    let iy = (oy + ky).wrapping_sub(ph);
                    if iy >= h {
                        continue;
                    }
                    let gi_row = &mut gi_sample[(iy * w) * c_in..(iy * w + w) * c_in];
                    for ox in 0..ow {
                        let row = &gp_sample[(oy * ow + ox) * kck..(oy * ow + ox + 1) * kck];
                        for kx in 0..self.kw {
                            let ix = (ox + kx).wrapping_sub(pw);
                            if ix >= w {
                                continue;
                            }
                            let col = (ky * self.kw + kx) * c_in;
                            let gi_px = &mut gi_row[ix * c_in..(ix + 1) * c_in];
                            for (gi, &g) in gi_px.iter_mut().zip(&row[col..col + c_in]) {
                                *gi += g;
                            }
                        }
                    }
                }
            }
        }
        Ok((grads, grad_in))
    }

    /// Gradients of kernels, bias and input given the forward input and the
    /// gradient flowing back from the output.
    pub fn backward(&self, input: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> Result<(ConvGrads<T>, ImageTensor<T>)> {
        let cache = ConvCache { input: input.clone() };
        self.backward_cached(&cache, grad_out)
    }
}
