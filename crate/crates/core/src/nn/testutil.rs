//! Shared helpers for unit tests: seeded random tensors and naive
//! reference implementations kept independent of the production kernels.

use rand::Rng;

use crate::seeding::stream_rng;
use crate::tensor::ImageTensor;

/// Seeded uniform values in [-1, 1).
pub fn uniform_tensor(b: usize, h: usize, w: usize, c: usize, seed: u64) -> ImageTensor<f64> {
    let mut rng = stream_rng(seed, 0xEC);
    let data = (0..b * h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ImageTensor::new(b, h, w, c, data).unwrap()
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Six-nested-loop reference convolution (same or valid padding).
pub fn loop_conv2d(
    input: &ImageTensor<f64>,
    kernels: &[f64],
    bias: &[f64],
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    same: bool,
) -> ImageTensor<f64> {
    let (b, h, w, _) = input.dims();
    let (ph, pw) = if same { ((kh - 1) / 2, (kw - 1) / 2) } else { (0, 0) };
    let (oh, ow) = if same { (h, w) } else { (h - kh + 1, w - kw + 1) };
    let mut out = ImageTensor::zeros(b, oh, ow, c_out);
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..c_out {
                    let mut acc = bias[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..c_in {
                                let iy = oy as isize + ky as isize - ph as isize;
                                let ix = ox as isize + kx as isize - pw as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let k = kernels[((ky * kw + kx) * c_in + ci) * c_out + co];
                                acc += input.get(bi, iy as usize, ix as usize, ci) * k;
                            }
                        }
                    }
                    out.set(bi, oy, ox, co, acc);
                }
            }
        }
    }
    out
}
