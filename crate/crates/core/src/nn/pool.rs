//! 2x2 max pooling and nearest-neighbor 2x upsampling.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Real};

/// Halve spatial dims, taking the max of each 2x2 window. Returns the flat
/// input index of each winning element for the backward pass; ties go to
/// the first occurrence in row-major window order.
pub fn maxpool2<T: Real>(input: &ImageTensor<T>) -> Result<(ImageTensor<T>, Vec<usize>)> {
    let (b, h, w, c) = input.dims();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = ImageTensor::zeros(b, oh, ow, c);
    let mut indices = vec![0usize; out.len()];
    let in_data = input.data();
    let out_data = out.data_mut();
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best_idx = ((bi * h + oy * 2) * w + ox * 2) * c + ci;
                    let mut best = in_data[best_idx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = ((bi * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ci;
                            if in_data[idx] > best {
                                best = in_data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((bi * oh + oy) * ow + ox) * c + ci;
                    out_data[o] = best;
                    indices[o] = best_idx;
                }
            }
        }
    }
    Ok((out, indices))
}

/// Scatter output gradients back to the recorded argmax positions.
pub fn maxpool2_backward<T: Real>(
    indices: &[usize],
    grad_out: &ImageTensor<T>,
    input_dims: (usize, usize, usize, usize),
) -> Result<ImageTensor<T>> {
    if indices.len() != grad_out.len() {
        return Err(Error::Shape("maxpool2 backward: index/gradient length mismatch".into()));
    }
    let (b, h, w, c) = input_dims;
    let mut grad_in = ImageTensor::zeros(b, h, w, c);
    let gi = grad_in.data_mut();
    for (&idx, &g) in indices.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad_in)
}

/// Double spatial dims by copying each value into a 2x2 block.
pub fn upsample2<T: Real>(input: &ImageTensor<T>) -> ImageTensor<T> {
    let (b, h, w, c) = input.dims();
    let mut out = ImageTensor::zeros(b, h * 2, w * 2, c);
    let in_data = input.data();
    let out_data = out.data_mut();
    let ow = w * 2;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let src = ((bi * h + y) * w + x) * c;
                let px = &in_data[src..src + c];
                for dy in 0..2 {
                    for dx in 0..2 {
                        let dst = ((bi * h * 2 + y * 2 + dy) * ow + x * 2 + dx) * c;
                        out_data[dst..dst + c].copy_from_slice(px);
                    }
                }
            }
        }
    }
    out
}

/// Each input position receives the sum of its replicated block's grads.
pub fn upsample2_backward<T: Real>(grad_out: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let (b, h, w, c) = grad_out.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape("upsample2 backward: grad dims must be even".into()));
    }
    let (ih, iw) = (h / 2, w / 2);
    let mut grad_in = ImageTensor::zeros(b, ih, iw, c);
    let go = grad_out.data();
    let gi = grad_in.data_mut();
    for bi in 0..b {
        for y in 0..ih {
            for x in 0..iw {
                let dst = ((bi * ih + y) * iw + x) * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let src = ((bi * h + y * 2 + dy) * w + x * 2 + dx) * c;
                        for ci in 0..c {
                            gi[dst + ci] += go[src + ci];
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::uniform_tensor;

    #[test]
    fn max_of_single_window() {
        let input = ImageTensor::new(1, 2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool2(&input).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn constant_input_stays_constant_at_half_resolution() {
        let input = ImageTensor::new(1, 4, 4, 2, vec![0.7; 32]).unwrap();
        let (out, _) = maxpool2(&input).unwrap();
        assert_eq!(out.dims(), (1, 2, 2, 2));
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn ties_pick_first_in_row_major_order() {
        let input = ImageTensor::new(1, 2, 2, 1, vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let (_, idx) = maxpool2(&input).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let input = ImageTensor::<f64>::zeros(1, 3, 4, 1);
        assert!(matches!(maxpool2(&input), Err(Error::Shape(_))));
    }

    #[test]
    fn pool_matches_loop_oracle() {
        let input = uniform_tensor(1, 8, 8, 3, 31);
        let (out, _) = maxpool2(&input).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                for c in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(input.get(0, y * 2 + dy, x * 2 + dx, c));
                        }
                    }
                    assert_eq!(out.get(0, y, x, c), m);
                }
            }
        }
    }

    #[test]
    fn upsample_replicates() {
        let input = ImageTensor::new(1, 1, 1, 1, vec![5.0]).unwrap();
        let out = upsample2(&input);
        assert_eq!(out.dims(), (1, 2, 2, 1));
        assert!(out.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn upsample_matches_loop_oracle() {
        let input = uniform_tensor(2, 3, 4, 2, 33);
        let out = upsample2(&input);
        for b in 0..2 {
            for y in 0..6 {
                for x in 0..8 {
                    for c in 0..2 {
                        assert_eq!(out.get(b, y, x, c), input.get(b, y / 2, x / 2, c));
                    }
                }
            }
        }
    }

    #[test]
    fn pool_inverts_upsample() {
        let input = uniform_tensor(1, 4, 4, 3, 34);
        let (back, _) = maxpool2(&upsample2(&input)).unwrap();
        assert_eq!(back.data(), input.data());
    }
}
