//! Elementwise activations and the per-pixel channel softmax used by the
//! decoder output head.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Real};

pub fn relu<T: Real>(input: &ImageTensor<T>) -> ImageTensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Backward mask from the forward *output* (output > 0 iff input > 0).
pub fn relu_backward<T: Real>(output: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if !output.same_dims(grad_out) {
        return Err(Error::Shape("relu backward: dims mismatch".into()));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    let (b, h, w, c) = output.dims();
    ImageTensor::new(b, h, w, c, data)
}

pub fn sigmoid<T: Real>(input: &ImageTensor<T>) -> ImageTensor<T> {
    input.map(|v| T::one() / (T::one() + (-v).exp()))
}

pub fn sigmoid_backward<T: Real>(output: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if !output.same_dims(grad_out) {
        return Err(Error::Shape("sigmoid backward: dims mismatch".into()));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    let (b, h, w, c) = output.dims();
    ImageTensor::new(b, h, w, c, data)
}

/// Per-pixel softmax over the channel axis, max-subtracted for stability.
pub fn softmax_channels<T: Real>(input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let (b, h, w, c) = input.dims();
    if c < 2 {
        return Err(Error::Shape(format!("softmax over channels needs >= 2 channels, got {c}")));
    }
    let mut out = input.clone();
    let data = out.data_mut();
    for px in data.chunks_mut(c) {
        let mut m = px[0];
        for &v in px.iter() {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::zero();
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    let _ = (b, h, w);
    Ok(out)
}

/// Softmax Jacobian-vector product per pixel:
/// `dz_i = y_i * (g_i - sum_j g_j * y_j)`.
pub fn softmax_channels_backward<T: Real>(output: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    if !output.same_dims(grad_out) {
        return Err(Error::Shape("softmax backward: dims mismatch".into()));
    }
    let c = output.channels();
    let mut grad_in = output.clone();
    for (px, (ys, gs)) in grad_in
        .data_mut()
        .chunks_mut(c)
        .zip(output.data().chunks(c).zip(grad_out.data().chunks(c)))
    {
        let mut dot = T::zero();
        for (&y, &g) in ys.iter().zip(gs) {
            dot += y * g;
        }
        for ((d, &y), &g) in px.iter_mut().zip(ys).zip(gs) {
            *d = y * (g - dot);
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::uniform_tensor;

    #[test]
    fn relu_piecewise() {
        let input = ImageTensor::new(1, 1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&input).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_identity_on_nonnegative() {
        let input = uniform_tensor(1, 4, 4, 2, 41).map(f64::abs);
        assert_eq!(relu(&input).data(), input.data());
    }

    #[test]
    fn relu_equals_algebraic_identity() {
        let input = uniform_tensor(2, 5, 5, 3, 42);
        let got = relu(&input);
        for (&z, &r) in input.data().iter().zip(got.data()) {
            assert!((r - (z + z.abs()) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_symmetry_and_normalization() {
        let input = ImageTensor::new(1, 1, 1, 3, vec![0.0, 0.0, 0.0]).unwrap();
        let out = softmax_channels(&input).unwrap();
        for &v in out.data() {
            assert!((v - 1.0 / 3.0f64).abs() < 1e-15);
        }
        let r = uniform_tensor(2, 3, 3, 4, 43);
        let out = softmax_channels(&r).unwrap();
        for px in out.data().chunks(4) {
            let s: f64 = px.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let input = ImageTensor::new(1, 1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let out = softmax_channels(&input).unwrap();
        let denom: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (got, z) in out.data().iter().zip([1.0f64, 2.0, 3.0]) {
            assert!((got - z.exp() / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let input = uniform_tensor(1, 2, 2, 3, 44);
        let shifted = input.map(|v| v + 7.5);
        let a = softmax_channels(&input).unwrap();
        let b = softmax_channels(&shifted).unwrap();
        for (&x, &y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_single_channel() {
        let input = ImageTensor::<f64>::zeros(1, 2, 2, 1);
        assert!(matches!(softmax_channels(&input), Err(Error::Shape(_))));
    }
}
