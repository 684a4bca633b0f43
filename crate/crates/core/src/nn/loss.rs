//! Binary cross-entropy reconstruction loss.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Real};

/// Clamp applied to reconstructions before the logs, avoiding log(0).
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy over all samples and elements, plus dL/dy.
///
/// Reconstructions are clamped to `[eps, 1-eps]`; where the clamp binds the
/// loss is flat in `y`, so the gradient there is zero.
pub fn bce_loss<T: Real>(reconstruction: &ImageTensor<T>, target: &ImageTensor<T>) -> Result<(f64, ImageTensor<T>)> {
    if !reconstruction.same_dims(target) {
        return Err(Error::Shape(format!(
            "bce: reconstruction dims {:?} do not match target {:?}",
            reconstruction.dims(),
            target.dims()
        )));
    }
    let n = reconstruction.len();
    if n == 0 {
        return Err(Error::Shape("bce: empty tensors".into()));
    }
    let eps = T::of(BCE_EPS);
    let hi = T::one() - eps;
    let inv_n = T::of(1.0 / n as f64);
    let mut loss = 0.0f64;
    let mut grad = reconstruction.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let y = *g;
        let yc = y.max(eps).min(hi);
        loss -= (t * yc.ln() + (T::one() - t) * (T::one() - yc).ln()).as_f64();
        *g = if y < eps || y > hi {
            T::zero()
        } else {
            (yc - t) / (yc * (T::one() - yc)) * inv_n
        };
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::uniform_tensor;

    #[test]
    fn half_everywhere_gives_ln2() {
        let y = ImageTensor::new(1, 2, 2, 1, vec![0.5; 4]).unwrap();
        let (loss, _) = bce_loss(&y, &y).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_binary_reconstruction_is_near_zero() {
        let t = ImageTensor::new(1, 1, 2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let (loss, _) = bce_loss(&t, &t).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= 1e-6);
    }

    #[test]
    fn loss_is_nonnegative() {
        for seed in 0..20 {
            let y = uniform_tensor(1, 3, 3, 2, seed).map(|v| 0.5 + v * 0.49);
            let t = uniform_tensor(1, 3, 3, 2, seed + 100).map(|v| 0.5 + v * 0.5);
            let (loss, _) = bce_loss(&y, &t).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let y = uniform_tensor(1, 2, 3, 2, 7).map(|v| 0.5 + v * 0.4); // in (0.1, 0.9)
        let t = uniform_tensor(1, 2, 3, 2, 8).map(|v| 0.5 + v * 0.5);
        let (_, grad) = bce_loss(&y, &t).unwrap();
        let h = 1e-6;
        for i in 0..y.len() {
            let mut yp = y.clone();
            yp.data_mut()[i] += h;
            let mut ym = y.clone();
            ym.data_mut()[i] -= h;
            let (lp, _) = bce_loss(&yp, &t).unwrap();
            let (lm, _) = bce_loss(&ym, &t).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad.data()[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "element {i}: analytic {} vs fd {fd}", grad.data()[i]);
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = ImageTensor::<f64>::zeros(1, 2, 2, 1);
        let b = ImageTensor::<f64>::zeros(1, 2, 2, 2);
        assert!(matches!(bce_loss(&a, &b), Err(Error::Shape(_))));
    }
}
