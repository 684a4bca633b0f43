//! Fully connected layers over flat batch carriers (tensors with
//! `height = width = 1`).

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Real};

#[derive(Debug, Clone)]
pub struct DenseLayer<T> {
    weight: Vec<T>, // (n_in, n_out) row-major
    bias: Vec<T>,   // n_out
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(n_in: usize, n_out: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != n_in * n_out {
            return Err(Error::Shape(format!(
                "dense weight expects {} values for {n_in}x{n_out}, got {}",
                n_in * n_out,
                weight.len()
            )));
        }
        if bias.len() != n_out {
            return Err(Error::Shape(format!("dense bias expects {n_out} values, got {}", bias.len())));
        }
        Ok(Self { weight, bias, n_in, n_out })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_in, self.n_out)
    }

    pub fn weight(&self) -> &[T] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Vec<T> {
        &mut self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Vec<T> {
        &mut self.bias
    }

    pub fn weight_bias_mut(&mut self) -> (&mut Vec<T>, &mut Vec<T>) {
        (&mut self.weight, &mut self.bias)
    }

    pub fn zero_grads(&self) -> DenseGrads<T> {
        DenseGrads {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    /// `out = input · weight + bias` per batch row.
    pub fn forward(&self, input: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let (b, h, w, c) = input.dims();
        if (h, w) != (1, 1) || c != self.n_in {
            return Err(Error::Shape(format!(
                "dense expects flat rows of width {}, got {h}x{w}x{c}",
                self.n_in
            )));
        }
        let mut out = ImageTensor::zeros(b, 1, 1, self.n_out);
        let out_data = out.data_mut();
        for bi in 0..b {
            let row = input.sample_slice(bi);
            let acc = &mut out_data[bi * self.n_out..(bi + 1) * self.n_out];
            acc.copy_from_slice(&self.bias);
            for (ci, &v) in row.iter().enumerate() {
                let w_row = &self.weight[ci * self.n_out..(ci + 1) * self.n_out];
                for (a, &wv) in acc.iter_mut().zip(w_row) {
                    *a += v * wv;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &ImageTensor<T>, grad_out: &ImageTensor<T>) -> Result<(DenseGrads<T>, ImageTensor<T>)> {
        let (b, _, _, c) = input.dims();
        if c != self.n_in || grad_out.dims() != (b, 1, 1, self.n_out) {
            return Err(Error::Shape("dense backward: dims mismatch".into()));
        }
        let mut grads = self.zero_grads();
        let mut grad_in = ImageTensor::zeros(b, 1, 1, self.n_in);
        let gi_data = grad_in.data_mut();
        for bi in 0..b {
            let row = input.sample_slice(bi);
            let go = grad_out.sample_slice(bi);
            for (dbv, &g) in grads.bias.iter_mut().zip(go) {
                *dbv += g;
            }
            for ci in 0..self.n_in {
                let v = row[ci];
                let w_row = &self.weight[ci * self.n_out..(ci + 1) * self.n_out];
                let dw_row = &mut grads.weight[ci * self.n_out..(ci + 1) * self.n_out];
                let mut dot = T::zero();
                for ((dw, &wv), &g) in dw_row.iter_mut().zip(w_row).zip(go) {
                    *dw += v * g;
                    dot += wv * g;
                }
                gi_data[bi * self.n_in + ci] += dot;
            }
        }
        Ok((grads, grad_in))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{max_rel_err, uniform_tensor};

    fn identity_layer(n: usize) -> DenseLayer<f64> {
        let mut weight = vec![0.0; n * n];
        for i in 0..n {
            weight[i * n + i] = 1.0;
        }
        DenseLayer::new(n, n, weight, vec![0.0; n]).unwrap()
    }

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let layer = identity_layer(4);
        let input = uniform_tensor(3, 1, 1, 4, 5);
        let out = layer.forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn zero_input_returns_bias() {
        let layer = DenseLayer::new(3, 2, vec![1.0; 6], vec![0.7, -0.3]).unwrap();
        let out = layer.forward(&ImageTensor::zeros(2, 1, 1, 3)).unwrap();
        assert_eq!(out.sample_slice(0), &[0.7, -0.3]);
        assert_eq!(out.sample_slice(1), &[0.7, -0.3]);
    }

    #[test]
    fn matches_loop_oracle() {
        let layer = DenseLayer::new(
            5,
            3,
            uniform_tensor(1, 1, 1, 15, 21).into_data(),
            vec![0.3, -0.1, 0.2],
        )
        .unwrap();
        let input = uniform_tensor(4, 1, 1, 5, 22);
        let got = layer.forward(&input).unwrap();
        // independent loop: out[b][j] = bias[j] + sum_i in[b][i] * w[i][j]
        let mut want = vec![0.0f64; 4 * 3];
        for b in 0..4 {
            for j in 0..3 {
                let mut acc = layer.bias()[j];
                for i in 0..5 {
                    acc += input.data()[b * 5 + i] * layer.weight()[i * 3 + j];
                }
                want[b * 3 + j] = acc;
            }
        }
        assert!(max_rel_err(got.data(), &want) < 1e-12);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let layer = DenseLayer::<f64>::new(3, 2, vec![0.0; 6], vec![0.0; 2]).unwrap();
        let input = ImageTensor::<f64>::zeros(1, 1, 1, 4);
        assert!(matches!(layer.forward(&input), Err(Error::Shape(_))));
    }
}
