//! Adam optimizer with bias correction, over lists of parameter arrays.

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.learning_rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("bad Adam hyperparameters: {self:?}")))
        }
    }
}

/// First/second moment estimates, one pair of arrays per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    hyper: AdamHyper,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(hyper: AdamHyper, param_lens: &[usize]) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            first_moment: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn hyper(&self) -> AdamHyper {
        self.hyper
    }

    /// One bias-corrected update of every parameter array in place.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} param arrays, {} grad arrays, state has {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::Shape("adam: parameter/gradient/moment length mismatch".into()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::of(self.hyper.beta1);
        let b2 = T::of(self.hyper.beta2);
        let one = T::one();
        let corr1 = one - b1.powi(t);
        let corr2 = one - b2.powi(t);
        let lr = T::of(self.hyper.learning_rate);
        let eps = T::of(self.hyper.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            for ((pv, &gv), (mv, vv)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
