use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with bias correction. Moments are kept in `f64`.
///
/// A parameter whose gradient is absent or identically zero is left
/// untouched (moments included) while the shared step counter advances.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    states: Vec<AdamState>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            states: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Replace moment buffers, e.g. to resume or to probe arbitrary states.
    pub fn set_states(&mut self, states: Vec<AdamState>, t: u64) {
        self.states = states;
        self.t = t;
    }

    pub fn step<T: Scalar>(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::param(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != grads.len() {
            return Err(Error::shape("adam: parameter and gradient counts differ"));
        }
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|p| AdamState {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::shape("adam: parameter list changed between steps"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), st) in params.iter_mut().zip(grads).zip(&mut self.states) {
            let Some(g) = g else { continue };
            if g.len() != p.len() {
                return Err(Error::shape("adam: gradient shape differs from parameter"));
            }
            if g.data().iter().all(|v| *v == T::zero()) {
                continue;
            }
            for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv.as_f64();
                st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * gv;
                st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * gv * gv;
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                *pv = T::lit(pv.as_f64() - lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar Adam.
    fn oracle(mut p: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        p
    }

    #[test]
    fn zero_gradient_is_noop_but_counts_step() {
        let mut adam = Adam::new();
        let mut p = vec![Tensor::<f64>::full(&[3], 0.5)];
        adam.step(&mut p, &[Some(Tensor::full(&[3], 1.0))], 1e-3).unwrap();
        let before = p.clone();
        adam.step(&mut p, &[Some(Tensor::zeros(&[3]))], 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn first_step_closed_form() {
        let mut adam = Adam::new();
        let mut p = vec![Tensor::<f64>::scalar(0.0)];
        adam.step(&mut p, &[Some(Tensor::scalar(1.0))], 0.001).unwrap();
        // m̂ = 1, v̂ = 1 -> Δ = -lr / (1 + eps)
        let want = -0.001 / (1.0 + 1e-8);
        assert!((p[0].item() - want).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_oracle() {
        let mut adam = Adam::new();
        let mut p = vec![Tensor::<f64>::scalar(0.25)];
        for _ in 0..2 {
            adam.step(&mut p, &[Some(Tensor::scalar(0.7))], 0.01).unwrap();
        }
        assert!((p[0].item() - oracle(0.25, &[0.7, 0.7], 0.01)).abs() < 1e-9);
    }

    #[test]
    fn non_positive_lr_rejected() {
        let mut adam = Adam::new();
        let mut p = vec![Tensor::<f32>::scalar(0.0)];
        assert!(adam.step(&mut p, &[None], 0.0).is_err());
        assert!(adam.step(&mut p, &[None], -1.0).is_err());
    }
}
