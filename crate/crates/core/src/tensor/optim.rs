//! First-order optimizers updating tensors in place.

use std::collections::HashMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// SGD or Adam; Adam moments are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    state: HashMap<String, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            state: HashMap::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    /// Updates every trainable tensor from its stored gradient and clears it.
    /// Tensors with `requires_grad == false` are skipped.
    pub fn step<'a, S: Scalar>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor<S>)>,
    ) -> Result<()> {
        let mut pending = Vec::new();
        for (name, p) in params {
            if !p.requires_grad() {
                continue;
            }
            if p.grad().is_none() {
                return Err(Error::MissingGrad(name));
            }
            pending.push((name, p));
        }
        for (name, p) in pending {
            self.update(&name, p);
        }
        Ok(())
    }

    fn update<S: Scalar>(&mut self, name: &str, p: &mut Tensor<S>) {
        let g: Vec<f64> = p.grad().unwrap_or_default().iter().map(|v| v.as_f64()).collect();
        p.clear_grad();
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, gi) in p.data_mut().iter_mut().zip(&g) {
                    *w = S::of(w.as_f64() - lr * gi);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let st = self.state.entry(name.to_string()).or_default();
                if st.m.len() != g.len() {
                    st.m = vec![0.0; g.len()];
                    st.v = vec![0.0; g.len()];
                    st.t = 0;
                }
                st.t += 1;
                let c1 = 1.0 - beta1.powi(st.t as i32);
                let c2 = 1.0 - beta2.powi(st.t as i32);
                for (i, w) in p.data_mut().iter_mut().enumerate() {
                    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mh = st.m[i] / c1;
                    let vh = st.v[i] / c2;
                    *w = S::of(w.as_f64() - lr * mh / (vh.sqrt() + eps));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f32) -> Tensor<f32> {
        Tensor::scalar(v).with_requires_grad(true)
    }

    #[test]
    fn sgd_single_step() {
        let mut w = param(1.0);
        w.accumulate_grad(&[0.5]).unwrap();
        Optimizer::sgd(0.1).step([("w".to_string(), &mut w)]).unwrap();
        assert!((w.data()[0] - 0.95).abs() < 1e-7);
        assert!(w.grad().is_none());
    }

    #[test]
    fn adam_first_step_opposes_gradient() {
        for g in [0.3f32, -2.0] {
            let mut w = param(0.0);
            w.accumulate_grad(&[g]).unwrap();
            Optimizer::adam(1e-2).step([("w".to_string(), &mut w)]).unwrap();
            assert_eq!(w.data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn sgd_contracts_on_quadratic() {
        let mut w = param(2.0);
        let mut opt = Optimizer::sgd(0.1);
        for _ in 0..10 {
            let g = 2.0 * (w.data()[0] - 3.0);
            w.accumulate_grad(&[g]).unwrap();
            opt.step([("w".to_string(), &mut w)]).unwrap();
        }
        // w_n - 3 = 0.8^n (w_0 - 3)
        let closed = 3.0 - 0.8f64.powi(10);
        assert!((w.data()[0] as f64 - closed).abs() < 1e-5);
        assert!((w.data()[0] - 3.0).abs() < 0.2);
    }

    #[test]
    fn missing_grad_is_reported_by_name() {
        let mut w = param(1.0);
        let err = Optimizer::sgd(0.1).step([("gru.update.weight".to_string(), &mut w)]).unwrap_err();
        assert!(matches!(err, Error::MissingGrad(ref n) if n == "gru.update.weight"));
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut w = Tensor::<f32>::scalar(1.0);
        Optimizer::adam(0.1).step([("w".to_string(), &mut w)]).unwrap();
        assert_eq!(w.data()[0], 1.0);
    }
}
