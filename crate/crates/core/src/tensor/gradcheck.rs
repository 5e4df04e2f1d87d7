//! Central finite-difference checks of tape gradients in `f64`.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst mismatch found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps gradients that are
/// zero on both sides from dividing noise by noise.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Compares the tape gradient of `f(inputs)` (which must be scalar) against
/// central differences with step `h`.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    h: f64,
    f: impl Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
) -> Result<GradCheck> {
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var<f64>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        f(&tape, &vars)?.value().item()
    };
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|x| tape.leaf(&x.detached().with_requires_grad(true))).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.iter().map(|x| x.detached()).collect();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(v);
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x0 - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.map(|g| g.data()[i]).unwrap_or(0.0);
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            let e = rel_err(analytic, numeric);
            if e > worst.max_rel_err {
                worst = GradCheck {
                    max_rel_err: e,
                    input: k,
                    index: i,
                    analytic,
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}
