//! Adam with bias correction and L2 weight decay folded into the gradient.

use ndarray::{ArrayBase, DataMut, Dimension};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One Adam update. `weight_decay · θ` is added to the gradient before the
/// moment updates (coupled L2, not AdamW).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at index {pos} (step {})",
            state.t + 1
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g + weight_decay * *p;
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPS);
    }
    Ok(())
}

/// [`adam_step`] for standard-layout ndarray tensors.
pub fn adam_step_array<S1, S2, D>(
    params: &mut ArrayBase<S1, D>,
    grads: &ArrayBase<S2, D>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()>
where
    S1: DataMut<Elem = f64>,
    S2: ndarray::Data<Elem = f64>,
    D: Dimension,
{
    let p = params
        .as_slice_mut()
        .ok_or_else(|| Error::Shape("parameters not contiguous".into()))?;
    let g = grads
        .as_slice()
        .ok_or_else(|| Error::Shape("gradients not contiguous".into()))?;
    adam_step(p, g, state, lr, weight_decay)
}
