use super::{ensure_same_shape, Tensor};
use crate::error::{DdsError, Result};

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(shape: &[usize]) -> Self {
        Self::with_hyperparameters(shape, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparameters(shape: &[usize], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameter and state.
pub fn adam_step(param: &Tensor, grad: &Tensor, state: &AdamState, lr: f64) -> Result<(Tensor, AdamState)> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(DdsError::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    ensure_same_shape("adam_step", param.shape(), grad.shape())?;
    ensure_same_shape("adam_step", param.shape(), state.first_moment.shape())?;
    ensure_same_shape("adam_step", param.shape(), state.second_moment.shape())?;

    let step_count = state.step_count + 1;
    let t = step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    let mut p = param.clone();
    let mut m = state.first_moment.clone();
    let mut v = state.second_moment.clone();
    for (((p, m), v), &g) in p
        .data_mut()
        .iter_mut()
        .zip(m.data_mut())
        .zip(v.data_mut())
        .zip(grad.data())
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok((
        p,
        AdamState {
            step_count,
            first_moment: m,
            second_moment: v,
            ..*state
        },
    ))
}
