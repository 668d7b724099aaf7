use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every entry of `params`.
///
/// Every entry must carry a gradient; gradients are consumed by the step.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, cfg: &AdamConfig) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, e)| e.grad.is_none()) {
        return Err(Error::MissingGradient(name.to_string()));
    }
    let step = params.step_count() + 1;
    params.set_step_count(step);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.epsilon));
    let one = T::one();
    let c1 = one - T::of(cfg.beta1.powi(step as i32));
    let c2 = one - T::of(cfg.beta2.powi(step as i32));
    for (_, entry) in params.entries_mut() {
        let grad = entry.grad.take().expect("checked above");
        let m = entry.first_moment.data_mut();
        for (mi, &gi) in m.iter_mut().zip(grad.data()) {
            *mi = b1 * *mi + (one - b1) * gi;
        }
        let v = entry.second_moment.data_mut();
        for (vi, &gi) in v.iter_mut().zip(grad.data()) {
            *vi = b2 * *vi + (one - b2) * gi * gi;
        }
        let m = entry.first_moment.data();
        let v = entry.second_moment.data();
        for ((p, &mi), &vi) in entry.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
