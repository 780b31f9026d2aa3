//! Adam with decoupled weight decay, the inverse-square-root learning-rate
//! schedule, and a central-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.998,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// First/second moment buffers, one pair per parameter in store order.
pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let m = store.ids().map(|id| vec![T::zero(); store.get(id).numel()]).collect();
        let v = store.ids().map(|id| vec![T::zero(); store.get(id).numel()]).collect();
        Adam {
            cfg,
            m,
            v,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter:
    ///
    ///   m ← β₁ m + (1-β₁) g          v ← β₂ v + (1-β₂) g²
    ///   p ← p (1 - lr·wd) - lr · m̂ / (√v̂ + ε)
    ///
    /// with bias-corrected m̂, v̂. Weight decay multiplies the parameter
    /// directly instead of entering the moments (decoupled form), so a
    /// zero-gradient step still shrinks the parameter by (1 - lr·wd).
    ///
    /// A non-finite gradient aborts the step before any parameter moves,
    /// naming the offending tensor.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for id in store.ids() {
            let t = store.get(id);
            let g = t.grad().expect("store tensors always carry grad buffers");
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad {
                    param: store.name(id).to_string(),
                });
            }
        }
        self.step += 1;
        let tstep = self.step as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let eps = T::from_f64(self.cfg.eps);
        let lr_t = T::from_f64(lr);
        let bias1 = T::one() - b1.powi(tstep);
        let bias2 = T::one() - b2.powi(tstep);
        let decay = T::one() - T::from_f64(lr * self.cfg.weight_decay);

        for id in store.ids() {
            let idx = id.index();
            let tensor = store.get_mut(id);
            let n = tensor.numel();
            // Split borrow: grads are read, data is written.
            let grad: Vec<T> = tensor.grad().unwrap().to_vec();
            let data = tensor.data_mut();
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                data[i] = data[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Inverse-square-root schedule with linear warmup (`step` is 1-based):
///
///   lr(step) = base · min(step / warmup, √(warmup / step))
///
/// Ramps linearly to `base` at `step == warmup`, then decays as step^-1/2.
pub fn inverse_sqrt_lr(base: f64, warmup: u64, step: u64) -> f64 {
    assert!(warmup > 0 && step > 0, "warmup and step must be positive");
    let s = step as f64;
    let w = warmup as f64;
    base * (s / w).min((w / s).sqrt())
}

/// Max relative error between analytic gradients already stored in `store`
/// and central differences of `loss_fn`, over every element of every
/// parameter: |ad - fd| / max(1, |fd|).
///
/// `loss_fn` must be a pure forward evaluation of the same loss whose
/// backward populated the store's grad buffers.
pub fn grad_check<F>(store: &mut ParamStore<f64>, h: f64, mut loss_fn: F) -> f64
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = store.get(id).grad().unwrap().to_vec();
        for i in 0..analytic.len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + h;
            let f_plus = loss_fn(store);
            store.get_mut(id).data_mut()[i] = orig - h;
            let f_minus = loss_fn(store);
            store.get_mut(id).data_mut()[i] = orig;
            let fd = (f_plus - f_minus) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / fd.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}
