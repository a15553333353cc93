use super::TrainConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// First and second moments per parameter, plus the shared step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar = f32> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        let zeros: Vec<Vec<S>> = store
            .tensors()
            .iter()
            .map(|t| vec![S::zero(); t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients held in `store`, which
/// are cleared afterwards. Parameters without a gradient are left alone.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    state: &mut AdamState<S>,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::contract(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let [b1, b2, lr, eps] =
        [cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.eps].map(S::from_f64_lossy);
    let one = S::one();
    let (c1, c2) = (S::from_f64_lossy(c1), S::from_f64_lossy(c2));
    for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
        let Some(grad) = tensor.take_grad() else {
            continue;
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != grad.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![m.len()],
                rhs: vec![grad.len()],
            });
        }
        for (((p, g), m), v) in tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
