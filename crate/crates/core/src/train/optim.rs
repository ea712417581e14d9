use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adaptive moment estimation.
    #[default]
    Adam,
    /// Plain gradient descent.
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}' (expected adam or sgd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every trainable tensor, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub adam: AdamParams,
    /// Completed updates.
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, kind: OptimizerKind, adam: AdamParams) -> Self {
        let zeros = |_: ()| -> Vec<Vec<f64>> {
            store
                .trainable_ids()
                .map(|id| vec![0.0; store.value(id).numel()])
                .collect()
        };
        let (first, second) = match kind {
            OptimizerKind::Adam => (zeros(()), zeros(())),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            adam,
            step: 0,
            first,
            second,
        }
    }
}

/// One update of every trainable tensor from the gradients held in `store`.
pub fn sgd_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let ids: Vec<_> = store.trainable_ids().collect();
    if state.kind == OptimizerKind::Adam && ids.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, store has {}",
            state.first.len(),
            ids.len()
        )));
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for id in ids {
                let (value, grad) = store.value_and_grad_mut(id);
                for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * g;
                }
            }
        }
        OptimizerKind::Adam => {
            let AdamParams { beta1, beta2, eps } = state.adam;
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for (k, id) in ids.into_iter().enumerate() {
                let (value, grad) = store.value_and_grad_mut(id);
                let (m, v) = (&mut state.first[k], &mut state.second[k]);
                if m.len() != grad.numel() {
                    return Err(Error::Shape(format!("moment buffer {k} has the wrong length")));
                }
                for (((p, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(value: f64, grad: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(value)).unwrap();
        store.grad_mut(id).data_mut()[0] = grad;
        store
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut store = scalar_store(1.0, g);
            let mut st = OptimizerState::new(&store, OptimizerKind::Adam, AdamParams::default());
            sgd_step(&mut store, &mut st, 1e-3).unwrap();
            let moved = store.value(store.find("p").unwrap()).data()[0] - 1.0;
            assert!((moved + 1e-3 * g.signum()).abs() < 1e-8, "{moved}");
            assert_eq!(st.step, 1);
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut store = scalar_store(0.25, 0.0);
            let mut st = OptimizerState::new(&store, kind, AdamParams::default());
            for _ in 0..3 {
                sgd_step(&mut store, &mut st, 0.1).unwrap();
            }
            assert_eq!(store.value(store.find("p").unwrap()).data()[0], 0.25);
        }
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut store = scalar_store(1.0, 2.0);
        let mut st = OptimizerState::new(&store, OptimizerKind::Sgd, AdamParams::default());
        sgd_step(&mut store, &mut st, 0.1).unwrap();
        assert_eq!(store.value(store.find("p").unwrap()).data()[0], 1.0 - 0.2);
    }
}
