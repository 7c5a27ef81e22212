use serde::{Deserialize, Serialize};

use crate::float::Float;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::{AutogradError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
    },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum(lr: f64) -> Self {
        OptimizerKind::SgdMomentum { lr, momentum: 0.9 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } | OptimizerKind::SgdMomentum { lr, .. } => lr,
        }
    }
}

/// First-order optimizer with fully inspectable state (for checkpointing).
///
/// Parameters whose gradient is `None` are left untouched, including their
/// moment estimates.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    steps: Vec<u64>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Float> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        let zeros = |_: usize| -> Vec<Tensor<T>> {
            store.iter().map(|(_, _, v)| Tensor::zeros(v.shape())).collect()
        };
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(1),
            OptimizerKind::SgdMomentum { .. } => Vec::new(),
        };
        Self {
            kind,
            steps: vec![0; store.len()],
            first: zeros(0),
            second,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// Rebuilds an optimizer from saved state.
    pub fn from_state(
        kind: OptimizerKind,
        steps: Vec<u64>,
        first: Vec<Tensor<T>>,
        second: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let want_second = matches!(kind, OptimizerKind::Adam { .. });
        if steps.len() != first.len() || (want_second && second.len() != first.len()) {
            return Err(AutogradError::State("optimizer state arrays disagree in length".into()));
        }
        Ok(Self {
            kind,
            steps,
            first,
            second,
        })
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(AutogradError::State(format!(
                "optimizer tracks {} params, store has {}, got {} gradients",
                self.first.len(),
                store.len(),
                grads.len()
            )));
        }
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            self.steps[i] += 1;
            let t = self.steps[i];
            let p = store.get_mut(id);
            match self.kind {
                OptimizerKind::Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                } => {
                    let (b1, b2) = (T::of(beta1), T::of(beta2));
                    let c1 = T::of(1.0 - beta1.powi(t as i32));
                    let c2 = T::of(1.0 - beta2.powi(t as i32));
                    let (lr, eps) = (T::of(lr), T::of(eps));
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *mv = b1 * *mv + (T::one() - b1) * gv;
                        *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum { lr, momentum } => {
                    let (lr, mu) = (T::of(lr), T::of(momentum));
                    let m = self.first[i].data_mut();
                    for ((pv, &gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(m) {
                        *mv = mu * *mv + gv;
                        *pv -= lr * *mv;
                    }
                }
            }
        }
        Ok(())
    }
}
