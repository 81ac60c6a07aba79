//! Adam with bias correction.

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter group.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element = f32> {
    config: AdamConfig,
    step: u64,
    params: Vec<ParamId>,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig, params: Vec<ParamId>, store: &ParamStore<T>) -> Self {
        let zeros = |id: &ParamId| Tensor::zeros(store.value(*id).shape());
        Self {
            config,
            step: 0,
            first_moment: params.iter().map(zeros).collect(),
            second_moment: params.iter().map(zeros).collect(),
            params,
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn moments(&self, index: usize) -> (&Tensor<T>, &Tensor<T>) {
        (&self.first_moment[index], &self.second_moment[index])
    }

    /// Restores counters and moment buffers, e.g. from a checkpoint.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) -> Result<()> {
        if first.len() != self.params.len() || second.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer expects {} moment buffers",
                self.params.len()
            )));
        }
        for ((m, v), old) in first.iter().zip(&second).zip(&self.first_moment) {
            if m.shape() != old.shape() || v.shape() != old.shape() {
                return Err(Error::Checkpoint("moment buffer shape mismatch".into()));
            }
        }
        self.step = step;
        self.first_moment = first;
        self.second_moment = second;
        Ok(())
    }

    /// Applies one update to every parameter in the group and clears their
    /// gradients. Fails without touching anything if a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(&missing) = self.params.iter().find(|&&id| store.grad(id).is_none()) {
            return Err(Error::Graph(format!(
                "parameter {} has no gradient",
                store.name(missing)
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let step_size = T::c(lr / (1.0 - beta1.powi(t)));
        let bias2 = T::c(1.0 / (1.0 - beta2.powi(t)));
        let (b1, b2, eps) = (T::c(beta1), T::c(beta2), T::c(eps));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (i, &id) in self.params.iter().enumerate() {
            let grad = store.take_grad(id).expect("checked above");
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = store.value_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m).zip(v).zip(grad.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step_size * *m / ((*v * bias2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
