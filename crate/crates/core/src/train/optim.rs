use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = mu v + g + wd p`, `p -= lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// Applies one update. Parameters without a gradient are still decayed
    /// and carried by their momentum.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        let by_id: HashMap<ParamId, &Tensor> = grads.iter().map(|(id, g)| (*id, g)).collect();
        for (id, g) in &by_id {
            if g.shape() != store.get(*id).shape() {
                return Err(Error::shape("sgd_step", store.get(*id).shape(), g.shape()));
            }
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let grad = by_id.get(&id).map(|g| g.data());
            let p = store.get_mut(id).data_mut();
            let v = self.velocity.entry(id).or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.len() {
                let g = grad.map_or(0.0, |g| g[i]) + self.weight_decay * p[i];
                v[i] = self.momentum * v[i] + g;
                p[i] -= lr * v[i];
            }
        }
        Ok(())
    }
}

/// Piecewise-constant decay: `base * gamma^(milestones passed)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.gamma.powi(passed as i32)
    }
}
