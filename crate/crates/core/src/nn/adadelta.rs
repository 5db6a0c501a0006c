use super::model::{CnnModel, Gradients};
use crate::{Error, Result};

/// AdaDelta hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdaDelta {
    fn default() -> Self {
        AdaDelta { rho: 0.95, eps: 1e-6 }
    }
}

/// Running averages `E[g²]` and `E[Δx²]`, one slot per trainable scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub config: AdaDelta,
    pub sq_grad: Vec<Vec<f64>>,
    pub sq_update: Vec<Vec<f64>>,
}

impl AdaDelta {
    /// Updates one flat parameter group in place.
    pub fn step(&self, params: &mut [f64], grads: &[f64], sq_grad: &mut [f64], sq_update: &mut [f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != sq_grad.len() || params.len() != sq_update.len() {
            return Err(Error::data("parameter, gradient and state shapes disagree"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient {} at coordinate {i}", grads[i])));
        }
        let (rho, eps) = (self.rho, self.eps);
        for (((x, &g), eg), ed) in params.iter_mut().zip(grads).zip(sq_grad.iter_mut()).zip(sq_update.iter_mut()) {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * delta * delta;
            *x += delta;
        }
        Ok(())
    }
}

impl AdaDeltaState {
    pub fn new(config: AdaDelta, group_sizes: &[usize]) -> Self {
        AdaDeltaState {
            config,
            sq_grad: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            sq_update: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(config: AdaDelta, model: &CnnModel) -> Self {
        let sizes: Vec<usize> = model.param_groups().iter().map(|g| g.len()).collect();
        Self::new(config, &sizes)
    }

    /// One step over every trainable group. Gradients are checked before
    /// anything is modified.
    pub fn apply(&mut self, model: &mut CnnModel, grads: &Gradients) -> Result<()> {
        let g = grads.groups();
        if let Some(bad) = g.iter().flat_map(|s| s.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient {bad}")));
        }
        let mut params = model.param_groups_mut();
        if params.len() != g.len() || params.len() != self.sq_grad.len() {
            return Err(Error::data("optimizer state does not match the model"));
        }
        for (i, p) in params.iter_mut().enumerate() {
            self.config.step(p, g[i], &mut self.sq_grad[i], &mut self.sq_update[i])?;
        }
        Ok(())
    }
}
