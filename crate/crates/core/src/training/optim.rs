use std::collections::BTreeMap;

use super::TrainConfig;
use crate::model::ModelState;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    /// The decomposition network, including layers the detail network shares.
    Decomposition,
    /// Curve bank, fusion U-Net and detail network.
    Pathways,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        if name.starts_with("decomp.") {
            Self::Decomposition
        } else {
            Self::Pathways
        }
    }
}

/// Adam with L2 weight decay folded into the gradient, over two groups
/// with separate learning rates.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

pub fn make_optimizer(state: &ModelState, cfg: &TrainConfig) -> Result<Adam> {
    cfg.validate()?;
    let count = |g: ParamGroup| state.params().keys().filter(|k| ParamGroup::of(k) == g).count();
    if state.config().use_high_pathway && count(ParamGroup::Decomposition) == 0 {
        return Err(Error::Config("decomposition parameter group is empty".into()));
    }
    if count(ParamGroup::Pathways) == 0 {
        return Err(Error::Config("pathway parameter group is empty".into()));
    }
    let moments = state
        .params()
        .iter()
        .map(|(k, t)| (k.clone(), (vec![0.0; t.len()], vec![0.0; t.len()])))
        .collect();
    Ok(Adam {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
        step: 0,
        moments,
    })
}

impl Adam {
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `lr` maps a group to its current learning rate;
    /// parameters without a gradient are treated as having gradient zero.
    pub fn step(
        &mut self,
        state: &mut ModelState,
        grads: &BTreeMap<String, Tensor<f64>>,
        lr: impl Fn(ParamGroup) -> f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, param) in state.params_mut() {
            let (m, v) = self.moments.get_mut(name).expect("optimizer built for this state");
            let g = grads.get(name).map(Tensor::data);
            let rate = lr(ParamGroup::of(name));
            for (i, p) in param.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]) + self.weight_decay * *p;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *p -= rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_state, ModelConfig};

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = ModelConfig {
            nr_curves: 2,
            base_channels: 8,
            detail_blocks: 1,
            ..ModelConfig::default()
        };
        let mut state = init_state(&cfg, 0).unwrap();
        let before = state.clone();
        let tc = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = make_optimizer(&state, &tc).unwrap();
        let grads: BTreeMap<_, _> = state
            .params()
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::full(t.shape(), 3.0)))
            .collect();
        opt.step(&mut state, &grads, |g| match g {
            ParamGroup::Decomposition => 2e-4,
            ParamGroup::Pathways => 1e-4,
        });
        for (k, t) in state.params() {
            let lr = if k.starts_with("decomp.") { 2e-4 } else { 1e-4 };
            for (a, b) in t.data().iter().zip(before.params()[k].data()) {
                approx::assert_relative_eq!(b - a, lr, max_relative = 1e-6);
            }
        }
    }
}
