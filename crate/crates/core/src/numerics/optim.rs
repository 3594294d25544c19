use super::{NumericsError, ParamGrads, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn for_store(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }
}

/// One AdamW update of a single parameter tensor, in place. `step` is the
/// 1-based index of this update.
///
/// Decay is applied to the parameter itself (`p -= lr * wd * p`), not
/// folded into the gradient.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamWConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        param[i] -= cfg.lr * cfg.weight_decay * param[i];
        param[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// AdamW over every trainable parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub state: OptimizerState,
}

impl AdamW {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        Self { config, state: OptimizerState::for_store(store) }
    }

    /// Applies one update. Parameters without a gradient still receive weight
    /// decay; frozen parameters are never touched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<(), NumericsError> {
        if grads.len() != store.len() || self.state.first_moment.len() != store.len() {
            return Err(NumericsError::Shape(format!(
                "optimizer tracks {} tensors, store has {}, gradients {}",
                self.state.first_moment.len(),
                store.len(),
                grads.len()
            )));
        }
        // Validate everything before mutating anything.
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for &id in &ids {
            let p = store.get(id);
            if let Some(g) = grads.get(id) {
                if p.frozen {
                    return Err(NumericsError::FrozenGradient(p.name.clone()));
                }
                if g.shape() != p.value.shape() {
                    return Err(NumericsError::Shape(format!(
                        "gradient for `{}` has shape {:?}, parameter {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(NumericsError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.state.step += 1;
        let step = self.state.step;
        for id in ids {
            if store.get(id).frozen {
                continue;
            }
            let zeros;
            let g = match grads.get(id) {
                Some(g) => g.data(),
                None => {
                    zeros = vec![0.0; store.value(id).numel()];
                    &zeros
                }
            };
            adamw_update(
                store.value_mut(id).data_mut(),
                g,
                self.state.first_moment[id.0].data_mut(),
                self.state.second_moment[id.0].data_mut(),
                step,
                &self.config,
            );
        }
        Ok(())
    }
}
