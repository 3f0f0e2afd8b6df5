use evhar_tensor::{Scalar, Tensor};

use crate::model::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.0009,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// A learning rate of exactly zero is accepted and means "frozen": the
    /// trainer then performs no updates at all.
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !finite_nonneg(self.learning_rate) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !finite_nonneg(self.weight_decay) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.learning_rate == 0.0
    }
}

/// One AdamW update of a single tensor at step `t >= 1`, in place.
///
/// `decay` selects whether the decoupled `lr * wd * theta` term applies.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    config: &OptimizerConfig,
    t: u64,
    decay: bool,
) {
    assert!(t >= 1, "AdamW steps are 1-based");
    let b1 = config.beta1;
    let b2 = config.beta2;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let lr = config.learning_rate;
    let wd = if decay { config.weight_decay } else { 0.0 };
    for i in 0..value.len() {
        let g = grad[i].to_f64_lossy();
        let mi = b1 * m[i].to_f64_lossy() + (1.0 - b1) * g;
        let vi = b2 * v[i].to_f64_lossy() + (1.0 - b2) * g * g;
        let theta = value[i].to_f64_lossy();
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        let next = theta - lr * (m_hat / (v_hat.sqrt() + config.epsilon) + wd * theta);
        m[i] = T::from_f64_lossy(mi);
        v[i] = T::from_f64_lossy(vi);
        value[i] = T::from_f64_lossy(next);
    }
}

/// AdamW state for every learnable tensor of a model.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: OptimizerConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: OptimizerConfig, params: &ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let zeros = |p: &crate::model::Param<T>| Tensor::zeros(p.value.shape());
        Ok(AdamW {
            m: params.params().into_iter().map(zeros).collect(),
            v: params.params().into_iter().map(zeros).collect(),
            config,
            step: 0,
        })
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `params`.
    /// Decay applies to tensors tagged as weights only.
    pub fn step(&mut self, params: &mut ModelParams<T>) {
        self.step += 1;
        let t = self.step;
        for ((p, m), v) in params.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            let decay = p.kind.decays();
            adamw_update(
                p.value.data_mut(),
                p.grad.data(),
                m.data_mut(),
                v.data_mut(),
                &self.config,
                t,
                decay,
            );
        }
    }
}
