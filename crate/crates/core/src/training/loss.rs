use evhar_tensor::{log_softmax, Scalar, Tensor};

use crate::{Error, Result};

/// Lower clamp applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FocalLossConfig {
    /// Focusing parameter.
    pub gamma: f64,
    /// Per-class weights.
    pub alpha: Vec<f64>,
}

impl FocalLossConfig {
    pub fn new(gamma: f64, alpha: Vec<f64>) -> Result<Self> {
        let cfg = FocalLossConfig { gamma, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `gamma` with unit weights for `k` classes.
    pub fn unweighted(gamma: f64, k: usize) -> Self {
        FocalLossConfig {
            gamma,
            alpha: vec![1.0; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("focal alpha must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Inverse-frequency weights `N / (K * n_c)`; balanced counts give all ones.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::DegenerateClass(c));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

/// Mean focal loss `-alpha_y (1 - p_y)^gamma ln p_y` over the batch, and its
/// gradient with respect to the logits.
pub fn focal_loss<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    config: &FocalLossConfig,
) -> Result<(f64, Tensor<T>)> {
    let [b, k] = logits.dims2("focal_loss")?;
    if labels.len() != b {
        return Err(Error::Config(format!("{} labels for a batch of {b}", labels.len())));
    }
    if config.alpha.len() != k {
        return Err(Error::Config(format!(
            "alpha has {} entries for {k} classes",
            config.alpha.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label { label, classes: k });
    }
    let logp = log_softmax(&logits.cast::<f64>())?;
    let gamma = config.gamma;
    let scale = 1.0 / b as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(b * k);
    for (row, &y) in logp.data().chunks(k).zip(labels) {
        let log_pt = row[y].max(PROB_FLOOR.ln());
        let pt = log_pt.exp();
        let q = -log_pt.exp_m1();
        let alpha = config.alpha[y];
        let modulator = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        total += -alpha * modulator * log_pt;
        // dL/dz_j = alpha * (gamma q^(gamma-1) p_t ln p_t - q^gamma) * (1[j = y] - p_j)
        let focus = if gamma == 0.0 || q == 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * pt * log_pt
        };
        let coeff = alpha * (focus - modulator) * scale;
        for (j, &lp) in row.iter().enumerate() {
            let indicator = if j == y { 1.0 } else { 0.0 };
            grad.push(T::from_f64_lossy(coeff * (indicator - lp.exp())));
        }
    }
    Ok((total * scale, Tensor::from_vec(&[b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_weights_are_one() {
        assert_eq!(class_weights(&[1000; 6]).unwrap(), vec![1.0; 6]);
        let w = class_weights(&[100, 300]).unwrap();
        assert_eq!(w[0], 2.0);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(class_weights(&[3, 0, 1]), Err(Error::DegenerateClass(1))));
    }

    #[test]
    fn label_out_of_range() {
        let z = Tensor::<f64>::zeros(&[1, 3]);
        let cfg = FocalLossConfig::unweighted(2.0, 3);
        assert!(matches!(focal_loss(&z, &[3], &cfg), Err(Error::Label { label: 3, classes: 3 })));
    }

    #[test]
    fn config_validation() {
        assert!(FocalLossConfig::new(-1.0, vec![1.0]).unwrap_err().is_config());
        assert!(FocalLossConfig::new(2.0, vec![1.0, 0.0]).unwrap_err().is_config());
    }
}
