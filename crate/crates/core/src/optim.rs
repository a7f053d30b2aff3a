use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First and second moment estimates for one block of parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != moments.m.len() || params.len() != moments.v.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            moments.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::invalid(format!("non-finite gradient at slot {i}")));
    }
    moments.steps += 1;
    let t = moments.steps as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut m = Moments::zeros(3);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0; 3], &mut m, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert!(m.m.iter().chain(&m.v).all(|v| *v == 0.0));
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let lr = 0.01;
        let mut p = vec![0.0, 0.0];
        let mut m = Moments::zeros(2);
        let mut prev = p.clone();
        for i in 0..2000 {
            adam_step(&mut p, &[3.0, -0.002], &mut m, lr, &AdamConfig::default()).unwrap();
            if i > 1000 {
                assert!(((prev[0] - p[0]) - lr).abs() < 1e-9);
                assert!(((p[1] - prev[1]) - lr).abs() < 1e-9);
            }
            prev = p.clone();
        }
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = vec![0.0];
        let mut m = Moments::zeros(1);
        assert!(adam_step(&mut p, &[f64::NAN], &mut m, 0.1, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[0.0, 1.0], &mut m, 0.1, &AdamConfig::default()).is_err());
    }
}
