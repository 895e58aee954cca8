use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Bias-corrected Adam over a fixed, ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update. Parameters with `requires_grad == false` are left
    /// alone; trainable ones must carry a gradient. Gradients are not cleared.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} tensors, step got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first_moment[i].len() {
                return Err(Error::dim(format!(
                    "parameter {i} has {} values, moments have {}",
                    p.len(),
                    self.first_moment[i].len()
                )));
            }
            if p.requires_grad() && p.grad().is_none() {
                return Err(Error::contract(format!("parameter {i} has no gradient")));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let g = p.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (j, value) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *value -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::vector(vec![v]).with_requires_grad(true)
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = scalar_param(1.25);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        p.accumulate_grad(&[0.0]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.25]);
        assert_eq!(adam.step_count(), 1);
        assert_eq!(p.grad(), Some(&[0.0][..]));
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = scalar_param(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        assert!(matches!(adam.step(&mut [&mut p]), Err(Error::Contract(_))));
    }

    #[test]
    fn matches_hand_stepped_recurrence() {
        // Independent scalar recurrence written out longhand.
        let (lr, b1, b2, eps) = (1e-4, 0.9, 0.99, 1e-8);
        let grads = [0.3, -1.2, 2.5, 0.0, 0.7];
        let (mut x, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        let mut p = scalar_param(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powf(t))) / ((v / (1.0 - b2.powf(t))).sqrt() + eps);

            p.zero_grad();
            p.accumulate_grad(&[g]).unwrap();
            adam.step(&mut [&mut p]).unwrap();
            assert!((p.data()[0] - x).abs() < 1e-15, "step {k}");
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        p.accumulate_grad(&[3.0]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] + 1e-4).abs() < 1e-11);
    }

    #[test]
    fn constant_positive_gradient_decreases_monotonically() {
        let mut p = scalar_param(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        let mut last = p.data()[0];
        for _ in 0..200 {
            p.zero_grad();
            p.accumulate_grad(&[0.8]).unwrap();
            adam.step(&mut [&mut p]).unwrap();
            assert!(p.data()[0] < last);
            last = p.data()[0];
        }
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut p = Tensor::vector(vec![2.0]);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[2.0]);
    }
}
