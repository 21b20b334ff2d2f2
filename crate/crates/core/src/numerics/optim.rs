use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    /// A zero learning rate is accepted so that frozen-parameter runs can
    /// share the training loop.
    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NumericsError::InvalidConfig(format!(
                "learning rate {} must be non-negative",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(NumericsError::InvalidConfig(format!("{name} = {b} outside (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(NumericsError::InvalidConfig(format!("epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: OptimizerConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Result<Self, NumericsError> {
        config.validate()?;
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the stored gradients, then zeroes them.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NumericsError> {
        if let Some(bad) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(NumericsError::NonFiniteGradient(bad.name.clone()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let OptimizerConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (m, v)) in self.first.iter_mut().zip(self.second.iter_mut()).enumerate() {
            let p = store.get_mut(super::ParamId(k));
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((w, &g), mi), vi) in value
                .iter_mut()
                .zip(grad)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
