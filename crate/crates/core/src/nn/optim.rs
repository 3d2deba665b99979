//! First-order optimizers over flat parameter slices.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// Bias-corrected Adam.
    Adam { beta1: f64, beta2: f64 },
    /// RMSProp with update `lr * g / sqrt(v + eps)`.
    RmsProp { decay: f64 },
}

/// Optimizer hyperparameters plus per-parameter accumulators. Accumulators
/// are allocated on the first step to match the parameter slices.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn adam(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self::new(OptimizerKind::Adam { beta1, beta2 }, learning_rate, 1e-8)
    }

    pub fn rmsprop(learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self::new(OptimizerKind::RmsProp { decay }, learning_rate, epsilon)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, epsilon: f64) -> Self {
        Self {
            kind,
            learning_rate,
            epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Restores a checkpointed optimizer. For RMSProp `first` is empty.
    pub fn from_parts(
        kind: OptimizerKind,
        learning_rate: f64,
        epsilon: f64,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            kind,
            learning_rate,
            epsilon,
            step,
            first,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    fn ensure_shapes(&mut self, lens: &[usize]) -> Result<()> {
        if self.second.is_empty() {
            self.second = lens.iter().map(|&n| vec![0.0; n]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.first = lens.iter().map(|&n| vec![0.0; n]).collect();
            }
            return Ok(());
        }
        if self.second.len() != lens.len() {
            return Err(Error::dim(
                "optimizer tensor count",
                self.second.len(),
                lens.len(),
            ));
        }
        for (acc, &n) in self.second.iter().zip(lens) {
            if acc.len() != n {
                return Err(Error::dim("optimizer accumulator", acc.len(), n));
            }
        }
        Ok(())
    }

    /// Applies one update. A gradient with non-finite entries (or entries
    /// whose square overflows) is rejected before any state changes.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "gradient tensor count",
                params.len(),
                grads.len(),
            ));
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim("gradient tensor", p.len(), g.len()));
            }
            if let Some(i) = g.iter().position(|v| !(v * v).is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient tensor {t} entry {i} is {}; step rejected",
                    g[i]
                )));
            }
        }
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        self.ensure_shapes(&lens)?;
        self.step += 1;
        let lr = self.learning_rate;
        let eps = self.epsilon;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2 } => {
                let c1 = 1.0 - beta1.powf(self.step as f64);
                let c2 = 1.0 - beta2.powf(self.step as f64);
                for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[t];
                    let v = &mut self.second[t];
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::RmsProp { decay } => {
                for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let v = &mut self.second[t];
                    for i in 0..p.len() {
                        v[i] = decay * v[i] + (1.0 - decay) * g[i] * g[i];
                        p[i] -= lr * g[i] / (v[i] + eps).sqrt();
                    }
                }
            }
        }
        Ok(())
    }
}
