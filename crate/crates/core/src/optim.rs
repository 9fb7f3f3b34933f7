//! First-order update rules: SGD, RMSprop, Adam, Adadelta and Nadam.
//!
//! Every rule is applied per scalar parameter. State buffers are laid out
//! like the network's parameter tensors (weights then bias, per layer).
//!
//! With gradient `g`, step `t` (starting at 1) and learning rate `lr`:
//!
//! - SGD: `θ -= lr g`
//! - RMSprop: `v = ρv + (1-ρ)g²`, `θ -= lr g / (√v + ε)`
//! - Adam: `m = β1 m + (1-β1)g`, `v = β2 v + (1-β2)g²`,
//!   `θ -= lr m̂ / (√v̂ + ε)` with `m̂ = m/(1-β1ᵗ)`, `v̂ = v/(1-β2ᵗ)`
//! - Adadelta: `Eg = ρEg + (1-ρ)g²`, `Δ = -g √(Ex+ε) / √(Eg+ε)`,
//!   `Ex = ρEx + (1-ρ)Δ²`, `θ += lr Δ`
//! - Nadam (constant momentum): Adam moments, with the step direction
//!   `β1 m/(1-β1ᵗ⁺¹) + (1-β1) g/(1-β1ᵗ)` in place of `m̂`

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseNetwork, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    #[serde(rename = "rmsprop")]
    RmsProp,
    Adadelta,
    Nadam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Adam,
        OptimizerKind::Sgd,
        OptimizerKind::RmsProp,
        OptimizerKind::Adadelta,
        OptimizerKind::Nadam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Nadam => "nadam",
        }
    }

    /// Number of per-parameter buffers the rule keeps.
    pub fn buffer_count(self) -> usize {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::RmsProp => 1,
            OptimizerKind::Adam | OptimizerKind::Adadelta | OptimizerKind::Nadam => 2,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "nadam" => Ok(OptimizerKind::Nadam),
            other => Err(Error::validation(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        let (learning_rate, rho, epsilon) = match kind {
            OptimizerKind::Sgd => (0.01, 0.0, 1e-8),
            OptimizerKind::Adam | OptimizerKind::Nadam => (0.001, 0.0, 1e-8),
            OptimizerKind::RmsProp => (0.001, 0.9, 1e-8),
            OptimizerKind::Adadelta => (1.0, 0.95, 1e-7),
        };
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            rho,
            epsilon,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be > 0"));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("rho", self.rho)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation("epsilon must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    lens: Vec<usize>,
    /// First moment (Adam, Nadam), squared-gradient average (RMSprop,
    /// Adadelta).
    first: Vec<Vec<f64>>,
    /// Second moment (Adam, Nadam), squared-update average (Adadelta).
    second: Vec<Vec<f64>>,
}

/// Zeroed state for a network whose parameter tensors have `param_lens`.
pub fn make_optimizer(config: OptimizerConfig, param_lens: &[usize]) -> Result<OptimizerState> {
    config.validate()?;
    let zeros = || param_lens.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
    let count = config.kind.buffer_count();
    Ok(OptimizerState {
        config,
        step: 0,
        lens: param_lens.to_vec(),
        first: if count >= 1 { zeros() } else { Vec::new() },
        second: if count >= 2 { zeros() } else { Vec::new() },
    })
}

impl OptimizerState {
    pub fn for_network(config: OptimizerConfig, net: &DenseNetwork) -> Result<Self> {
        make_optimizer(config, &net.param_lens())
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of per-parameter buffer sets held, `0` for SGD.
    pub fn buffer_sets(&self) -> usize {
        usize::from(!self.first.is_empty()) + usize::from(!self.second.is_empty())
    }

    pub fn buffers(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    pub fn apply_step(&mut self, net: &mut DenseNetwork, grads: &GradientSet) -> Result<()> {
        let grads = grads.tensors();
        let mut params = net.params_mut();
        self.apply(&mut params, &grads)
    }

    /// Applies one update to raw parameter tensors.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.lens.len() || grads.len() != self.lens.len() {
            return Err(Error::validation(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.lens.len(),
                params.len(),
                grads.len()
            )));
        }
        for (k, ((p, g), &n)) in params.iter().zip(grads).zip(&self.lens).enumerate() {
            if p.len() != n || g.len() != n {
                return Err(Error::validation(format!(
                    "tensor {k} has {} parameters and {} gradients, expected {n}",
                    p.len(),
                    g.len()
                )));
            }
        }
        for (k, g) in grads.iter().enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite gradient in {}",
                    tensor_name(k)
                )));
            }
        }

        self.step += 1;
        let t = self.step as f64;
        let OptimizerConfig {
            kind,
            learning_rate: lr,
            beta1,
            beta2,
            rho,
            epsilon: eps,
        } = self.config;

        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match kind {
                OptimizerKind::Sgd => {
                    for (x, &gi) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * gi;
                    }
                }
                OptimizerKind::RmsProp => {
                    let v = &mut self.first[k];
                    for ((x, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vi = rho * *vi + (1.0 - rho) * gi * gi;
                        *x -= lr * gi / (vi.sqrt() + eps);
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (((x, &gi), mi), vi) in
                        p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *x -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::Nadam => {
                    let c1 = 1.0 - beta1.powf(t);
                    let c1_next = 1.0 - beta1.powf(t + 1.0);
                    let c2 = 1.0 - beta2.powf(t);
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (((x, &gi), mi), vi) in
                        p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        let direction = beta1 * *mi / c1_next + (1.0 - beta1) * gi / c1;
                        let v_hat = *vi / c2;
                        *x -= lr * direction / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::Adadelta => {
                    let (eg, ex) = (&mut self.first[k], &mut self.second[k]);
                    for (((x, &gi), egi), exi) in
                        p.iter_mut().zip(g.iter()).zip(eg.iter_mut()).zip(ex.iter_mut())
                    {
                        *egi = rho * *egi + (1.0 - rho) * gi * gi;
                        let delta = -gi * (*exi + eps).sqrt() / (*egi + eps).sqrt();
                        *exi = rho * *exi + (1.0 - rho) * delta * delta;
                        *x += lr * delta;
                    }
                }
            }
        }
        Ok(())
    }
}

fn tensor_name(k: usize) -> String {
    let part = if k.is_multiple_of(2) { "weights" } else { "bias" };
    format!("layer {} {part}", k / 2)
}
