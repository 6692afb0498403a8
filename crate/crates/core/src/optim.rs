//! Base optimizers that consume the combined (possibly surgically modified)
//! update vector in place of the raw gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    HeavyBall,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::HeavyBall => "heavy_ball",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "heavy_ball" => Ok(OptimizerKind::HeavyBall),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Step size: `t` for SGD, constant `α` for heavy ball, Adam learning rate.
    pub lr: f64,
    /// Constant heavy-ball momentum `β`.
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Hyperparams {
    pub fn with_lr(lr: f64) -> Self {
        Hyperparams {
            lr,
            ..Default::default()
        }
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lr: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Accumulator state for one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub hyper: Hyperparams,
    pub step_count: u64,
    /// Heavy ball: the iterate before the current one.
    pub prev_theta: Option<Vector>,
    pub first_moment: Option<Vector>,
    pub second_moment: Option<Vector>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: Hyperparams) -> Result<Self> {
        if !(hyper.lr > 0.0 && hyper.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                hyper.lr
            )));
        }
        Ok(OptimizerState {
            kind,
            hyper,
            step_count: 0,
            prev_theta: None,
            first_moment: None,
            second_moment: None,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, Hyperparams::with_lr(lr))
    }

    pub fn heavy_ball(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(
            OptimizerKind::HeavyBall,
            Hyperparams {
                momentum: beta,
                ..Hyperparams::with_lr(alpha)
            },
        )
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, Hyperparams::with_lr(lr))
    }

    /// Dispatches on [`OptimizerState::kind`].
    pub fn step(&mut self, theta: &Vector, update: &Vector) -> Result<Vector> {
        match self.kind {
            OptimizerKind::Sgd => self.sgd_step(theta, update),
            OptimizerKind::HeavyBall => self.heavy_ball_step(theta, update),
            OptimizerKind::Adam => self.adam_step(theta, update),
        }
    }

    /// `θ - t·update`
    pub fn sgd_step(&mut self, theta: &Vector, update: &Vector) -> Result<Vector> {
        let mut next = theta.clone();
        next.axpy(-self.hyper.lr, update)?;
        self.step_count += 1;
        Ok(next)
    }

    pub fn heavy_ball_step(&mut self, theta: &Vector, update: &Vector) -> Result<Vector> {
        let (alpha, beta) = (self.hyper.lr, self.hyper.momentum);
        self.heavy_ball_step_with(theta, update, alpha, beta)
    }

    /// `θ_k - α·update + β·(θ_k - θ_{k-1})` with per-step `α`, `β`. On the
    /// first call the previous iterate is taken to be `θ_0`, so the momentum
    /// term vanishes.
    pub fn heavy_ball_step_with(
        &mut self,
        theta: &Vector,
        update: &Vector,
        alpha: f64,
        beta: f64,
    ) -> Result<Vector> {
        theta.check_dim(update.dim())?;
        let prev = self.prev_theta.get_or_insert_with(|| theta.clone());
        prev.check_dim(theta.dim())?;
        let next: Vec<f64> = theta
            .iter()
            .zip(update.iter())
            .zip(prev.iter())
            .map(|((&x, &u), &p)| x - alpha * u + beta * (x - p))
            .collect();
        *prev = theta.clone();
        self.step_count += 1;
        Ok(Vector::from(next))
    }

    /// Bias-corrected Adam with `update` standing in for the gradient.
    pub fn adam_step(&mut self, theta: &Vector, update: &Vector) -> Result<Vector> {
        theta.check_dim(update.dim())?;
        let dim = theta.dim();
        let Hyperparams {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.hyper;
        let m = self.first_moment.get_or_insert_with(|| Vector::zeros(dim));
        m.check_dim(dim)?;
        let v = self.second_moment.get_or_insert_with(|| Vector::zeros(dim));
        v.check_dim(dim)?;

        self.step_count += 1;
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        let mut next = theta.clone();
        for k in 0..dim {
            let u = update[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * u;
            v[k] = beta2 * v[k] + (1.0 - beta2) * u * u;
            let m_hat = m[k] / bias1;
            let v_hat = v[k] / bias2;
            next[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(next)
    }
}
