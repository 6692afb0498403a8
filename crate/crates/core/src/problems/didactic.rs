//! Two-task 2D landscape with deep curved valleys.
//!
//! `L_0 = 20 ln max(|u_0|, 5e-6)` with `u_0 = θ_0/2 + tanh θ_1`, and
//! `L_1 = 25 ln max(|u_1|, 5e-6)` with `u_1 = θ_0/2 - tanh θ_1 + 2`.
//! Both valleys meet near `θ_0 = -2, θ_1 → ∞`.

use super::{MultiTaskProblem, ProblemMetadata};
use crate::vecmath::Vector;

pub const CLAMP: f64 = 0.000005;
pub const TASK_WEIGHTS: [f64; 2] = [20.0, 25.0];

/// `45 ln(5e-6)`: the summed loss with both clamps engaged.
pub const LOSS_FLOOR: f64 = 45.0 * -12.206_072_645_530_174;

fn inner(task: usize, theta: &Vector) -> f64 {
    let t = theta[1].tanh();
    match task {
        0 => 0.5 * theta[0] + t,
        1 => 0.5 * theta[0] - t + 2.0,
        _ => panic!("didactic2d has two tasks, got index {task}"),
    }
}

pub fn didactic2d_loss(task: usize, theta: &Vector) -> f64 {
    TASK_WEIGHTS[task] * inner(task, theta).abs().max(CLAMP).ln()
}

/// Zero inside the clamp region and on its boundary.
pub fn didactic2d_grad(task: usize, theta: &Vector) -> Vector {
    let u = inner(task, theta);
    if u.abs() <= CLAMP {
        return Vector::zeros(2);
    }
    let c = theta[1].cosh();
    let sech2 = 1.0 / (c * c);
    let w = TASK_WEIGHTS[task] / u;
    let sign = if task == 0 { 1.0 } else { -1.0 };
    Vector::from(vec![0.5 * w, sign * w * sech2])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Didactic2d;

impl Didactic2d {
    pub const INIT: [f64; 2] = [0.5, -3.0];
}

impl MultiTaskProblem for Didactic2d {
    fn dim(&self) -> usize {
        2
    }
    fn num_tasks(&self) -> usize {
        2
    }
    fn task_loss(&self, task: usize, theta: &Vector) -> f64 {
        didactic2d_loss(task, theta)
    }
    fn task_grad(&self, task: usize, theta: &Vector) -> Vector {
        didactic2d_grad(task, theta)
    }
    fn metadata(&self) -> ProblemMetadata {
        ProblemMetadata {
            loss_floor: Some(LOSS_FLOOR),
            ..Default::default()
        }
    }
}
