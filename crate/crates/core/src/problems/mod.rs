//! Multi-task objective families with analytic gradients.

mod didactic;
pub mod mlp;
mod quadratic;

pub use didactic::{didactic2d_grad, didactic2d_loss, Didactic2d, CLAMP, LOSS_FLOOR, TASK_WEIGHTS};
pub use mlp::{mlp_task_gradients, MlpProblem, MlpSpec, Sample};
pub use quadratic::{quadratic_family, Perturbation, QuadraticFamily, QuadraticProblem, QuadraticTask};

use crate::surgery::TaskGradients;
use crate::vecmath::Vector;

/// Analytic constants a problem may know about itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemMetadata {
    /// Lipschitz constant of the gradient of the summed loss.
    pub lipschitz: Option<f64>,
    /// Per-task strong-convexity constants.
    pub strong_convexity: Option<Vec<f64>>,
    /// Per-task smoothness constants.
    pub smoothness: Option<Vec<f64>>,
    /// A lower bound on the summed loss.
    pub loss_floor: Option<f64>,
}

/// A family `{L_i}` evaluated at parameter vectors of a fixed dimension.
///
/// Callers pass `theta` of length [`MultiTaskProblem::dim`]; implementations
/// may panic otherwise.
pub trait MultiTaskProblem: Send + Sync {
    fn dim(&self) -> usize;
    fn num_tasks(&self) -> usize;
    fn task_loss(&self, task: usize, theta: &Vector) -> f64;
    fn task_grad(&self, task: usize, theta: &Vector) -> Vector;

    fn metadata(&self) -> ProblemMetadata {
        ProblemMetadata::default()
    }

    fn task_losses(&self, theta: &Vector) -> Vec<f64> {
        (0..self.num_tasks()).map(|i| self.task_loss(i, theta)).collect()
    }

    fn total_loss(&self, theta: &Vector) -> f64 {
        self.task_losses(theta).iter().sum()
    }

    fn task_gradients(&self, theta: &Vector) -> TaskGradients {
        let grads = (0..self.num_tasks()).map(|i| self.task_grad(i, theta)).collect();
        TaskGradients::new(grads).expect("problem gradients are finite and equal-dimensional")
    }
}

impl<T: MultiTaskProblem + ?Sized> MultiTaskProblem for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_tasks(&self) -> usize {
        (**self).num_tasks()
    }
    fn task_loss(&self, task: usize, theta: &Vector) -> f64 {
        (**self).task_loss(task, theta)
    }
    fn task_grad(&self, task: usize, theta: &Vector) -> Vector {
        (**self).task_grad(task, theta)
    }
    fn metadata(&self) -> ProblemMetadata {
        (**self).metadata()
    }
}

/// Central finite-difference gradient of one task's loss.
pub fn finite_difference_grad<P: MultiTaskProblem + ?Sized>(
    problem: &P,
    task: usize,
    theta: &Vector,
    h: f64,
) -> Vector {
    let mut out = Vector::zeros(theta.dim());
    let mut probe = theta.clone();
    for k in 0..theta.dim() {
        let x = theta[k];
        probe[k] = x + h;
        let up = problem.task_loss(task, &probe);
        probe[k] = x - h;
        let down = problem.task_loss(task, &probe);
        probe[k] = x;
        out[k] = (up - down) / (2.0 * h);
    }
    out
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &Vector, b: &Vector) -> f64 {
    let diff = a.sub(b).expect("equal dimensions").norm_squared().sqrt();
    let scale = a.norm_squared().sqrt().max(b.norm_squared().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
