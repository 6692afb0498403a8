//! Heavy-ball PCGrad with the per-step schedule built from the PCGrad
//! weights of the two task gradients.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::problems::{MultiTaskProblem, QuadraticProblem};
use crate::surgery::pcgrad;
use crate::vecmath::{cosine, norm, Vector, EPS_NORM};

use super::checks::TOLERANCE;

/// Denominator form of the step size `α_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaForm {
    /// `4 / (√L_k + √μ_k)²`
    Squared,
    /// `4 / (√L_k + √μ_k)`
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub mu: f64,
    pub lipschitz: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `(√κ - 1) / (√κ + 1)` with `κ = L_k / μ_k`.
    pub factor: f64,
}

/// PCGrad weights `(1 - cos/R, 1 - cos·R)` for conflicting gradients, `(1, 1)`
/// otherwise, with `R = |g1| / |g2|`.
pub fn pcgrad_weights(cos: f64, ratio: f64) -> (f64, f64) {
    if cos < 0.0 {
        (1.0 - cos / ratio, 1.0 - cos * ratio)
    } else {
        (1.0, 1.0)
    }
}

pub fn schedule(weights: (f64, f64), mu: [f64; 2], l: [f64; 2], form: AlphaForm) -> Schedule {
    let (w1, w2) = weights;
    let mu_k = w1 * mu[0] + w2 * mu[1];
    let l_k = w1 * l[0] + w2 * l[1];
    let (sm, sl) = (mu_k.sqrt(), l_k.sqrt());
    let alpha = match form {
        AlphaForm::Squared => 4.0 / ((sl + sm) * (sl + sm)),
        AlphaForm::Literal => 4.0 / (sl + sm),
    };
    let b = (1.0 - (alpha * mu_k).sqrt()).abs().max((1.0 - (alpha * l_k).sqrt()).abs());
    let kappa = (l_k / mu_k).sqrt();
    Schedule {
        mu: mu_k,
        lipschitz: l_k,
        alpha,
        beta: b * b,
        factor: (kappa - 1.0) / (kappa + 1.0),
    }
}

/// Spectral radius of the heavy-ball iteration matrix for Hessian `h`:
/// the largest root modulus of `z² - (1 + β - αλ) z + β` over eigenvalues `λ`.
pub fn iteration_spectral_radius(h: &DMatrix<f64>, alpha: f64, beta: f64) -> f64 {
    SymmetricEigen::new(h.clone())
        .eigenvalues
        .iter()
        .map(|&lam| {
            let b = 1.0 + beta - alpha * lam;
            let disc = b * b - 4.0 * beta;
            if disc < 0.0 {
                beta.sqrt()
            } else {
                let s = disc.sqrt();
                ((b + s) / 2.0).abs().max(((b - s) / 2.0).abs())
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyBallStep {
    pub cos: Option<f64>,
    /// `None` when the schedule is undefined and a plain gradient step was taken.
    pub schedule: Option<Schedule>,
    /// `|[θ_{k+1} - θ*; θ_k - θ*]| / |[θ_k - θ*; θ_{k-1} - θ*]|`
    pub stacked_ratio: f64,
    pub spectral_radius: Option<f64>,
}

impl HeavyBallStep {
    pub fn stacked_ok(&self) -> Option<bool> {
        self.schedule.map(|s| self.stacked_ratio <= s.factor + TOLERANCE)
    }

    pub fn spectral_ok(&self) -> Option<bool> {
        self.schedule
            .zip(self.spectral_radius)
            .map(|(s, r)| r <= s.factor + TOLERANCE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyBallRun {
    pub steps: Vec<HeavyBallStep>,
    pub initial_error: f64,
    pub final_error: f64,
}

impl HeavyBallRun {
    pub fn checked_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.schedule.is_some()).count()
    }

    pub fn skipped_steps(&self) -> usize {
        self.steps.len() - self.checked_steps()
    }

    pub fn stacked_violations(&self) -> usize {
        self.steps.iter().filter(|s| s.stacked_ok() == Some(false)).count()
    }

    pub fn spectral_violations(&self) -> usize {
        self.steps.iter().filter(|s| s.spectral_ok() == Some(false)).count()
    }

    /// Largest `ratio - factor` over checked steps.
    pub fn worst_stacked_excess(&self) -> Option<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.schedule.map(|sc| s.stacked_ratio - sc.factor))
            .reduce(f64::max)
    }

    pub fn worst_spectral_excess(&self) -> Option<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.schedule.zip(s.spectral_radius).map(|(sc, r)| r - sc.factor))
            .reduce(f64::max)
    }
}

fn dist_sq(a: &Vector, b: &Vector) -> f64 {
    a.sub(b).expect("equal dimensions").norm_squared()
}

/// Runs heavy-ball PCGrad for `steps` iterations on a two-task quadratic
/// whose tasks share a minimizer.
pub fn check_heavyball_contraction(
    problem: &QuadraticProblem,
    theta0: &Vector,
    steps: usize,
    form: AlphaForm,
) -> Result<HeavyBallRun> {
    if problem.num_tasks() != 2 {
        return Err(Error::InvalidArgument("heavy-ball check needs two tasks".into()));
    }
    let meta = problem.metadata();
    let mu = meta.strong_convexity.ok_or(Error::MissingMetadata("strong convexity"))?;
    let l = meta.smoothness.ok_or(Error::MissingMetadata("per-task smoothness"))?;
    let l_total = meta.lipschitz.ok_or(Error::MissingMetadata("lipschitz constant"))?;
    if mu.iter().any(|&m| m <= 0.0) {
        return Err(Error::InvalidArgument("tasks must be strongly convex".into()));
    }
    let star = problem.minimizer().ok_or(Error::InvalidArgument("singular Hessian".into()))?;
    for i in 0..2 {
        let r = norm(&problem.task_grad(i, &star));
        if r > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "tasks do not share a minimizer (task {i} gradient {r:e} at the joint minimizer)"
            )));
        }
    }
    let (mu, l) = ([mu[0], mu[1]], [l[0], l[1]]);
    let a = [&problem.tasks()[0].a, &problem.tasks()[1].a];

    let mut opt = OptimizerState::heavy_ball(1.0, 0.0)?;
    let mut prev = theta0.clone();
    let mut theta = theta0.clone();
    let initial_error = dist_sq(theta0, &star).sqrt();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let grads = problem.task_gradients(&theta);
        let (g1, g2) = (grads.get(0), grads.get(1));
        let (n1, n2) = (norm(g1), norm(g2));
        let cos = cosine(g1, g2).ok();
        let den = (dist_sq(&theta, &star) + dist_sq(&prev, &star)).sqrt();
        let step = match cos {
            Some(c) if n1 > EPS_NORM && n2 > EPS_NORM && c > -1.0 => {
                let w = pcgrad_weights(c, n1 / n2);
                let sc = schedule(w, mu, l, form);
                let next = opt.heavy_ball_step_with(&theta, &pcgrad(&grads, 0)?.update, sc.alpha, sc.beta)?;
                let h = a[0] * w.0 + a[1] * w.1;
                let rho = iteration_spectral_radius(&h, sc.alpha, sc.beta);
                (next, Some(sc), Some(rho))
            }
            _ => {
                let next = opt.heavy_ball_step_with(&theta, &grads.sum(), 1.0 / l_total, 0.0)?;
                (next, None, None)
            }
        };
        let (next, schedule, spectral_radius) = step;
        let num = (dist_sq(&next, &star) + dist_sq(&theta, &star)).sqrt();
        out.push(HeavyBallStep {
            cos,
            schedule,
            stacked_ratio: if den > 0.0 { num / den } else { 0.0 },
            spectral_radius,
        });
        prev = std::mem::replace(&mut theta, next);
        theta.check_finite()?;
    }
    Ok(HeavyBallRun {
        steps: out,
        initial_error,
        final_error: dist_sq(&theta, &star).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticTask;
    use approx::assert_relative_eq;

    fn diag2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![a, b]))
    }

    fn crossed() -> QuadraticProblem {
        let c = Vector::from(vec![0.5, -0.25]);
        QuadraticProblem::new(vec![
            QuadraticTask::new(diag2(1.0, 4.0), c.clone()).unwrap(),
            QuadraticTask::new(diag2(4.0, 1.0), c).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn squared_schedule_attains_the_factor() {
        let s = schedule((1.0, 1.0), [1.0, 1.0], [4.0, 4.0], AlphaForm::Squared);
        // κ = 4: factor 1/3, |1 - sqrt(α L)| = 1/3
        assert_relative_eq!(s.factor, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!((1.0 - (s.alpha * s.lipschitz).sqrt()).abs(), s.factor, max_relative = 1e-14);
        assert_relative_eq!(s.beta.sqrt(), s.factor, max_relative = 1e-14);
    }

    #[test]
    fn identical_tasks_recover_single_task_rate() {
        let c = Vector::from(vec![0.0, 0.0]);
        let p = QuadraticProblem::new(vec![
            QuadraticTask::new(diag2(1.0, 9.0), c.clone()).unwrap(),
            QuadraticTask::new(diag2(1.0, 9.0), c).unwrap(),
        ])
        .unwrap();
        let run = check_heavyball_contraction(&p, &Vector::from(vec![1.0, 1.0]), 200, AlphaForm::Squared).unwrap();
        let sc = run.steps[0].schedule.unwrap();
        assert_relative_eq!(sc.factor, 0.5, max_relative = 1e-14);
        assert_eq!(run.spectral_violations(), 0);
        assert!(run.final_error < 1e-8);
    }

    #[test]
    fn crossed_diagonal_instance() {
        let run = check_heavyball_contraction(&crossed(), &Vector::from(vec![2.0, 1.0]), 500, AlphaForm::Squared).unwrap();
        assert_eq!(run.spectral_violations(), 0);
        assert!(run.final_error < 1e-8, "{}", run.final_error);
    }

    #[test]
    fn spectral_radius_matches_companion_matrix() {
        // eigenvalues of [[1+β-αλ, -β], [1, 0]] computed directly
        let (alpha, beta) = (0.3, 0.25);
        for lam in [0.5, 1.0, 3.0, 8.0] {
            let m = nalgebra::Matrix2::new(1.0 + beta - alpha * lam, -beta, 1.0, 0.0);
            let direct = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            let h = DMatrix::from_element(1, 1, lam);
            assert_relative_eq!(iteration_spectral_radius(&h, alpha, beta), direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn literal_alpha_misses_the_factor() {
        let sq = schedule((1.0, 1.0), [1.0, 1.0], [4.0, 4.0], AlphaForm::Squared);
        let lit = schedule((1.0, 1.0), [1.0, 1.0], [4.0, 4.0], AlphaForm::Literal);
        let h = diag2(2.0, 8.0);
        assert!(iteration_spectral_radius(&h, sq.alpha, sq.beta) <= sq.factor + 1e-12);
        assert!(iteration_spectral_radius(&h, lit.alpha, lit.beta) > lit.factor + 1e-3);
    }

    #[test]
    fn rejects_distinct_minimizers() {
        let p = QuadraticProblem::new(vec![
            QuadraticTask::new(diag2(1.0, 2.0), Vector::from(vec![0.0, 0.0])).unwrap(),
            QuadraticTask::new(diag2(2.0, 1.0), Vector::from(vec![1.0, 0.0])).unwrap(),
        ])
        .unwrap();
        assert!(check_heavyball_contraction(&p, &Vector::from(vec![1.0, 1.0]), 10, AlphaForm::Squared).is_err());
    }
}
