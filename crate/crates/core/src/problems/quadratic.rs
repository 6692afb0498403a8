//! Random convex and strongly-convex quadratic families.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{MultiTaskProblem, ProblemMetadata};
use crate::error::{Error, Result};
use crate::seeding::{keyed_rng, Domain};
use crate::vecmath::Vector;

/// `L(θ) = ½ (θ - c)ᵀ A (θ - c)` with `A` symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub a: DMatrix<f64>,
    pub center: Vector,
}

impl QuadraticTask {
    pub fn new(a: DMatrix<f64>, center: Vector) -> Result<Self> {
        let n = center.dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.nrows(),
            });
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!("matrix is not symmetric ({asym:e})")));
        }
        let a = (&a + a.transpose()) * 0.5;
        Ok(QuadraticTask { a, center })
    }

    fn displacement(&self, theta: &Vector) -> DVector<f64> {
        DVector::from_iterator(
            theta.dim(),
            theta.iter().zip(self.center.iter()).map(|(x, c)| x - c),
        )
    }

    pub fn loss(&self, theta: &Vector) -> f64 {
        let d = self.displacement(theta);
        0.5 * d.dot(&(&self.a * &d))
    }

    pub fn grad(&self, theta: &Vector) -> Vector {
        let d = self.displacement(theta);
        Vector::from((&self.a * d).as_slice())
    }

    /// Ascending eigenvalues of `A`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.a)
    }
}

/// Bounded smooth nonconvexity `amplitude · Σ_k sin(frequency · θ_k + phase_k)`,
/// added to every task.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub amplitude: f64,
    pub frequency: f64,
    pub phases: Vec<f64>,
}

impl Perturbation {
    fn value(&self, theta: &Vector) -> f64 {
        let f = self.frequency;
        self.amplitude
            * theta
                .iter()
                .zip(&self.phases)
                .map(|(x, p)| (f * x + p).sin())
                .sum::<f64>()
    }

    fn add_grad(&self, theta: &Vector, out: &mut Vector) {
        let (a, f) = (self.amplitude, self.frequency);
        for (k, p) in self.phases.iter().enumerate() {
            out[k] += a * f * (f * theta[k] + p).cos();
        }
    }

    /// Bound on the absolute Hessian eigenvalues of the perturbation term.
    fn curvature_bound(&self) -> f64 {
        self.amplitude.abs() * self.frequency * self.frequency
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    tasks: Vec<QuadraticTask>,
    perturbation: Option<Perturbation>,
    metadata: ProblemMetadata,
}

impl QuadraticProblem {
    pub fn new(tasks: Vec<QuadraticTask>) -> Result<Self> {
        Self::with_perturbation(tasks, None)
    }

    pub fn with_perturbation(tasks: Vec<QuadraticTask>, perturbation: Option<Perturbation>) -> Result<Self> {
        let first = tasks.first().ok_or(Error::Empty("quadratic task list"))?;
        let n = first.center.dim();
        for t in &tasks {
            t.center.check_dim(n)?;
        }
        if let Some(p) = &perturbation {
            if p.phases.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.phases.len(),
                });
            }
        }
        let spectra: Vec<Vec<f64>> = tasks.iter().map(QuadraticTask::eigenvalues).collect();
        let sum = tasks.iter().fold(DMatrix::zeros(n, n), |acc, t| acc + &t.a);
        let mut lipschitz = *sorted_eigenvalues(&sum).last().expect("n >= 1");
        let mut loss_floor = 0.0;
        if let Some(p) = &perturbation {
            let k = tasks.len() as f64;
            lipschitz += k * p.curvature_bound();
            loss_floor = -k * n as f64 * p.amplitude.abs();
        }
        let metadata = ProblemMetadata {
            lipschitz: Some(lipschitz),
            strong_convexity: perturbation
                .is_none()
                .then(|| spectra.iter().map(|s| s[0].max(0.0)).collect()),
            smoothness: perturbation
                .is_none()
                .then(|| spectra.iter().map(|s| *s.last().unwrap()).collect()),
            loss_floor: Some(loss_floor),
        };
        Ok(QuadraticProblem {
            tasks,
            perturbation,
            metadata,
        })
    }

    pub fn tasks(&self) -> &[QuadraticTask] {
        &self.tasks
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn is_pure_quadratic(&self) -> bool {
        self.perturbation.is_none()
    }

    /// `Σ A_i`, the constant Hessian of the summed loss when unperturbed.
    pub fn hessian_sum(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.tasks.iter().fold(DMatrix::zeros(n, n), |acc, t| acc + &t.a)
    }

    /// `vᵀ (Σ A_i) v`.
    pub fn hessian_form(&self, v: &Vector) -> f64 {
        let x = DVector::from_column_slice(v.as_slice());
        x.dot(&(self.hessian_sum() * &x))
    }

    /// Minimizer of the unperturbed summed loss, `(Σ A_i)^{-1} Σ A_i c_i`.
    pub fn minimizer(&self) -> Option<Vector> {
        let n = self.dim();
        let rhs = self.tasks.iter().fold(DVector::zeros(n), |acc, t| {
            acc + &t.a * DVector::from_column_slice(t.center.as_slice())
        });
        let sol = self.hessian_sum().cholesky()?.solve(&rhs);
        Some(Vector::from(sol.as_slice()))
    }
}

impl MultiTaskProblem for QuadraticProblem {
    fn dim(&self) -> usize {
        self.tasks[0].center.dim()
    }
    fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
    fn task_loss(&self, task: usize, theta: &Vector) -> f64 {
        let base = self.tasks[task].loss(theta);
        match &self.perturbation {
            Some(p) => base + p.value(theta),
            None => base,
        }
    }
    fn task_grad(&self, task: usize, theta: &Vector) -> Vector {
        let mut g = self.tasks[task].grad(theta);
        if let Some(p) = &self.perturbation {
            p.add_grad(theta, &mut g);
        }
        g
    }
    fn metadata(&self) -> ProblemMetadata {
        self.metadata.clone()
    }
}

/// Generator for random quadratic families.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFamily {
    pub dim: usize,
    pub num_tasks: usize,
    /// Eigenvalue bounds `[μ, Λ]`, sampled uniformly.
    pub spectrum: (f64, f64),
    /// Every task reuses the first task's matrix and center.
    pub identical: bool,
    /// All tasks share one center.
    pub shared_center: bool,
    /// Centers are uniform in `[-r, r]^n`.
    pub center_radius: f64,
    /// `(amplitude, frequency)` of an added sinusoid, phases drawn per instance.
    pub perturbation: Option<(f64, f64)>,
    /// Phase the sinusoid so each coordinate term has a local minimum at the
    /// first task's center instead of drawing phases at random.
    pub perturbation_centered: bool,
}

impl QuadraticFamily {
    pub fn new(dim: usize, num_tasks: usize, mu: f64, lambda: f64) -> Self {
        QuadraticFamily {
            dim,
            num_tasks,
            spectrum: (mu, lambda),
            identical: false,
            shared_center: false,
            center_radius: 1.0,
            perturbation: None,
            perturbation_centered: false,
        }
    }

    fn validate(&self) -> Result<()> {
        let (mu, lam) = self.spectrum;
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if self.num_tasks == 0 {
            return Err(Error::InvalidArgument("need at least one task".into()));
        }
        if !(mu >= 0.0 && mu <= lam && lam.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spectrum bounds must satisfy 0 <= mu <= lambda, got [{mu}, {lam}]"
            )));
        }
        if !(self.center_radius >= 0.0 && self.center_radius.is_finite()) {
            return Err(Error::InvalidArgument("center radius must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<QuadraticProblem> {
        self.validate()?;
        let mut rng = keyed_rng(seed, Domain::ProblemGen, 0, 0);
        let n = self.dim;
        let (mu, lam) = self.spectrum;
        let r = self.center_radius;
        let draw_center = |rng: &mut rand_chacha::ChaCha8Rng| -> Vector {
            Vector::from((0..n).map(|_| r * rng.random_range(-1.0..=1.0)).collect::<Vec<_>>())
        };
        let shared = draw_center(&mut rng);
        let mut tasks: Vec<QuadraticTask> = Vec::with_capacity(self.num_tasks);
        for i in 0..self.num_tasks {
            if self.identical && i > 0 {
                tasks.push(tasks[0].clone());
                continue;
            }
            let eig: Vec<f64> = (0..n)
                .map(|_| if mu == lam { mu } else { rng.random_range(mu..=lam) })
                .collect();
            let a = conjugated_diagonal(&eig, &mut rng);
            let center = if self.shared_center || i == 0 {
                shared.clone()
            } else {
                draw_center(&mut rng)
            };
            tasks.push(QuadraticTask { a, center });
        }
        let anchor = tasks[0].center.clone();
        let perturbation = self.perturbation.map(|(amplitude, frequency)| Perturbation {
            amplitude,
            frequency,
            phases: (0..n)
                .map(|k| {
                    if self.perturbation_centered {
                        // sin(f(θ - c) - π/2) = -cos(f(θ - c))
                        -std::f64::consts::FRAC_PI_2 - frequency * anchor[k]
                    } else {
                        rng.random_range(0.0..std::f64::consts::TAU)
                    }
                })
                .collect(),
        });
        QuadraticProblem::with_perturbation(tasks, perturbation)
    }
}

/// Random family with eigenvalues in `[mu, lambda]` and independent centers.
pub fn quadratic_family(seed: u64, n: usize, num_tasks: usize, mu: f64, lambda: f64) -> Result<QuadraticProblem> {
    QuadraticFamily::new(n, num_tasks, mu, lambda).generate(seed)
}

/// `Q diag(eig) Qᵀ` for a Haar-random orthogonal `Q`, symmetrized.
fn conjugated_diagonal<R: Rng>(eig: &[f64], rng: &mut R) -> DMatrix<f64> {
    let n = eig.len();
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(eig));
    let a = &q * d * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub(crate) fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{finite_difference_grad, relative_error};
    use approx::assert_relative_eq;

    fn power_iteration(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
        let mut lam = 0.0;
        for _ in 0..100_000 {
            let y = m * &x;
            let next = y.norm() / x.norm();
            x = y.normalize();
            let done = (next - lam).abs() <= 1e-15 * next;
            lam = next;
            if done {
                break;
            }
        }
        // Rayleigh quotient at the converged vector
        x.dot(&(m * &x)) / x.dot(&x)
    }

    #[test]
    fn forced_unit_spectrum_gives_identity() {
        for seed in 0..5 {
            let p = quadratic_family(seed, 4, 3, 1.0, 1.0).unwrap();
            for t in p.tasks() {
                let err = (&t.a - DMatrix::<f64>::identity(4, 4)).amax();
                assert!(err < 1e-12, "{err}");
            }
        }
    }

    #[test]
    fn lipschitz_matches_power_iteration() {
        for seed in 0..20 {
            let p = quadratic_family(seed, 2 + (seed as usize % 10), 2, 0.1, 10.0).unwrap();
            let l = p.metadata().lipschitz.unwrap();
            assert_relative_eq!(l, power_iteration(&p.hessian_sum()), max_relative = 1e-8);
        }
    }

    #[test]
    fn gradient_vanishes_at_center() {
        let p = quadratic_family(3, 6, 4, 0.0, 5.0).unwrap();
        for (i, t) in p.tasks().iter().enumerate() {
            assert!(p.task_grad(i, &t.center).max_abs() < 1e-14);
        }
    }

    #[test]
    fn spectrum_respects_bounds_and_metadata_is_exact() {
        let p = quadratic_family(11, 8, 3, 0.5, 2.0).unwrap();
        let m = p.metadata();
        for (i, t) in p.tasks().iter().enumerate() {
            let e = t.eigenvalues();
            assert!(e[0] >= 0.5 - 1e-12 && *e.last().unwrap() <= 2.0 + 1e-12);
            assert_eq!(m.strong_convexity.as_ref().unwrap()[i], e[0]);
            assert!((&t.a - t.a.transpose()).amax() == 0.0);
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(quadratic_family(0, 3, 2, 2.0, 1.0).is_err());
        assert!(quadratic_family(0, 3, 2, -1.0, 1.0).is_err());
        assert!(quadratic_family(0, 0, 2, 0.0, 1.0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = quadratic_family(42, 5, 3, 0.0, 10.0).unwrap();
        let b = quadratic_family(42, 5, 3, 0.0, 10.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, quadratic_family(43, 5, 3, 0.0, 10.0).unwrap());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut fam = QuadraticFamily::new(7, 3, 0.1, 5.0);
        for seed in 0..10 {
            fam.perturbation = (seed % 2 == 1).then_some((0.3, 2.0));
            let p = fam.generate(seed).unwrap();
            let th = Vector::from((0..7).map(|k| (k as f64 * 0.37 + seed as f64).sin()).collect::<Vec<_>>());
            for i in 0..3 {
                let fd = finite_difference_grad(&p, i, &th, 1e-6);
                assert!(relative_error(&p.task_grad(i, &th), &fd) < 1e-4);
            }
        }
    }

    #[test]
    fn perturbed_floor_is_a_lower_bound() {
        let mut fam = QuadraticFamily::new(3, 2, 0.1, 1.0);
        fam.perturbation = Some((0.5, 3.0));
        let p = fam.generate(1).unwrap();
        let floor = p.metadata().loss_floor.unwrap();
        assert_relative_eq!(floor, -2.0 * 3.0 * 0.5);
        let mut rng = keyed_rng(0, Domain::Init, 0, 0);
        for _ in 0..1000 {
            let th = Vector::from((0..3).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            assert!(p.total_loss(&th) >= floor);
        }
    }

    #[test]
    fn centered_perturbation_keeps_a_common_stationary_point() {
        let mut fam = QuadraticFamily::new(4, 3, 0.1, 2.0);
        fam.shared_center = true;
        fam.perturbation = Some((0.2, 2.0));
        fam.perturbation_centered = true;
        let p = fam.generate(8).unwrap();
        let c = p.tasks()[0].center.clone();
        for i in 0..3 {
            assert!(p.task_grad(i, &c).max_abs() < 1e-15);
        }
    }

    #[test]
    fn shared_center_minimizer() {
        let mut fam = QuadraticFamily::new(4, 2, 0.5, 3.0);
        fam.shared_center = true;
        let p = fam.generate(5).unwrap();
        let star = p.minimizer().unwrap();
        assert!(relative_error(&star, &p.tasks()[0].center) < 1e-12);
    }
}
