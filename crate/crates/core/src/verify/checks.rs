//! Single-instance checks of the descent and comparison guarantees.

use crate::error::{Error, Result};
use crate::problems::{MultiTaskProblem, QuadraticProblem};
use crate::surgery::{curvature_bounding_measure, magnitude_similarity, pcgrad, taylor_curvature};
use crate::vecmath::{cosine, dot, norm, Vector, EPS_NORM};

/// Margins at or above `-TOLERANCE` pass.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Violation,
    NotApplicable,
    /// Conflict is total (`cos = -1`) somewhere along a trajectory.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub status: Status,
    /// Present whenever the guarantee was asserted.
    pub margin: Option<f64>,
    pub quantities: Vec<(&'static str, f64)>,
}

impl Verdict {
    fn checked(margin: f64, quantities: Vec<(&'static str, f64)>) -> Self {
        let status = if margin >= -TOLERANCE {
            Status::Pass
        } else {
            Status::Violation
        };
        Verdict {
            status,
            margin: Some(margin),
            quantities,
        }
    }

    fn skipped(status: Status, quantities: Vec<(&'static str, f64)>) -> Self {
        Verdict {
            status,
            margin: None,
            quantities,
        }
    }

    pub fn applicable(&self) -> bool {
        self.margin.is_some()
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Violation
    }

    pub fn quantity(&self, name: &str) -> Option<f64> {
        self.quantities.iter().find(|(k, _)| *k == name).map(|&(_, v)| v)
    }
}

fn lipschitz<P: MultiTaskProblem + ?Sized>(problem: &P) -> Result<f64> {
    problem.metadata().lipschitz.ok_or(Error::MissingMetadata("lipschitz constant"))
}

fn require_two_tasks(n: usize) -> Result<()> {
    if n != 2 {
        return Err(Error::InvalidArgument(format!("expected two tasks, got {n}")));
    }
    Ok(())
}

fn stepped(theta: &Vector, t: f64, dir: &Vector) -> Result<Vector> {
    let mut out = theta.clone();
    out.axpy(-t, dir)?;
    Ok(out)
}

/// One PCGrad step of size `t ≤ 1/L` on a two-task problem. The margin is
/// `L(θ) - ½ t (1 - cos²) |g|² - L(θ⁺)` when the gradients conflict and
/// `L(θ) - ½ t |g|² - L(θ⁺)` otherwise.
pub fn check_theorem1_decrease<P: MultiTaskProblem + ?Sized>(problem: &P, theta: &Vector, t: f64) -> Result<Verdict> {
    require_two_tasks(problem.num_tasks())?;
    let l = lipschitz(problem)?;
    if !(t > 0.0 && t * l <= 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("step {t} exceeds 1/L = {}", 1.0 / l)));
    }
    let grads = problem.task_gradients(theta);
    let g = grads.sum();
    let gsq = g.norm_squared();
    let cos = cosine(grads.get(0), grads.get(1)).ok();
    let next = stepped(theta, t, &pcgrad(&grads, 0)?.update)?;
    let before = problem.total_loss(theta);
    let after = problem.total_loss(&next);
    let decrease = match cos {
        Some(c) if c < 0.0 => 0.5 * t * (1.0 - c * c) * gsq,
        _ => 0.5 * t * gsq,
    };
    Ok(Verdict::checked(
        before - decrease - after,
        vec![
            ("cos", cos.unwrap_or(f64::NAN)),
            ("grad_norm_sq", gsq),
            ("loss_before", before),
            ("loss_after", after),
        ],
    ))
}

/// Quantities shared by the two one-step comparison checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub cos: f64,
    pub phi: f64,
    pub xi: f64,
    /// Exact curvature lower bound `gᵀ(ΣA)g / |g|²` along `g`.
    pub ell: f64,
    pub lipschitz: f64,
    pub t: f64,
    /// Coefficient of `t²` in the surrogate gap, `½|g1+g2|² ℓ - ½(1-cos²)|g1-g2|² L`.
    pub q2: f64,
    /// Coefficient of `-t`, `(|g1|²+|g2|²) cos² + 2 |g1| |g2| cos`.
    pub q1: f64,
    pub loss_mt: f64,
    pub loss_pc: f64,
}

impl Comparison {
    /// Lower bound on `L(θ_MT) - L(θ_PC)` from the curvature and smoothness bounds.
    pub fn surrogate_gap(&self) -> f64 {
        self.t * (self.q2 * self.t - self.q1)
    }

    pub fn true_gap(&self) -> f64 {
        self.loss_mt - self.loss_pc
    }

    fn quantities(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("cos", self.cos),
            ("phi", self.phi),
            ("xi", self.xi),
            ("ell", self.ell),
            ("lipschitz", self.lipschitz),
            ("t", self.t),
            ("q1", self.q1),
            ("q2", self.q2),
            ("surrogate_gap", self.surrogate_gap()),
            ("true_gap", self.true_gap()),
        ]
    }
}

/// Evaluates one plain step and one PCGrad step of size `t` from `theta`.
pub fn compare_one_step(problem: &QuadraticProblem, theta: &Vector, t: f64) -> Result<Comparison> {
    require_two_tasks(problem.num_tasks())?;
    if !problem.is_pure_quadratic() {
        return Err(Error::Unsupported("exact curvature needs an unperturbed quadratic"));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {t}")));
    }
    let lip = lipschitz(problem)?;
    let grads = problem.task_gradients(theta);
    let (g1, g2) = (grads.get(0), grads.get(1));
    let cos = cosine(g1, g2)?;
    let phi = magnitude_similarity(g1, g2)?;
    let xi = curvature_bounding_measure(g1, g2)?;
    let g = grads.sum();
    let gsq = g.norm_squared();
    let ell = problem.hessian_form(&g) / gsq;
    let (a, b) = (g1.norm_squared(), g2.norm_squared());
    let diff_sq = g1.sub(g2)?.norm_squared();
    let q2 = 0.5 * gsq * ell - 0.5 * (1.0 - cos * cos) * diff_sq * lip;
    let q1 = (a + b) * cos * cos + 2.0 * (a * b).sqrt() * cos;
    let loss_mt = problem.total_loss(&stepped(theta, t, &g)?);
    let loss_pc = problem.total_loss(&stepped(theta, t, &pcgrad(&grads, 0)?.update)?);
    Ok(Comparison {
        cos,
        phi,
        xi,
        ell,
        lipschitz: lip,
        t,
        q2,
        q1,
        loss_mt,
        loss_pc,
    })
}

/// Asserts `L(θ_PC) ≤ L(θ_MT)` when `cos ≤ -Φ`, `ℓ ≥ ξL` and `t ≥ 2/(ℓ - ξL)`.
/// Degenerate gradients or sums propagate as errors.
pub fn check_theorem2_sufficient(problem: &QuadraticProblem, theta: &Vector, t: f64) -> Result<Verdict> {
    let c = compare_one_step(problem, theta, t)?;
    let gap = c.ell - c.xi * c.lipschitz;
    // (b) with equality leaves (c) unsatisfiable
    let holds = c.cos <= -c.phi && gap > 0.0 && t >= 2.0 / gap;
    let q = c.quantities();
    Ok(if holds {
        Verdict::checked(c.true_gap(), q)
    } else {
        Verdict::skipped(Status::NotApplicable, q)
    })
}

/// Which of the two three-condition branches holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `-Φ ≤ cos < 0`, `ℓ ≤ ξL`, `0 < t ≤ Q1/Q2`.
    Mild,
    /// `cos ≤ -Φ`, `ℓ ≥ ξL`, `t ≥ Q1/Q2`.
    Strong,
}

/// The step-size condition is evaluated in the product form `Q2·t ≥ Q1`,
/// which is equivalent to the quotient form for either sign of `Q2` and stays
/// defined at `Q2 = 0`.
pub fn theorem3_branch(c: &Comparison) -> Option<Branch> {
    let step_ok = c.q2 * c.t - c.q1 >= 0.0;
    let xil = c.xi * c.lipschitz;
    if !step_ok {
        None
    } else if c.cos <= -c.phi && c.ell >= xil {
        Some(Branch::Strong)
    } else if -c.phi <= c.cos && c.cos < 0.0 && c.ell <= xil {
        Some(Branch::Mild)
    } else {
        None
    }
}

/// Asserts improvement on the true losses when a branch holds. When neither
/// holds the verdict is not applicable; the comparison is still returned in
/// the quantities (`branch` is 0 for none, 1 for mild, 2 for strong).
pub fn check_theorem3_iff(problem: &QuadraticProblem, theta: &Vector, t: f64) -> Result<Verdict> {
    let c = compare_one_step(problem, theta, t)?;
    let branch = theorem3_branch(&c);
    let mut q = c.quantities();
    q.push((
        "branch",
        match branch {
            None => 0.0,
            Some(Branch::Mild) => 1.0,
            Some(Branch::Strong) => 2.0,
        },
    ));
    Ok(match branch {
        Some(_) => Verdict::checked(c.true_gap(), q),
        None => Verdict::skipped(Status::NotApplicable, q),
    })
}

/// With `cos(g, g_PC) ≥ ½` and `t ≤ 1/L`, asserts `L(θ - t g_PC) ≤ L(θ)`.
pub fn check_corollary_ntasks<P: MultiTaskProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    t: f64,
    seed: u64,
) -> Result<Verdict> {
    if problem.num_tasks() < 2 {
        return Err(Error::InvalidArgument("need at least two tasks".into()));
    }
    let l = lipschitz(problem)?;
    if !(t > 0.0 && t * l <= 1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!("step {t} exceeds 1/L = {}", 1.0 / l)));
    }
    let grads = problem.task_gradients(theta);
    let g = grads.sum();
    let gpc = pcgrad(&grads, seed)?.update;
    let npc = norm(&gpc);
    if npc <= EPS_NORM {
        return Err(Error::DegenerateGradient { norm: npc });
    }
    let gate = cosine(&g, &gpc)?;
    let before = problem.total_loss(theta);
    let after = problem.total_loss(&stepped(theta, t, &gpc)?);
    let q = vec![
        ("cos_g_gpc", gate),
        ("norm_ratio", npc / norm(&g)),
        ("loss_before", before),
        ("loss_after", after),
    ];
    Ok(if gate >= 0.5 {
        Verdict::checked(before - after, q)
    } else {
        Verdict::skipped(Status::NotApplicable, q)
    })
}

/// Per-step record of a PCGrad-SGD run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// `|g_k|²` of the summed gradient at steps `0..K`.
    pub grad_norm_sq: Vec<f64>,
    /// Smallest pairwise task cosine at each step, `None` if every pair is degenerate.
    pub cos_min: Vec<Option<f64>>,
    /// Summed losses at `θ_0..θ_K`.
    pub losses: Vec<f64>,
}

pub fn pcgrad_sgd_trajectory<P: MultiTaskProblem + ?Sized>(
    problem: &P,
    theta0: &Vector,
    t: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut theta = theta0.clone();
    let mut out = Trajectory {
        losses: vec![problem.total_loss(&theta)],
        ..Default::default()
    };
    for k in 0..steps {
        let grads = problem.task_gradients(&theta);
        out.grad_norm_sq.push(grads.sum().norm_squared());
        let mut cmin: Option<f64> = None;
        for i in 0..grads.len() {
            for j in (i + 1)..grads.len() {
                if let Ok(c) = cosine(grads.get(i), grads.get(j)) {
                    cmin = Some(cmin.map_or(c, |m| m.min(c)));
                }
            }
        }
        out.cos_min.push(cmin);
        let update = crate::surgery::pcgrad_at(&grads, seed, k as u64)?.update;
        theta = stepped(&theta, t, &update)?;
        theta.check_finite()?;
        out.losses.push(problem.total_loss(&theta));
    }
    Ok(out)
}

/// Asserts `min_k |g_k|² ≤ 2 (L(θ_0) - L*) / (K (1 - α²) t)` with `α` the
/// smallest recorded cosine. The margin is relative to the right-hand side.
pub fn check_proposition_nonconvex(traj: &Trajectory, t: f64, l_star: f64) -> Result<Verdict> {
    let k = traj.grad_norm_sq.len();
    if k == 0 || traj.losses.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    let alpha = traj.cos_min.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let alpha = if alpha.is_finite() { alpha } else { 0.0 };
    let lhs = traj.grad_norm_sq.iter().copied().fold(f64::INFINITY, f64::min);
    let excess = traj.losses[0] - l_star;
    let mut q = vec![("alpha", alpha), ("min_grad_norm_sq", lhs), ("steps", k as f64), ("excess", excess)];
    if alpha <= -1.0 {
        return Ok(Verdict::skipped(Status::Stalled, q));
    }
    let rhs = 2.0 * excess / (k as f64 * (1.0 - alpha * alpha) * t);
    q.push(("bound", rhs));
    let margin = if rhs > 0.0 {
        (rhs - lhs) / rhs
    } else {
        rhs - lhs
    };
    Ok(Verdict::checked(margin, q))
}

/// `∇L(θ)ᵀ (Σ A_i) ∇L(θ)`, the line-integrated curvature, which on a
/// quadratic does not depend on `theta_prime`.
pub fn curvature_integral_quadratic(problem: &QuadraticProblem, theta: &Vector, theta_prime: &Vector) -> Result<f64> {
    if !problem.is_pure_quadratic() {
        return Err(Error::Unsupported("closed-form curvature needs an unperturbed quadratic"));
    }
    theta_prime.check_dim(theta.dim())?;
    let g = problem.task_gradients(theta).sum();
    Ok(problem.hessian_form(&g))
}

/// Taylor-remainder estimate against the exact `Δᵀ(ΣA)Δ` for `Δ = -t ∇L(θ)`.
/// Returns `(estimate, exact, t² H)`.
pub fn curvature_estimate_vs_exact(problem: &QuadraticProblem, theta: &Vector, t: f64) -> Result<(f64, f64, f64)> {
    let g = problem.task_gradients(theta).sum();
    let delta = g.scaled(-t);
    let next = theta.add(&delta)?;
    let est = taylor_curvature(problem.total_loss(theta), problem.total_loss(&next), dot(&g, &delta)?);
    let exact = problem.hessian_form(&delta);
    let h = curvature_integral_quadratic(problem, theta, &next)?;
    Ok((est, exact, t * t * h))
}
