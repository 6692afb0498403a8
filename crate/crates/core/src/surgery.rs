//! Gradient surgery: the projected-conflicting-gradient update, its two-task
//! closed form, the direction/magnitude ablations, and the per-iteration
//! conflict / magnitude / curvature diagnostics.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{keyed_rng, Domain};
use crate::vecmath::{cosine, dot, norm, Vector, EPS_NORM};

/// Per-task gradients at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradients {
    grads: Vec<Vector>,
    task_ids: Vec<String>,
}

impl TaskGradients {
    pub fn new(grads: Vec<Vector>) -> Result<Self> {
        let ids = (0..grads.len()).map(|i| format!("task_{i}")).collect();
        Self::with_ids(grads, ids)
    }

    pub fn with_ids(grads: Vec<Vector>, task_ids: Vec<String>) -> Result<Self> {
        let first = grads.first().ok_or(Error::Empty("task gradients"))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::Empty("gradient vector"));
        }
        for g in &grads {
            g.check_dim(dim)?;
            g.check_finite()?;
        }
        if task_ids.len() != grads.len() {
            return Err(Error::DimensionMismatch {
                expected: grads.len(),
                found: task_ids.len(),
            });
        }
        Ok(TaskGradients { grads, task_ids })
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grads[0].dim()
    }

    pub fn grads(&self) -> &[Vector] {
        &self.grads
    }

    pub fn get(&self, i: usize) -> &Vector {
        &self.grads[i]
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    /// The plain multi-task gradient `g = sum_i g_i`.
    pub fn sum(&self) -> Vector {
        Vector::sum(&self.grads).expect("validated at construction")
    }

    pub fn scaled(&self, c: f64) -> TaskGradients {
        TaskGradients {
            grads: self.grads.iter().map(|g| g.scaled(c)).collect(),
            task_ids: self.task_ids.clone(),
        }
    }
}

/// One visit of task `j` while projecting task `i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStat {
    pub i: usize,
    pub j: usize,
    /// Cosine between the *original* gradients; `None` if either is degenerate.
    pub cos: Option<f64>,
    /// Whether the running `g_i^PC` conflicted with `g_j` at this visit.
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurgeryOutcome {
    pub modified: Vec<Vector>,
    pub update: Vector,
    pub pair_stats: Vec<PairStat>,
    /// `order_used[i]` is the visiting order of the other tasks for task `i`.
    pub order_used: Vec<Vec<usize>>,
    /// `(i, j)` with `cos(g_i^PC, g_j) < -RESIDUAL_COS`: conflicts left after
    /// every projection of task `i`, possible with three or more tasks.
    pub residual_conflicts: Vec<(usize, usize)>,
}

/// Cosine below `-RESIDUAL_COS` counts as a residual conflict; smaller
/// magnitudes are rounding left by an exact projection.
pub const RESIDUAL_COS: f64 = 1e-12;

/// Visiting order of the tasks other than `task`, Fisher-Yates shuffled from a
/// stream keyed by `(seed, iteration, task)`.
pub fn task_order(seed: u64, iteration: u64, task: usize, num_tasks: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_tasks).filter(|&j| j != task).collect();
    let mut rng = keyed_rng(seed, Domain::TaskOrder, iteration, task as u64);
    order.shuffle(&mut rng);
    order
}

/// Projected conflicting gradients with task order drawn from `seed`.
pub fn pcgrad(grads: &TaskGradients, seed: u64) -> Result<SurgeryOutcome> {
    pcgrad_at(grads, seed, 0)
}

/// As [`pcgrad`], with the task-order stream additionally keyed by the
/// optimizer iteration.
pub fn pcgrad_at(grads: &TaskGradients, seed: u64, iteration: u64) -> Result<SurgeryOutcome> {
    let n = grads.len();
    let norms_sq: Vec<f64> = grads.grads().iter().map(|g| g.norm_squared()).collect();
    let usable: Vec<bool> = norms_sq.iter().map(|s| s.sqrt() > EPS_NORM).collect();

    let mut modified = Vec::with_capacity(n);
    let mut pair_stats = Vec::with_capacity(n * n.saturating_sub(1));
    let mut order_used = Vec::with_capacity(n);

    for i in 0..n {
        let order = task_order(seed, iteration, i, n);
        let mut gi = grads.get(i).clone();
        for &j in &order {
            let gj = grads.get(j);
            let cos = if usable[i] && usable[j] {
                Some(cosine(grads.get(i), gj)?)
            } else {
                None
            };
            let mut projected = false;
            if usable[j] {
                let d = dot(&gi, gj)?;
                if d < 0.0 {
                    gi.axpy(-d / norms_sq[j], gj)?;
                    projected = true;
                }
            }
            pair_stats.push(PairStat { i, j, cos, projected });
        }
        modified.push(gi);
        order_used.push(order);
    }

    let mut residual_conflicts = Vec::new();
    for (i, gi) in modified.iter().enumerate() {
        if norm(gi) <= EPS_NORM {
            continue;
        }
        for j in (0..n).filter(|&j| j != i && usable[j]) {
            if cosine(gi, grads.get(j))? < -RESIDUAL_COS {
                residual_conflicts.push((i, j));
            }
        }
    }
    let update = Vector::sum(&modified)?;
    Ok(SurgeryOutcome {
        modified,
        update,
        pair_stats,
        order_used,
        residual_conflicts,
    })
}

/// Two-task PCGrad update written directly in terms of the angle and norm ratio:
/// `(1 - cos/R) g1 + (1 - cos R) g2` when the gradients conflict, `g1 + g2` otherwise,
/// with `R = |g1| / |g2|`.
pub fn two_task_closed_form(g1: &Vector, g2: &Vector) -> Result<Vector> {
    let cos = cosine(g1, g2)?;
    if cos >= 0.0 {
        return g1.add(g2);
    }
    let r = norm(g1) / norm(g2);
    let mut out = g1.scaled(1.0 - cos / r);
    out.axpy(1.0 - cos * r, g2)?;
    Ok(out)
}

/// `2 |g1| |g2| / (|g1|^2 + |g2|^2)`, in `(0, 1]`.
pub fn magnitude_similarity(g1: &Vector, g2: &Vector) -> Result<f64> {
    g1.check_dim(g2.dim())?;
    let (n1, n2) = (norm(g1), norm(g2));
    for n in [n1, n2] {
        if n <= EPS_NORM {
            return Err(Error::DegenerateGradient { norm: n });
        }
    }
    Ok((2.0 * n1 * n2 / (n1 * n1 + n2 * n2)).min(1.0))
}

/// `(1 - cos^2) |g1 - g2|^2 / |g1 + g2|^2`; undefined at exact opposition.
pub fn curvature_bounding_measure(g1: &Vector, g2: &Vector) -> Result<f64> {
    let cos = cosine(g1, g2)?;
    let sum = g1.add(g2)?;
    let sum_norm = norm(&sum);
    if sum_norm <= EPS_NORM {
        return Err(Error::DegenerateSum { norm: sum_norm });
    }
    let diff = g1.sub(g2)?;
    Ok((1.0 - cos * cos) * diff.norm_squared() / sum.norm_squared())
}

/// Ablation: PCGrad direction, rescaled to the plain gradient's norm.
pub fn direction_only_variant(grads: &TaskGradients, seed: u64) -> Result<Vector> {
    direction_only_at(grads, seed, 0)
}

/// Ablation: plain gradient direction, rescaled to the PCGrad update's norm.
pub fn magnitude_only_variant(grads: &TaskGradients, seed: u64) -> Result<Vector> {
    magnitude_only_at(grads, seed, 0)
}

fn ablation_norms(grads: &TaskGradients, seed: u64, iteration: u64) -> Result<(Vector, Vector, f64, f64)> {
    let pc = pcgrad_at(grads, seed, iteration)?.update;
    let plain = grads.sum();
    let (npc, nplain) = (norm(&pc), norm(&plain));
    for n in [npc, nplain] {
        if n <= EPS_NORM {
            return Err(Error::DegenerateGradient { norm: n });
        }
    }
    Ok((pc, plain, npc, nplain))
}

pub fn direction_only_at(grads: &TaskGradients, seed: u64, iteration: u64) -> Result<Vector> {
    let (pc, _, npc, nplain) = ablation_norms(grads, seed, iteration)?;
    Ok(pc.scaled(nplain / npc))
}

pub fn magnitude_only_at(grads: &TaskGradients, seed: u64, iteration: u64) -> Result<Vector> {
    let (_, plain, npc, nplain) = ablation_norms(grads, seed, iteration)?;
    Ok(plain.scaled(npc / nplain))
}

/// How per-task gradients are combined into the update handed to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plain,
    Pcgrad,
    DirectionOnly,
    MagnitudeOnly,
}

impl Method {
    /// Combined update at `iteration`. The ablations fall back to the PCGrad
    /// update when either norm they rescale by vanishes.
    pub fn update(self, grads: &TaskGradients, seed: u64, iteration: u64) -> Result<Vector> {
        let fallback = |r: Result<Vector>| match r {
            Err(Error::DegenerateGradient { .. }) => Ok(pcgrad_at(grads, seed, iteration)?.update),
            other => other,
        };
        match self {
            Method::Plain => Ok(grads.sum()),
            Method::Pcgrad => Ok(pcgrad_at(grads, seed, iteration)?.update),
            Method::DirectionOnly => fallback(direction_only_at(grads, seed, iteration)),
            Method::MagnitudeOnly => fallback(magnitude_only_at(grads, seed, iteration)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Plain => "plain",
            Method::Pcgrad => "pcgrad",
            Method::DirectionOnly => "direction_only",
            Method::MagnitudeOnly => "magnitude_only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Method::Plain),
            "pcgrad" => Ok(Method::Pcgrad),
            "direction_only" => Ok(Method::DirectionOnly),
            "magnitude_only" => Ok(Method::MagnitudeOnly),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Scaled second-order Taylor remainder `2 (L(θ') - L(θ) - ∇L(θ)·(θ' - θ))`.
///
/// On a quadratic with Hessian `A` this is exactly `Δᵀ A Δ` for `Δ = θ' - θ`.
pub fn taylor_curvature(loss_before: f64, loss_after: f64, grad_dot_step: f64) -> f64 {
    2.0 * (loss_after - loss_before - grad_dot_step)
}

/// Conflict / magnitude / curvature diagnostics for one iteration.
///
/// Pair vectors are indexed over unordered non-degenerate pairs `i < j`, in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriadSample {
    pub iteration: u64,
    pub pairs: Vec<(usize, usize)>,
    pub cos_phi: Vec<f64>,
    pub phi_similarity: Vec<f64>,
    pub xi: Vec<Option<f64>>,
    pub cond_a_flag: Vec<bool>,
    pub xi_le_one_flag: Vec<bool>,
    pub degenerate_pairs: Vec<(usize, usize)>,
    pub pct_conflicting: f64,
    pub curvature_est: f64,
}

/// Scalar reductions of a [`TriadSample`], as written to telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriadSummary {
    pub cos_min: f64,
    pub cos_mean: f64,
    pub pct_conflicting: f64,
    pub phi_min: f64,
    pub curvature_est: f64,
    pub cond_a_frac: f64,
    pub xi_le1_frac: f64,
}

impl TriadSample {
    pub fn summary(&self) -> TriadSummary {
        let n = self.cos_phi.len();
        let frac = |flags: &[bool]| {
            if n == 0 {
                0.0
            } else {
                flags.iter().filter(|&&f| f).count() as f64 / n as f64
            }
        };
        let (cos_min, cos_mean, phi_min) = if n == 0 {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                self.cos_phi.iter().copied().fold(f64::INFINITY, f64::min),
                self.cos_phi.iter().sum::<f64>() / n as f64,
                self.phi_similarity.iter().copied().fold(f64::INFINITY, f64::min),
            )
        };
        TriadSummary {
            cos_min,
            cos_mean,
            pct_conflicting: self.pct_conflicting,
            phi_min,
            curvature_est: self.curvature_est,
            cond_a_frac: frac(&self.cond_a_flag),
            xi_le1_frac: frac(&self.xi_le_one_flag),
        }
    }
}

pub fn triad_diagnostics(
    grads: &TaskGradients,
    loss_before: f64,
    loss_after: f64,
    grad_dot_step: f64,
    iteration: u64,
) -> TriadSample {
    let n = grads.len();
    let mut sample = TriadSample {
        iteration,
        pairs: Vec::new(),
        cos_phi: Vec::new(),
        phi_similarity: Vec::new(),
        xi: Vec::new(),
        cond_a_flag: Vec::new(),
        xi_le_one_flag: Vec::new(),
        degenerate_pairs: Vec::new(),
        pct_conflicting: 0.0,
        curvature_est: taylor_curvature(loss_before, loss_after, grad_dot_step),
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let (gi, gj) = (grads.get(i), grads.get(j));
            let (Ok(cos), Ok(phi)) = (cosine(gi, gj), magnitude_similarity(gi, gj)) else {
                sample.degenerate_pairs.push((i, j));
                continue;
            };
            let xi = curvature_bounding_measure(gi, gj).ok();
            sample.pairs.push((i, j));
            sample.cos_phi.push(cos);
            sample.phi_similarity.push(phi);
            sample.cond_a_flag.push(cos <= -phi);
            sample.xi_le_one_flag.push(xi.is_some_and(|x| x <= 1.0));
            sample.xi.push(xi);
        }
    }
    let valid = sample.cos_phi.len();
    if valid > 0 {
        let conflicting = sample.cos_phi.iter().filter(|&&c| c < 0.0).count();
        sample.pct_conflicting = conflicting as f64 / valid as f64;
    }
    sample
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_conflict_is_recorded_not_removed() {
        let g = TaskGradients::new(vec![
            Vector::from(vec![1.0, 0.0, 0.0]),
            Vector::from(vec![-1.0, 2.0, 0.0]),
            Vector::from(vec![-1.0, -1.0, 1.0]),
        ])
        .unwrap();
        for it in 0..8 {
            let out = pcgrad_at(&g, 0, it).unwrap();
            // whichever task 0 visits first conflicts again after the second projection
            assert!(out.residual_conflicts.iter().any(|&(i, j)| i == 0 && j == out.order_used[0][0]));
        }
    }

    #[test]
    fn two_tasks_leave_no_residual_conflict() {
        let g = TaskGradients::new(vec![Vector::from(vec![3.0, 1.0]), Vector::from(vec![-2.0, 0.5])]).unwrap();
        assert!(pcgrad(&g, 1).unwrap().residual_conflicts.is_empty());
    }
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    fn tg(gs: &[&[f64]]) -> TaskGradients {
        TaskGradients::new(gs.iter().map(|g| v(g)).collect()).unwrap()
    }

    #[test]
    fn non_conflicting_gradients_pass_through() {
        let out = pcgrad(&tg(&[&[1.0, 0.0], &[0.0, 1.0]]), 0).unwrap();
        assert_eq!(out.modified, vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]);
        assert_eq!(out.update, v(&[1.0, 1.0]));
        assert!(out.pair_stats.iter().all(|p| !p.projected));
    }

    #[test]
    fn conflicting_pair_is_projected_both_ways() {
        let out = pcgrad(&tg(&[&[1.0, 0.0], &[-1.0, 1.0]]), 3).unwrap();
        assert_eq!(out.modified[0], v(&[0.5, 0.5]));
        assert_eq!(out.modified[1], v(&[0.0, 1.0]));
        assert_eq!(out.update, v(&[0.5, 1.5]));
        assert!(out.pair_stats.iter().all(|p| p.projected));
    }

    #[test]
    fn exact_opposition_cancels() {
        let out = pcgrad(&tg(&[&[1.0, 0.0], &[-1.0, 0.0]]), 1).unwrap();
        assert_eq!(out.update, v(&[0.0, 0.0]));
    }

    #[test]
    fn zero_gradient_passes_through_and_is_skipped() {
        let out = pcgrad(&tg(&[&[0.0, 0.0], &[-1.0, 1.0], &[1.0, 0.0]]), 5).unwrap();
        assert_eq!(out.modified[0], v(&[0.0, 0.0]));
        // task 1 only projects against task 2
        assert_eq!(out.modified[1], v(&[0.0, 1.0]));
        for p in &out.pair_stats {
            if p.j == 0 || p.i == 0 {
                assert!(!p.projected);
                assert!(p.cos.is_none());
            }
        }
    }

    #[test]
    fn rejects_mismatched_and_non_finite() {
        assert!(TaskGradients::new(vec![v(&[1.0, 0.0]), v(&[1.0])]).is_err());
        assert!(TaskGradients::new(vec![v(&[1.0, f64::NAN])]).is_err());
        assert!(TaskGradients::new(vec![]).is_err());
    }

    #[test]
    fn task_order_is_a_permutation_of_the_others() {
        for i in 0..6 {
            let mut o = task_order(11, 4, i, 6);
            assert_eq!(o.len(), 5);
            o.sort();
            let expected: Vec<usize> = (0..6).filter(|&j| j != i).collect();
            assert_eq!(o, expected);
        }
    }

    #[test]
    fn task_order_is_roughly_uniform() {
        // first-visited task for task 0 out of 4: each of 1, 2, 3 about 1/3
        let mut counts = [0usize; 4];
        for it in 0..3000 {
            counts[task_order(99, it, 0, 4)[0]] += 1;
        }
        for &c in &counts[1..] {
            assert!((800..1200).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn closed_form_examples() {
        let r = two_task_closed_form(&v(&[1.0, 0.0]), &v(&[-1.0, 1.0])).unwrap();
        assert_relative_eq!(r[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r[1], 1.5, epsilon = 1e-15);
        assert_eq!(
            two_task_closed_form(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            v(&[1.0, 1.0])
        );
        assert_eq!(
            two_task_closed_form(&v(&[1.0, 0.0]), &v(&[2.0, 0.0])).unwrap(),
            v(&[3.0, 0.0])
        );
        assert!(two_task_closed_form(&v(&[0.0, 0.0]), &v(&[2.0, 0.0])).is_err());
    }

    #[test]
    fn magnitude_similarity_examples() {
        assert_eq!(magnitude_similarity(&v(&[3.0, 4.0]), &v(&[0.0, -5.0])).unwrap(), 1.0);
        assert_relative_eq!(
            magnitude_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap(),
            0.6,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            magnitude_similarity(&v(&[1.0, 0.0]), &v(&[2.0, 0.0])).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert!(magnitude_similarity(&v(&[0.0, 0.0]), &v(&[2.0, 0.0])).is_err());
    }

    #[test]
    fn bounding_measure_examples() {
        assert_eq!(
            curvature_bounding_measure(&v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap(),
            0.0
        );
        assert_relative_eq!(
            curvature_bounding_measure(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            curvature_bounding_measure(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])),
            Err(Error::DegenerateSum { .. })
        ));
    }

    #[test]
    fn ablation_examples() {
        let agree = tg(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(direction_only_variant(&agree, 0).unwrap(), v(&[1.0, 1.0]));
        assert_eq!(magnitude_only_variant(&agree, 0).unwrap(), v(&[1.0, 1.0]));

        let conflict = tg(&[&[1.0, 0.0], &[-1.0, 1.0]]);
        let d = direction_only_variant(&conflict, 0).unwrap();
        let s = 2.5f64.sqrt();
        assert_relative_eq!(d[0], 0.5 / s, epsilon = 1e-15);
        assert_relative_eq!(d[1], 1.5 / s, epsilon = 1e-15);
        let m = magnitude_only_variant(&conflict, 0).unwrap();
        assert_eq!(m[0], 0.0);
        assert_relative_eq!(m[1], s, epsilon = 1e-15);

        let opposed = tg(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!(direction_only_variant(&opposed, 0).is_err());
        assert!(magnitude_only_variant(&opposed, 0).is_err());
        assert_eq!(Method::DirectionOnly.update(&opposed, 0, 0).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Plain, Method::Pcgrad, Method::DirectionOnly, Method::MagnitudeOnly] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("mgda".parse::<Method>().is_err());
    }

    #[test]
    fn triad_linear_loss_has_zero_curvature() {
        let s = triad_diagnostics(&tg(&[&[1.0, 0.0], &[0.0, 1.0]]), 3.0, 1.0, -2.0, 1);
        assert_eq!(s.curvature_est, 0.0);
        assert_eq!(s.pct_conflicting, 0.0);
        assert_eq!(s.cond_a_flag, vec![false]);
    }

    #[test]
    fn triad_identity_quadratic_curvature() {
        // L = |θ|²/2, θ = [1,0] -> [0,0]: ∇L·Δ = -1
        let s = triad_diagnostics(&tg(&[&[1.0, 0.0]]), 0.5, 0.0, -1.0, 7);
        assert_eq!(s.curvature_est, 1.0);
        assert_eq!(s.iteration, 7);
        assert!(s.pairs.is_empty());
    }

    #[test]
    fn triad_flags_and_degenerate_pairs() {
        // pairs: (0,1) cos=-1/sqrt2 phi=2*1*sqrt2/3 ≈ 0.943 -> not cond a
        //        (0,2) degenerate, (1,2) degenerate
        let s = triad_diagnostics(&tg(&[&[1.0, 0.0], &[-1.0, 1.0], &[0.0, 0.0]]), 0.0, 0.0, 0.0, 1);
        assert_eq!(s.pairs, vec![(0, 1)]);
        assert_eq!(s.degenerate_pairs, vec![(0, 2), (1, 2)]);
        assert_eq!(s.pct_conflicting, 1.0);
        assert_eq!(s.cond_a_flag, vec![false]);

        // strongly opposed, unequal norms: cos=-1 <= -phi=-0.6
        let s = triad_diagnostics(&tg(&[&[1.0, 0.0], &[-3.0, 0.0]]), 0.0, 0.0, 0.0, 1);
        assert_eq!(s.cond_a_flag, vec![true]);
        assert_eq!(s.xi, vec![Some(0.0)]);
        assert_eq!(s.xi_le_one_flag, vec![true]);
        let sum = s.summary();
        assert_eq!(sum.cos_min, -1.0);
        assert_eq!(sum.cond_a_frac, 1.0);
    }

    fn task_set() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..8, 2usize..6).prop_flat_map(|(dim, n)| {
            prop::collection::vec(prop::collection::vec(-10.0..10.0f64, dim), n)
        })
    }

    proptest! {
        #[test]
        fn update_is_sum_and_norms_do_not_grow(gs in task_set(), seed in any::<u64>()) {
            let grads = TaskGradients::new(gs.into_iter().map(Vector::from).collect()).unwrap();
            let out = pcgrad(&grads, seed).unwrap();
            let sum = Vector::sum(&out.modified).unwrap();
            let scale = out.modified.iter().map(norm).sum::<f64>().max(1e-300);
            prop_assert!(norm(&out.update.sub(&sum).unwrap()) <= 1e-12 * scale);
            for (m, g) in out.modified.iter().zip(grads.grads()) {
                prop_assert!(norm(m) <= norm(g) * (1.0 + 1e-12));
            }
            // deterministic
            prop_assert_eq!(pcgrad(&grads, seed).unwrap(), out);
        }

        #[test]
        fn each_projection_orthogonalizes_against_its_target(gs in task_set(), seed in any::<u64>()) {
            let grads = TaskGradients::new(gs.into_iter().map(Vector::from).collect()).unwrap();
            let out = pcgrad(&grads, seed).unwrap();
            // replay the loop and check orthogonality right after each projection
            for (i, order) in out.order_used.iter().enumerate() {
                let mut gi = grads.get(i).clone();
                for &j in order {
                    let gj = grads.get(j);
                    if norm(gj) <= EPS_NORM { continue; }
                    let d = dot(&gi, gj).unwrap();
                    if d < 0.0 {
                        gi.axpy(-d / gj.norm_squared(), gj).unwrap();
                        let after = dot(&gi, gj).unwrap();
                        prop_assert!(after.abs() <= 1e-9 * norm(grads.get(i)) * norm(gj));
                    }
                }
                prop_assert_eq!(&gi, &out.modified[i]);
            }
        }

        #[test]
        fn magnitude_similarity_in_unit_interval(
            a in prop::collection::vec(-10.0..10.0f64, 3),
            b in prop::collection::vec(-10.0..10.0f64, 3),
        ) {
            let (a, b) = (Vector::from(a), Vector::from(b));
            prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
            let phi = magnitude_similarity(&a, &b).unwrap();
            prop_assert!(phi > 0.0 && phi <= 1.0);
            let b_rescaled = b.scaled(norm(&a) / norm(&b));
            prop_assert!((magnitude_similarity(&a, &b_rescaled).unwrap() - 1.0).abs() <= 1e-12);
        }
    }
}
