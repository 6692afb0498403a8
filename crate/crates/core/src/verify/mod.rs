//! Randomized verification of the descent, comparison and convergence
//! guarantees on generated problem instances.
//!
//! Each sweep draws trial `i` from a stream keyed by `(seed, sweep, i)`, so
//! reports are identical whether trials run serially or in parallel.

mod checks;
mod heavy_ball;

pub use checks::{
    check_corollary_ntasks, check_proposition_nonconvex, check_theorem1_decrease, check_theorem2_sufficient,
    check_theorem3_iff, compare_one_step, curvature_estimate_vs_exact, curvature_integral_quadratic,
    pcgrad_sgd_trajectory, theorem3_branch, Branch, Comparison, Status, Trajectory, Verdict, TOLERANCE,
};
pub use heavy_ball::{
    check_heavyball_contraction, iteration_spectral_radius, pcgrad_weights, schedule, AlphaForm, HeavyBallRun,
    HeavyBallStep, Schedule,
};

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::{Didactic2d, MultiTaskProblem, QuadraticFamily, QuadraticProblem, QuadraticTask, LOSS_FLOOR};
use crate::seeding::{keyed_rng, trial_seed, Domain};
use crate::surgery::{pcgrad, two_task_closed_form, TaskGradients};
use crate::vecmath::{dot, norm, project_out, Vector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub index: u64,
    pub inputs_hash: u64,
    pub quantities: Vec<(&'static str, f64)>,
    pub margin: Option<f64>,
    pub applicable: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub theorem_id: String,
    pub seed: u64,
    pub trials: u64,
    /// Trials whose preconditions held and whose guarantee was asserted.
    pub applicable: u64,
    /// Asserted trials with margin below `-tolerance`.
    pub violations: u64,
    /// Smallest margin among asserted trials.
    pub worst_margin: Option<f64>,
    pub tolerance: f64,
    pub stats: BTreeMap<String, f64>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
}

impl TheoremReport {
    fn from_records(theorem_id: &str, seed: u64, tolerance: f64, records: Vec<TrialRecord>) -> Self {
        let applicable = records.iter().filter(|r| r.applicable).count() as u64;
        let violations = records.iter().filter(|r| !r.pass).count() as u64;
        let worst_margin = records.iter().filter_map(|r| r.margin).reduce(f64::min);
        TheoremReport {
            theorem_id: theorem_id.to_string(),
            seed,
            trials: records.len() as u64,
            applicable,
            violations,
            worst_margin,
            tolerance,
            stats: BTreeMap::new(),
            records,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn stat(&mut self, key: &str, value: f64) {
        self.stats.insert(key.to_string(), value);
    }

    /// Fraction of records carrying `name` whose value satisfies `pred`.
    fn quantity_fraction(&self, name: &str, pred: impl Fn(f64) -> bool) -> f64 {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.quantities.iter().find(|(k, _)| *k == name).map(|&(_, v)| v))
            .collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        vals.iter().filter(|&&v| pred(v)).count() as f64 / vals.len() as f64
    }

    /// One line per report, as printed by the CLI and acceptance suite.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<24} trials={:<7} applicable={:<7} violations={:<5} worst_margin={}",
            self.theorem_id,
            self.trials,
            self.applicable,
            self.violations,
            self.worst_margin.map_or("n/a".to_string(), |m| format!("{m:.3e}"))
        )
    }
}

fn hash_inputs(seed: u64, theta: &Vector, extra: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    seed.hash(&mut h);
    for x in theta.iter().chain(extra) {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

fn record(index: u64, inputs_hash: u64, verdict: &Verdict) -> TrialRecord {
    TrialRecord {
        index,
        inputs_hash,
        quantities: verdict.quantities.clone(),
        margin: verdict.margin,
        applicable: verdict.applicable(),
        pass: verdict.passed(),
    }
}

fn inapplicable(index: u64, inputs_hash: u64, reason: &'static str) -> TrialRecord {
    TrialRecord {
        index,
        inputs_hash,
        quantities: vec![(reason, 1.0)],
        margin: None,
        applicable: false,
        pass: true,
    }
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vector {
    Vector::from((0..n).map(|_| radius * rng.random_range(-1.0..=1.0)).collect::<Vec<_>>())
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Trial counts and instance distributions for the sweep suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub seed: u64,
    pub theorem1_instances: u64,
    pub theorem1_steps: usize,
    pub theorem23_trials: u64,
    pub corollary_trials: u64,
    pub proposition_seeds: u64,
    pub proposition_steps: usize,
    pub didactic_steps: usize,
    pub heavyball_instances: u64,
    pub heavyball_steps: usize,
    pub closed_form_trials: u64,
    pub projection_trials: u64,
    pub curvature_trials: u64,
    pub parallel: bool,
}

impl SweepConfig {
    pub fn new(seed: u64) -> Self {
        SweepConfig {
            seed,
            theorem1_instances: 1000,
            theorem1_steps: 50,
            theorem23_trials: 100_000,
            corollary_trials: 10_000,
            proposition_seeds: 100,
            proposition_steps: 500,
            didactic_steps: 20_000,
            heavyball_instances: 100,
            heavyball_steps: 500,
            closed_form_trials: 10_000,
            projection_trials: 100_000,
            curvature_trials: 1000,
            parallel: true,
        }
    }

    /// Sets every sweep's trial count to `n`.
    pub fn with_trials(mut self, n: u64) -> Self {
        self.theorem1_instances = n;
        self.theorem23_trials = n;
        self.corollary_trials = n;
        self.proposition_seeds = n;
        self.heavyball_instances = n;
        self.closed_form_trials = n;
        self.projection_trials = n;
        self.curvature_trials = n;
        self
    }

    fn run<T: Send>(&self, n: u64, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
        if self.parallel {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }
}

mod sweep_id {
    pub const THEOREM1: u64 = 1;
    pub const THEOREM23: u64 = 2;
    pub const COROLLARY: u64 = 3;
    pub const PROPOSITION: u64 = 4;
    pub const HEAVYBALL: u64 = 5;
    pub const CLOSED_FORM: u64 = 6;
    pub const PROJECTION: u64 = 7;
    pub const CURVATURE: u64 = 8;
}

/// Random two-task (or `tasks`-task) convex quadratic in `2..=20` dimensions,
/// eigenvalues in `[0, 10]`, centers in `[-1, 1]^n`, with `θ` in `[-2, 2]^n`.
fn random_convex_instance(ts: u64, tasks: usize) -> Result<(QuadraticProblem, Vector, ChaCha8Rng)> {
    let mut rng = keyed_rng(ts, Domain::Init, 0, 0);
    let n = rng.random_range(2..=20);
    let problem = QuadraticFamily::new(n, tasks, 0.0, 10.0).generate(ts)?;
    let theta = uniform_vector(&mut rng, n, 2.0);
    Ok((problem, theta, rng))
}

/// Per-step descent bound along 50-step PCGrad-SGD runs with `t = 1/L`.
pub fn sweep_theorem1(cfg: &SweepConfig) -> Result<TheoremReport> {
    let per_instance = cfg.run(cfg.theorem1_instances, |i| -> Result<Vec<TrialRecord>> {
        let ts = trial_seed(cfg.seed, sweep_id::THEOREM1, i);
        let (p, mut theta, _) = random_convex_instance(ts, 2)?;
        let t = 1.0 / p.metadata().lipschitz.expect("quadratics carry L");
        let mut out = Vec::with_capacity(cfg.theorem1_steps);
        for k in 0..cfg.theorem1_steps {
            let v = check_theorem1_decrease(&p, &theta, t)?;
            let mut r = record(i, hash_inputs(ts, &theta, &[t, k as f64]), &v);
            r.quantities.push(("step", k as f64));
            out.push(r);
            let upd = pcgrad(&p.task_gradients(&theta), 0)?.update;
            theta.axpy(-t, &upd)?;
        }
        Ok(out)
    });
    let records: Vec<TrialRecord> = per_instance.into_iter().collect::<Result<Vec<_>>>()?.concat();
    let instances = cfg.theorem1_instances;
    let mut rep = TheoremReport::from_records("theorem1", cfg.seed, TOLERANCE, records);
    rep.stat("checked_steps", rep.trials as f64);
    rep.stat("conflicting_step_frac", rep.quantity_fraction("cos", |c| c < 0.0));
    rep.trials = instances;
    Ok(rep)
}

/// One `(instance, θ, t)` draw for the comparison sweeps. A quarter are
/// built with `A_2 = s A_1` and `θ` near the segment between the centers,
/// where the two gradients nearly oppose each other.
fn comparison_trial(ts: u64) -> Result<(QuadraticProblem, Vector, f64)> {
    let mut rng = keyed_rng(ts, Domain::Init, 1, 0);
    let constructed = rng.random_range(0..4) == 0;
    let (p, theta) = if constructed {
        let n = rng.random_range(2..=10);
        let base = QuadraticFamily::new(n, 1, 0.1, 10.0).generate(ts)?;
        let a1 = base.tasks()[0].a.clone();
        let s = log_uniform(&mut rng, 0.05, 20.0);
        let c1 = uniform_vector(&mut rng, n, 1.0);
        let c2 = uniform_vector(&mut rng, n, 1.0);
        let lam = rng.random_range(0.0..=1.0);
        let mut theta = c1.scaled(1.0 - lam).add(&c2.scaled(lam))?;
        let jitter = gaussian_vector(&mut rng, n).scaled(1e-2 * rng.random_range(0.0..=1.0));
        theta = theta.add(&jitter)?;
        let p = QuadraticProblem::new(vec![
            QuadraticTask::new(a1.clone(), c1)?,
            QuadraticTask::new(a1 * s, c2)?,
        ])?;
        (p, theta)
    } else {
        let (p, theta, _) = random_convex_instance(ts, 2)?;
        (p, theta)
    };
    let t = log_uniform(&mut rng, 1e-2, 1e2) / p.metadata().lipschitz.expect("quadratics carry L");
    Ok((p, theta, t))
}

/// One-step comparison sweeps. Returns the sufficient-condition report and
/// the two-branch report over the same trials.
pub fn sweep_theorem23(cfg: &SweepConfig) -> Result<(TheoremReport, TheoremReport)> {
    let pairs = cfg.run(cfg.theorem23_trials, |i| -> Result<(TrialRecord, TrialRecord)> {
        let ts = trial_seed(cfg.seed, sweep_id::THEOREM23, i);
        let (p, theta, t) = comparison_trial(ts)?;
        let h = hash_inputs(ts, &theta, &[t]);
        let degenerate = |e: Error| match e {
            Error::DegenerateGradient { .. } => Ok(inapplicable(i, h, "degenerate_gradient")),
            Error::DegenerateSum { .. } => Ok(inapplicable(i, h, "degenerate_sum")),
            other => Err(other),
        };
        let r2 = check_theorem2_sufficient(&p, &theta, t).map_or_else(degenerate, |v| Ok(record(i, h, &v)))?;
        let r3 = check_theorem3_iff(&p, &theta, t).map_or_else(degenerate, |v| Ok(record(i, h, &v)))?;
        Ok((r2, r3))
    });
    let (r2, r3): (Vec<_>, Vec<_>) = pairs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let mut t2 = TheoremReport::from_records("theorem2", cfg.seed, TOLERANCE, r2);
    let mut t3 = TheoremReport::from_records("theorem3", cfg.seed, TOLERANCE, r3);
    for rep in [&mut t2, &mut t3] {
        let degen = rep
            .records
            .iter()
            .filter(|r| r.quantities.iter().any(|(k, _)| k.starts_with("degenerate")))
            .count();
        rep.stat("degenerate_trials", degen as f64);
        let frac = cond_a_frac(&rep.records);
        rep.stat("cond_a_frac", frac);
    }
    // Necessity concerns the bounds, so it is recorded rather than asserted.
    let mut counts = [0u64; 3];
    let (mut improved_without_branch, mut surrogate_outside) = (0u64, 0u64);
    for r in &t3.records {
        let get = |k: &str| r.quantities.iter().find(|(q, _)| *q == k).map(|&(_, v)| v);
        let Some(branch) = get("branch") else { continue };
        counts[branch as usize] += 1;
        let (true_gap, sur) = (get("true_gap").unwrap(), get("surrogate_gap").unwrap());
        if branch == 0.0 && true_gap >= 0.0 {
            improved_without_branch += 1;
        }
        // the surrogate gap describes the projected step only when cos < 0
        if branch == 0.0 && sur >= 0.0 && get("cos").unwrap() < 0.0 {
            surrogate_outside += 1;
        }
    }
    t3.stat("branch_none", counts[0] as f64);
    t3.stat("branch_mild", counts[1] as f64);
    t3.stat("branch_strong", counts[2] as f64);
    t3.stat("no_branch_but_true_improvement", improved_without_branch as f64);
    t3.stat("surrogate_improvement_outside_branches", surrogate_outside as f64);
    Ok((t2, t3))
}

fn cond_a_frac(records: &[TrialRecord]) -> f64 {
    let flags: Vec<bool> = records
        .iter()
        .filter_map(|r| {
            let get = |k: &str| r.quantities.iter().find(|(q, _)| *q == k).map(|&(_, v)| v);
            Some(get("cos")? <= -get("phi")?)
        })
        .collect();
    if flags.is_empty() {
        return f64::NAN;
    }
    flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
}

/// Five-task convex quadratics, `t = 1/L`, cosine gate `cos(g, g_PC) ≥ ½`.
pub fn sweep_corollary(cfg: &SweepConfig) -> Result<TheoremReport> {
    let records = cfg.run(cfg.corollary_trials, |i| -> Result<TrialRecord> {
        let ts = trial_seed(cfg.seed, sweep_id::COROLLARY, i);
        let (p, theta, _) = random_convex_instance(ts, 5)?;
        let t = 1.0 / p.metadata().lipschitz.expect("quadratics carry L");
        let h = hash_inputs(ts, &theta, &[t]);
        match check_corollary_ntasks(&p, &theta, t, ts) {
            Ok(v) => Ok(record(i, h, &v)),
            Err(Error::DegenerateGradient { .. }) => Ok(inapplicable(i, h, "degenerate_gradient")),
            Err(e) => Err(e),
        }
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rep = TheoremReport::from_records("corollary1", cfg.seed, TOLERANCE, records);
    rep.stat("gate_frac", rep.applicable as f64 / rep.trials.max(1) as f64);
    rep.stat("pc_norm_exceeds_plain_frac", rep.quantity_fraction("norm_ratio", |r| r > 1.0));
    Ok(rep)
}

/// Stationarity bound along PCGrad-SGD runs with `t = 1/L` on nonconvex
/// instances: a shared-center quadratic plus a sinusoid that is stationary at
/// the center. The tasks then share a stationary point, so runs need not end
/// on a fully conflicting pair where the bound is vacuous.
pub fn sweep_proposition(cfg: &SweepConfig) -> Result<TheoremReport> {
    let records = cfg.run(cfg.proposition_seeds, |i| -> Result<TrialRecord> {
        let ts = trial_seed(cfg.seed, sweep_id::PROPOSITION, i);
        let mut fam = QuadraticFamily::new(5, 2, 0.1, 2.0);
        fam.shared_center = true;
        fam.perturbation = Some((0.2, 2.0));
        fam.perturbation_centered = true;
        let p = fam.generate(ts)?;
        let meta = p.metadata();
        let t = 1.0 / meta.lipschitz.expect("quadratics carry L");
        let mut rng = keyed_rng(ts, Domain::Init, 0, 0);
        let theta0 = uniform_vector(&mut rng, 5, 2.0);
        let traj = pcgrad_sgd_trajectory(&p, &theta0, t, cfg.proposition_steps, ts)?;
        let v = check_proposition_nonconvex(&traj, t, meta.loss_floor.expect("floor known"))?;
        let mut r = record(i, hash_inputs(ts, &theta0, &[t]), &v);
        // the Hessian is indefinite somewhere when amplitude·frequency² exceeds μ_min
        let mu_min = p.tasks().iter().map(|q| q.eigenvalues()[0]).fold(f64::INFINITY, f64::min);
        r.quantities.push(("nonconvex", if 0.2 * 4.0 > mu_min { 1.0 } else { 0.0 }));
        Ok(r)
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rep = TheoremReport::from_records("proposition1", cfg.seed, TOLERANCE, records);
    rep.stat("steps_per_run", cfg.proposition_steps as f64);
    let stalled = rep.records.iter().filter(|r| !r.applicable).count();
    rep.stat("stalled", stalled as f64);
    rep.stat("nonconvex_frac", rep.quantity_fraction("nonconvex", |x| x > 0.0));
    Ok(rep)
}

/// The same bound on one PCGrad-SGD run over the 2D landscape, with the
/// analytic floor as `L*` and `t = 1e-3`.
pub fn sweep_proposition_didactic(cfg: &SweepConfig) -> Result<TheoremReport> {
    let t = 1e-3;
    let theta0 = Vector::from(Didactic2d::INIT.to_vec());
    let traj = pcgrad_sgd_trajectory(&Didactic2d, &theta0, t, cfg.didactic_steps, cfg.seed)?;
    let v = check_proposition_nonconvex(&traj, t, LOSS_FLOOR)?;
    let rec = record(0, hash_inputs(cfg.seed, &theta0, &[t]), &v);
    let mut rep = TheoremReport::from_records("proposition1_didactic", cfg.seed, TOLERANCE, vec![rec]);
    rep.stat("steps", cfg.didactic_steps as f64);
    rep.stat("final_loss", *traj.losses.last().unwrap());
    Ok(rep)
}

/// Strongly-convex two-task quadratics sharing a minimizer; 2..=10
/// dimensions, eigenvalues in `[0.5, 10]`.
fn heavyball_instance(ts: u64) -> Result<(QuadraticProblem, Vector)> {
    let mut rng = keyed_rng(ts, Domain::Init, 0, 0);
    let n = rng.random_range(2..=10);
    let mut fam = QuadraticFamily::new(n, 2, 0.5, 10.0);
    fam.shared_center = true;
    let p = fam.generate(ts)?;
    let theta0 = p.tasks()[0].center.add(&uniform_vector(&mut rng, n, 1.0))?;
    Ok((p, theta0))
}

/// Reports for the heavy-ball guarantee: the per-step stacked-error ratio,
/// the spectral radius of the iteration matrix, and the literal step-size form.
pub fn sweep_heavyball(cfg: &SweepConfig) -> Result<(TheoremReport, TheoremReport)> {
    let runs = cfg.run(cfg.heavyball_instances, |i| -> Result<(u64, HeavyBallRun, HeavyBallRun)> {
        let ts = trial_seed(cfg.seed, sweep_id::HEAVYBALL, i);
        let (p, theta0) = heavyball_instance(ts)?;
        let sq = check_heavyball_contraction(&p, &theta0, cfg.heavyball_steps, AlphaForm::Squared)?;
        let lit = check_heavyball_contraction(&p, &theta0, cfg.heavyball_steps, AlphaForm::Literal)?;
        Ok((hash_inputs(ts, &theta0, &[]), sq, lit))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let converged = |r: &HeavyBallRun| r.final_error < 1e-8;
    let build = |id: &str, excess: fn(&HeavyBallRun) -> Option<f64>, viol: fn(&HeavyBallRun) -> usize| {
        let records = runs
            .iter()
            .enumerate()
            .map(|(i, (h, sq, _))| {
                let bad = viol(sq);
                TrialRecord {
                    index: i as u64,
                    inputs_hash: *h,
                    quantities: vec![
                        ("step_violations", bad as f64),
                        ("checked_steps", sq.checked_steps() as f64),
                        ("final_error", sq.final_error),
                    ],
                    margin: excess(sq).map(|e| -e),
                    applicable: true,
                    pass: bad == 0 && converged(sq),
                }
            })
            .collect();
        let mut rep = TheoremReport::from_records(id, cfg.seed, TOLERANCE, records);
        let steps: usize = runs.iter().map(|(_, sq, _)| sq.checked_steps()).sum();
        let bad: usize = runs.iter().map(|(_, sq, _)| viol(sq)).sum();
        rep.stat("checked_steps", steps as f64);
        rep.stat("violating_steps", bad as f64);
        rep.stat("skipped_steps", runs.iter().map(|(_, sq, _)| sq.skipped_steps()).sum::<usize>() as f64);
        rep.stat(
            "final_error_max",
            runs.iter().map(|(_, sq, _)| sq.final_error).fold(0.0, f64::max),
        );
        rep.stat("not_converged", runs.iter().filter(|(_, sq, _)| !converged(sq)).count() as f64);
        rep
    };
    let stacked = build(
        "theorem4_stacked_norm",
        HeavyBallRun::worst_stacked_excess,
        HeavyBallRun::stacked_violations,
    );
    let mut spectral = build(
        "theorem4_spectral",
        HeavyBallRun::worst_spectral_excess,
        HeavyBallRun::spectral_violations,
    );
    let lit_steps: usize = runs.iter().map(|(_, _, l)| l.checked_steps()).sum();
    let lit_ok: usize = runs
        .iter()
        .map(|(_, _, l)| l.checked_steps() - l.spectral_violations())
        .sum();
    spectral.stat("literal_alpha_within_factor_frac", lit_ok as f64 / lit_steps.max(1) as f64);
    spectral.stat(
        "literal_alpha_converged_frac",
        runs.iter().filter(|(_, _, l)| converged(l)).count() as f64 / runs.len().max(1) as f64,
    );
    Ok((stacked, spectral))
}

/// Relative deviation with the scale taken over the inputs as well as the
/// outputs, since the conflicting-case update can cancel to near zero.
fn scaled_error(a: &Vector, b: &Vector, inputs: &[&Vector]) -> f64 {
    let scale = inputs.iter().map(|v| norm(v)).chain([norm(a), norm(b)]).fold(0.0, f64::max);
    let diff = norm(&a.sub(b).expect("equal dimensions"));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Vector, Vector) {
    let n = rng.random_range(1..=20);
    let g1 = gaussian_vector(rng, n).scaled(log_uniform(rng, 1e-3, 1e3));
    let g2 = gaussian_vector(rng, n).scaled(log_uniform(rng, 1e-3, 1e3));
    (g1, g2)
}

/// Projection loop against the closed-form two-task update, at `1e-12`.
pub fn sweep_closed_form(cfg: &SweepConfig) -> Result<TheoremReport> {
    const TOL: f64 = 1e-12;
    let records = cfg.run(cfg.closed_form_trials, |i| -> Result<TrialRecord> {
        let ts = trial_seed(cfg.seed, sweep_id::CLOSED_FORM, i);
        let mut rng = keyed_rng(ts, Domain::Trial, 0, 0);
        let (g1, g2) = random_pair(&mut rng);
        let grads = TaskGradients::new(vec![g1.clone(), g2.clone()])?;
        let alg = pcgrad(&grads, ts)?.update;
        let closed = two_task_closed_form(&g1, &g2)?;
        let err = scaled_error(&alg, &closed, &[&g1, &g2]);
        Ok(TrialRecord {
            index: i,
            inputs_hash: hash_inputs(ts, &g1, g2.as_slice()),
            quantities: vec![("scaled_error", err), ("cos", crate::vecmath::cosine(&g1, &g2)?)],
            margin: Some(TOL - err),
            applicable: true,
            pass: err <= TOL,
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rep = TheoremReport::from_records("closed_form", cfg.seed, 0.0, records);
    rep.stat("conflicting_frac", rep.quantity_fraction("cos", |c| c < 0.0));
    Ok(rep)
}

/// Orthogonality, norm non-increase and scaling equivariance of one projection.
pub fn sweep_projection(cfg: &SweepConfig) -> Result<TheoremReport> {
    let records = cfg.run(cfg.projection_trials, |i| -> Result<TrialRecord> {
        let ts = trial_seed(cfg.seed, sweep_id::PROJECTION, i);
        let mut rng = keyed_rng(ts, Domain::Trial, 0, 0);
        let (g, j) = random_pair(&mut rng);
        let s = log_uniform(&mut rng, 1e-3, 1e3) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let r = log_uniform(&mut rng, 1e-3, 1e3);
        let p = project_out(&g, &j)?;
        let ortho = dot(&p, &j)?.abs() / (norm(&g) * norm(&j));
        let growth = norm(&p) / norm(&g) - 1.0;
        let equiv = scaled_error(&project_out(&g.scaled(s), &j.scaled(r))?, &p.scaled(s), &[&g.scaled(s)]);
        let ok = ortho <= 1e-9 && growth <= 1e-12 && equiv <= 1e-12;
        Ok(TrialRecord {
            index: i,
            inputs_hash: hash_inputs(ts, &g, j.as_slice()),
            quantities: vec![("orthogonality", ortho), ("norm_growth", growth), ("equivariance", equiv)],
            margin: Some((1e-9 - ortho).min(1e-12 - growth).min(1e-12 - equiv)),
            applicable: true,
            pass: ok,
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let mut rep = TheoremReport::from_records("projection", cfg.seed, 0.0, records);
    let max_of = |rep: &TheoremReport, k: &str| {
        rep.records
            .iter()
            .filter_map(|r| r.quantities.iter().find(|(q, _)| *q == k).map(|&(_, v)| v))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    for k in ["orthogonality", "norm_growth", "equivariance"] {
        let m = max_of(&rep, k);
        rep.stat(&format!("{k}_max"), m);
    }
    Ok(rep)
}

/// Taylor-remainder curvature estimate against `Δᵀ(ΣA)Δ` at `1e-10` relative.
pub fn sweep_curvature(cfg: &SweepConfig) -> Result<TheoremReport> {
    const TOL: f64 = 1e-10;
    let records = cfg.run(cfg.curvature_trials, |i| -> Result<TrialRecord> {
        let ts = trial_seed(cfg.seed, sweep_id::CURVATURE, i);
        let mut rng = keyed_rng(ts, Domain::Init, 0, 0);
        let n = rng.random_range(1..=20);
        let tasks = rng.random_range(2..=5);
        let p = QuadraticFamily::new(n, tasks, 0.0, 10.0).generate(ts)?;
        let theta = uniform_vector(&mut rng, n, 2.0);
        let t = rng.random_range(0.1..=2.0) / p.metadata().lipschitz.expect("quadratics carry L");
        let (est, exact, scaled) = curvature_estimate_vs_exact(&p, &theta, t)?;
        let rel = |a: f64, b: f64| {
            let s = a.abs().max(b.abs());
            if s == 0.0 {
                0.0
            } else {
                (a - b).abs() / s
            }
        };
        let (e1, e2) = (rel(est, exact), rel(exact, scaled));
        Ok(TrialRecord {
            index: i,
            inputs_hash: hash_inputs(ts, &theta, &[t]),
            quantities: vec![("estimator_rel_error", e1), ("t2h_rel_error", e2), ("exact", exact)],
            margin: Some(TOL - e1.max(e2)),
            applicable: true,
            pass: e1.max(e2) <= TOL,
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TheoremReport::from_records("curvature", cfg.seed, 0.0, records))
}

/// Every sweep, in a fixed order.
pub fn run_suite(cfg: &SweepConfig) -> Result<Vec<TheoremReport>> {
    let (t2, t3) = sweep_theorem23(cfg)?;
    let (hb_stacked, hb_spectral) = sweep_heavyball(cfg)?;
    Ok(vec![
        sweep_theorem1(cfg)?,
        t2,
        t3,
        sweep_corollary(cfg)?,
        sweep_proposition(cfg)?,
        sweep_proposition_didactic(cfg)?,
        hb_stacked,
        hb_spectral,
        sweep_closed_form(cfg)?,
        sweep_projection(cfg)?,
        sweep_curvature(cfg)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_sweeps_agree() {
        let mut cfg = SweepConfig::new(17).with_trials(40);
        cfg.didactic_steps = 100;
        let par = run_suite(&cfg).unwrap();
        cfg.parallel = false;
        let ser = run_suite(&cfg).unwrap();
        assert_eq!(par, ser);
    }

    #[test]
    fn trial_override_sets_counts() {
        let mut cfg = SweepConfig::new(3).with_trials(10);
        cfg.didactic_steps = 10;
        for rep in run_suite(&cfg).unwrap() {
            let expect = if rep.theorem_id == "proposition1_didactic" { 1 } else { 10 };
            assert_eq!(rep.trials, expect, "{}", rep.theorem_id);
        }
    }

    #[test]
    fn report_json_fields() {
        let rep = sweep_closed_form(&SweepConfig::new(1).with_trials(5)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for k in ["theorem_id", "trials", "violations", "worst_margin", "seed"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v.get("records").is_none());
    }
}
