//! The training loop shared by every run command.

use crate::error::Result;
use crate::optim::{Hyperparams, OptimizerKind, OptimizerState};
use crate::problems::MultiTaskProblem;
use crate::surgery::{triad_diagnostics, Method, TaskGradients};
use crate::telemetry::{RunHeader, RunLog, TelemetryRow};
use crate::vecmath::{dot, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub hyper: Hyperparams,
    pub iterations: u64,
    pub seed: u64,
    /// Rows and θ snapshots are kept every this many updates, plus the last.
    pub snapshot_every: u64,
}

/// Trains from `theta0` with gradients supplied per iteration by `grads_at`
/// (full-batch or minibatch). Logged rows measure losses and triad
/// diagnostics on `eval` at full batch; row `k` describes the update that
/// produced the `k`-th iterate.
pub fn run<P, F>(eval: &P, theta0: Vector, spec: &RunSpec, header: RunHeader, mut grads_at: F) -> Result<(RunLog, Vector)>
where
    P: MultiTaskProblem + ?Sized,
    F: FnMut(&Vector, u64) -> Result<TaskGradients>,
{
    let every = spec.snapshot_every.max(1);
    let mut opt = OptimizerState::new(spec.optimizer, spec.hyper)?;
    let mut log = RunLog::new(header);
    log.snapshot(0, &theta0)?;
    let mut theta = theta0;
    for k in 0..spec.iterations {
        let grads = grads_at(&theta, k)?;
        let update = spec.method.update(&grads, spec.seed, k)?;
        let next = opt.step(&theta, &update)?;
        next.check_finite()?;
        if k % every == 0 || k + 1 == spec.iterations {
            log.record(measure(eval, &theta, &next, k + 1)?)?;
            log.snapshot(k + 1, &next)?;
        }
        theta = next;
    }
    Ok((log, theta))
}

fn measure<P: MultiTaskProblem + ?Sized>(eval: &P, theta: &Vector, next: &Vector, iteration: u64) -> Result<TelemetryRow> {
    let full = eval.task_gradients(theta);
    let before = eval.total_loss(theta);
    let task_losses = eval.task_losses(next);
    let loss_total = task_losses.iter().sum();
    let step = next.sub(theta)?;
    let sample = triad_diagnostics(&full, before, loss_total, dot(&full.sum(), &step)?, iteration);
    Ok(TelemetryRow {
        iteration,
        loss_total,
        task_losses,
        triad: sample.summary(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{quadratic_family, QuadraticFamily};
    use std::collections::BTreeMap;

    fn header() -> RunHeader {
        RunHeader {
            problem: "quadratic".into(),
            method: "pcgrad".into(),
            optimizer: "sgd".into(),
            seed: 0,
            hyper: Hyperparams::default(),
            iterations: 0,
            snapshot_every: 1,
            params: BTreeMap::new(),
        }
    }

    fn spec(method: Method, iterations: u64, lr: f64) -> RunSpec {
        RunSpec {
            method,
            optimizer: OptimizerKind::Sgd,
            hyper: Hyperparams::with_lr(lr),
            iterations,
            seed: 4,
            snapshot_every: 1,
        }
    }

    #[test]
    fn identical_tasks_make_pcgrad_plain() {
        let mut fam = QuadraticFamily::new(6, 3, 0.1, 5.0);
        fam.identical = true;
        let p = fam.generate(1).unwrap();
        let lr = 1.0 / p.metadata().lipschitz.unwrap();
        let th0 = Vector::from(vec![1.0; 6]);
        let (a, ta) = run(&p, th0.clone(), &spec(Method::Pcgrad, 50, lr), header(), |t, _| Ok(p.task_gradients(t))).unwrap();
        let (b, tb) = run(&p, th0, &spec(Method::Plain, 50, lr), header(), |t, _| Ok(p.task_gradients(t))).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.rows, b.rows);
        assert!(a.rows.iter().all(|r| r.triad.pct_conflicting == 0.0));
    }

    #[test]
    fn convex_sgd_at_inverse_lipschitz_is_monotone() {
        let p = quadratic_family(3, 8, 2, 0.0, 10.0).unwrap();
        let lr = 1.0 / p.metadata().lipschitz.unwrap();
        let th0 = Vector::from(vec![2.0; 8]);
        let (log, _) = run(&p, th0, &spec(Method::Pcgrad, 200, lr), header(), |t, _| Ok(p.task_gradients(t))).unwrap();
        assert!(log.rows.windows(2).all(|w| w[1].loss_total <= w[0].loss_total + 1e-12));
    }

    #[test]
    fn cadence_keeps_first_and_last() {
        let p = quadratic_family(0, 3, 2, 0.1, 1.0).unwrap();
        let mut s = spec(Method::Plain, 250, 0.1);
        s.snapshot_every = 100;
        let (log, _) = run(&p, Vector::from(vec![1.0; 3]), &s, header(), |t, _| Ok(p.task_gradients(t))).unwrap();
        let its: Vec<u64> = log.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![1, 101, 201, 250]);
        assert_eq!(log.snapshots.len(), 5);
    }
}
