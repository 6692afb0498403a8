//! Task-conditioned tanh MLP with per-task mean-squared-error losses.
//!
//! The network input is the feature vector followed by a one-hot task code.
//! Hidden layers use `tanh`; the output is a single linear unit.
//!
//! Parameter layout, layer by layer from the input: the weight matrix
//! (`out × in`, row-major) followed by the bias vector (`out`).

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{MultiTaskProblem, ProblemMetadata};
use crate::error::{Error, Result};
use crate::seeding::{keyed_rng, Domain};
use crate::surgery::TaskGradients;
use crate::vecmath::Vector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_tasks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
    pub task: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, num_tasks: usize) -> Result<Self> {
        if input_dim == 0 || num_tasks == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(
                "input width, task count and hidden widths must be positive".into(),
            ));
        }
        Ok(MlpSpec {
            input_dim,
            hidden,
            num_tasks,
        })
    }

    /// Layer widths from the (task-augmented) input to the scalar output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim + self.num_tasks);
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[1] * p[0] + p[1]).sum()
    }

    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn init_params(&self, seed: u64) -> Vector {
        let mut rng = keyed_rng(seed, Domain::Init, 0, 0);
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.widths().windows(2) {
            let scale = 1.0 / (p[0] as f64).sqrt();
            out.extend((0..p[0] * p[1]).map(|_| scale * rng.sample::<f64, _>(StandardNormal)));
            out.extend(std::iter::repeat_n(0.0, p[1]));
        }
        Vector::from(out)
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: s.features.len(),
            });
        }
        if s.task >= self.num_tasks {
            return Err(Error::InvalidArgument(format!(
                "task id {} out of range for {} tasks",
                s.task, self.num_tasks
            )));
        }
        Ok(())
    }

    fn check_theta(&self, theta: &Vector) -> Result<()> {
        theta.check_dim(self.param_count())
    }

    fn input(&self, s: &Sample) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim + self.num_tasks);
        x.extend(&s.features);
        x.extend((0..self.num_tasks).map(|t| if t == s.task { 1.0 } else { 0.0 }));
        x
    }

    /// Activations of every layer, input first.
    fn forward(&self, theta: &[f64], s: &Sample) -> Vec<Vec<f64>> {
        let widths = self.widths();
        let last = widths.len() - 2;
        let mut acts = vec![self.input(s)];
        let mut off = 0;
        for (l, p) in widths.windows(2).enumerate() {
            let (nin, nout) = (p[0], p[1]);
            let w = &theta[off..off + nin * nout];
            let b = &theta[off + nin * nout..off + nin * nout + nout];
            off += nin * nout + nout;
            let prev = &acts[l];
            let z: Vec<f64> = (0..nout)
                .map(|r| {
                    let row = &w[r * nin..(r + 1) * nin];
                    b[r] + row.iter().zip(prev).map(|(a, x)| a * x).sum::<f64>()
                })
                .collect();
            acts.push(if l == last { z } else { z.into_iter().map(f64::tanh).collect() });
        }
        acts
    }

    pub fn predict(&self, theta: &Vector, s: &Sample) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_sample(s)?;
        Ok(self.forward(theta.as_slice(), s).last().unwrap()[0])
    }

    /// Mean squared error over `batch`; zero for an empty batch.
    pub fn batch_loss(&self, theta: &Vector, batch: &[Sample]) -> Result<f64> {
        self.check_theta(theta)?;
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for s in batch {
            self.check_sample(s)?;
            let r = self.forward(theta.as_slice(), s).last().unwrap()[0] - s.target;
            total += r * r;
        }
        Ok(total / batch.len() as f64)
    }

    /// Backpropagated gradient of [`MlpSpec::batch_loss`].
    pub fn batch_grad(&self, theta: &Vector, batch: &[Sample]) -> Result<Vector> {
        self.check_theta(theta)?;
        let widths = self.widths();
        let nlayers = widths.len() - 1;
        let mut offsets = Vec::with_capacity(nlayers);
        let mut off = 0;
        for p in widths.windows(2) {
            offsets.push(off);
            off += p[0] * p[1] + p[1];
        }
        let th = theta.as_slice();
        let mut grad = vec![0.0; th.len()];
        if batch.is_empty() {
            return Ok(Vector::from(grad));
        }
        let scale = 2.0 / batch.len() as f64;
        for s in batch {
            self.check_sample(s)?;
            let acts = self.forward(th, s);
            // delta holds dLoss/dz for the current layer
            let mut delta = vec![scale * (acts[nlayers][0] - s.target)];
            for l in (0..nlayers).rev() {
                let (nin, nout) = (widths[l], widths[l + 1]);
                let o = offsets[l];
                let prev = &acts[l];
                for r in 0..nout {
                    let row = &mut grad[o + r * nin..o + (r + 1) * nin];
                    for (gw, x) in row.iter_mut().zip(prev) {
                        *gw += delta[r] * x;
                    }
                    grad[o + nin * nout + r] += delta[r];
                }
                if l > 0 {
                    let w = &th[o..o + nin * nout];
                    delta = (0..nin)
                        .map(|c| {
                            let back: f64 = (0..nout).map(|r| w[r * nin + c] * delta[r]).sum();
                            back * (1.0 - prev[c] * prev[c])
                        })
                        .collect();
                }
            }
        }
        Ok(Vector::from(grad))
    }
}

/// Per-task gradients, `batches[i]` holding the samples of task `i`.
pub fn mlp_task_gradients(spec: &MlpSpec, theta: &Vector, batches: &[Vec<Sample>]) -> Result<TaskGradients> {
    if batches.len() != spec.num_tasks {
        return Err(Error::DimensionMismatch {
            expected: spec.num_tasks,
            found: batches.len(),
        });
    }
    let grads = batches
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if let Some(s) = b.iter().find(|s| s.task != i) {
                return Err(Error::InvalidArgument(format!(
                    "sample with task {} in the batch of task {i}",
                    s.task
                )));
            }
            spec.batch_grad(theta, b)
        })
        .collect::<Result<Vec<_>>>()?;
    TaskGradients::new(grads)
}

/// An MLP together with its full per-task datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpProblem {
    pub spec: MlpSpec,
    pub data: Vec<Vec<Sample>>,
}

impl MlpProblem {
    /// Groups `samples` by task id.
    pub fn new(spec: MlpSpec, samples: Vec<Sample>) -> Result<Self> {
        let mut data = vec![Vec::new(); spec.num_tasks];
        for s in samples {
            spec.check_sample(&s)?;
            data[s.task].push(s);
        }
        if let Some(t) = data.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("task {t} has no samples")));
        }
        Ok(MlpProblem { spec, data })
    }

    /// Equal-size per-task minibatches drawn with replacement from the
    /// stream keyed by `(seed, iteration)`.
    pub fn stratified_batch(&self, seed: u64, iteration: u64, per_task: usize) -> Vec<Vec<Sample>> {
        let mut rng = keyed_rng(seed, Domain::Minibatch, iteration, 0);
        self.data
            .iter()
            .map(|d| (0..per_task).map(|_| d[rng.random_range(0..d.len())].clone()).collect())
            .collect()
    }
}

impl MultiTaskProblem for MlpProblem {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }
    fn num_tasks(&self) -> usize {
        self.spec.num_tasks
    }
    fn task_loss(&self, task: usize, theta: &Vector) -> f64 {
        self.spec.batch_loss(theta, &self.data[task]).expect("validated shapes")
    }
    fn task_grad(&self, task: usize, theta: &Vector) -> Vector {
        self.spec.batch_grad(theta, &self.data[task]).expect("validated shapes")
    }
    fn metadata(&self) -> ProblemMetadata {
        ProblemMetadata {
            loss_floor: Some(0.0),
            ..Default::default()
        }
    }
}

/// Reads `features…, target, task_id` rows. A first row that does not parse
/// as numbers is taken to be a header.
pub fn load_csv(path: &Path) -> Result<Vec<Sample>> {
    let data_err = |msg: String| Error::Data {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(data_err(format!("row {}: {e}", line + 1))),
        };
        if values.len() < 3 {
            return Err(data_err(format!("row {}: need features, target and task id", line + 1)));
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(data_err(format!("row {}: ragged row", line + 1)));
        }
        let task = values[values.len() - 1];
        if task < 0.0 || task.fract() != 0.0 {
            return Err(data_err(format!("row {}: task id must be a non-negative integer", line + 1)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(data_err(format!("row {}: non-finite value", line + 1)));
        }
        let k = values.len() - 2;
        out.push(Sample {
            features: values[..k].to_vec(),
            target: values[k],
            task: task as usize,
        });
    }
    if out.is_empty() {
        return Err(data_err("no samples".into()));
    }
    Ok(out)
}

pub fn write_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        let mut row: Vec<String> = s.features.iter().map(|x| format!("{x:e}")).collect();
        row.push(format!("{:e}", s.target));
        row.push(s.task.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Regression tasks on shared features with alternating targets
/// `y = sin(w·x)` for even task ids and `-y` for odd ones.
pub fn synthetic_conflicting(seed: u64, input_dim: usize, per_task: usize, num_tasks: usize) -> Vec<Sample> {
    let mut rng = keyed_rng(seed, Domain::ProblemGen, 1, 0);
    let w: Vec<f64> = (0..input_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut out = Vec::with_capacity(num_tasks * per_task);
    for _ in 0..per_task {
        let x: Vec<f64> = (0..input_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sin();
        for task in 0..num_tasks {
            out.push(Sample {
                features: x.clone(),
                target: if task % 2 == 0 { y } else { -y },
                task,
            });
        }
    }
    out
}

/// Largest relative error between backpropagated and central-difference
/// task gradients over the full datasets.
pub fn fd_check(problem: &MlpProblem, theta: &Vector, h: f64) -> f64 {
    (0..problem.num_tasks())
        .map(|i| {
            let fd = super::finite_difference_grad(problem, i, theta, h);
            super::relative_error(&problem.task_grad(i, theta), &fd)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (MlpSpec, Vec<Sample>) {
        let spec = MlpSpec::new(3, vec![5, 4], 2).unwrap();
        (spec, synthetic_conflicting(1, 3, 6, 2))
    }

    #[test]
    fn param_count_by_hand() {
        // (3+2)*5+5 + 5*4+4 + 4*1+1
        assert_eq!(small().0.param_count(), 30 + 24 + 5);
    }

    #[test]
    fn zero_network_on_zero_targets_has_zero_gradient() {
        let (spec, mut data) = small();
        for s in &mut data {
            s.target = 0.0;
        }
        let p = MlpProblem::new(spec.clone(), data).unwrap();
        let g = mlp_task_gradients(&spec, &Vector::zeros(spec.param_count()), &p.data).unwrap();
        assert!(g.grads().iter().all(|v| v.max_abs() == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let (spec, data) = small();
            let p = MlpProblem::new(spec.clone(), data).unwrap();
            let theta = spec.init_params(seed);
            assert!(fd_check(&p, &theta, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn duplicating_samples_keeps_mean_gradient() {
        let (spec, data) = small();
        let p = MlpProblem::new(spec.clone(), data).unwrap();
        let theta = spec.init_params(3);
        let doubled: Vec<Vec<Sample>> = p.data.iter().map(|b| b.iter().chain(b).cloned().collect()).collect();
        let a = mlp_task_gradients(&spec, &theta, &p.data).unwrap();
        let b = mlp_task_gradients(&spec, &theta, &doubled).unwrap();
        for (x, y) in a.grads().iter().zip(b.grads()) {
            assert!(crate::problems::relative_error(x, y) < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let (spec, data) = small();
        let p = MlpProblem::new(spec.clone(), data).unwrap();
        assert!(mlp_task_gradients(&spec, &Vector::zeros(3), &p.data).is_err());
        assert!(mlp_task_gradients(&spec, &spec.init_params(0), &p.data[..1]).is_err());
        let bad = Sample {
            features: vec![0.0; 2],
            target: 0.0,
            task: 0,
        };
        assert!(spec.batch_loss(&spec.init_params(0), &[bad]).is_err());
    }

    #[test]
    fn csv_round_trip_with_and_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let data = synthetic_conflicting(2, 2, 4, 2);
        let path = dir.path().join("d.csv");
        write_csv(&path, &data).unwrap();
        assert_eq!(load_csv(&path).unwrap(), data);
        let body = std::fs::read_to_string(&path).unwrap();
        let with_header = dir.path().join("h.csv");
        std::fs::write(&with_header, format!("x0,x1,target,task_id\n{body}")).unwrap();
        assert_eq!(load_csv(&with_header).unwrap(), data);
        std::fs::write(&with_header, "1,2,3\n1,2\n").unwrap();
        assert!(load_csv(&with_header).is_err());
    }

    #[test]
    fn stratified_batches_are_per_task_and_reproducible() {
        let (spec, data) = small();
        let p = MlpProblem::new(spec, data).unwrap();
        let a = p.stratified_batch(9, 4, 3);
        assert_eq!(a, p.stratified_batch(9, 4, 3));
        for (t, b) in a.iter().enumerate() {
            assert_eq!(b.len(), 3);
            assert!(b.iter().all(|s| s.task == t));
        }
    }
}
