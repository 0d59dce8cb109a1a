//! Adam with cosine annealing on the multi-stage loss.

use std::io::Write;
use std::rc::Rc;

use lrsci_core::cassi::{self, HsiCube, SensingSpec};
use lrsci_core::solver;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::convert;
use crate::error::{invalid, NetError, Result};
use crate::lrdun::{multi_stage_loss, Lrdun};
use crate::ops::Physics;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Evaluates the samples of a batch on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 4e-4,
            epochs: 1,
            steps: None,
            batch_size: 2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return invalid(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.epochs == 0 && self.steps.is_none() {
            return invalid("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return invalid("need 0 <= beta1, beta2 < 1 and eps > 0");
        }
        Ok(())
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.steps
            .unwrap_or_else(|| self.epochs * dataset_len.div_ceil(self.batch_size))
    }
}

/// `0.5 lr (1 + cos(pi t / T))` for zero-based step `t`.
pub fn cosine_lr(lr: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr;
    }
    0.5 * lr * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,loss,lr")?;
        for r in &self.records {
            writeln!(out, "{},{:.17e},{:.17e}", r.step, r.loss, r.lr)?;
        }
        Ok(())
    }
}

/// Seeded epoch shuffling and crop placement.
struct Sampler<'a> {
    dataset: &'a [HsiCube],
    size: (usize, usize),
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> Sampler<'a> {
    fn new(dataset: &'a [HsiCube], spec: &SensingSpec, seed: u64) -> Result<Self> {
        if dataset.is_empty() {
            return invalid("training set is empty");
        }
        let size = (spec.height(), spec.width());
        for x in dataset {
            if x.bands() != spec.bands() || x.height() < size.0 || x.width() < size.1 {
                return invalid(format!(
                    "training cube {:?} does not fit the {}x{}x{} sensing geometry",
                    x.dims(),
                    size.0,
                    size.1,
                    spec.bands()
                ));
            }
        }
        Ok(Self {
            dataset,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn next(&mut self) -> Result<HsiCube> {
        if self.cursor == self.order.len() {
            self.order = (0..self.dataset.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let x = &self.dataset[self.order[self.cursor]];
        self.cursor += 1;
        let (h, w) = self.size;
        if (x.height(), x.width()) == (h, w) {
            return Ok(x.clone());
        }
        let row = self.rng.random_range(0..=x.height() - h);
        let col = self.rng.random_range(0..=x.width() - w);
        let data = x
            .data()
            .slice(ndarray::s![row..row + h, col..col + w, ..])
            .to_owned();
        Ok(HsiCube::new(data)?)
    }
}

/// Multi-stage loss of one noiseless sample and its parameter gradients.
pub fn sample_loss_and_grad(
    net: &Lrdun,
    params: &ParamSet,
    x: &HsiCube,
    spec: &SensingSpec,
) -> Result<(f64, Vec<Tensor>)> {
    let y = cassi::forward(x, spec)?;
    let init = solver::init_classical(&y, spec, net.config().k)?;
    let phys = Rc::new(Physics::new(y, spec.clone()));
    let g = Graph::new();
    let p = params.bind(&g);
    let pass = net.forward(&g, &p, &phys, &init)?;
    let xs: Vec<_> = pass.stages.iter().map(|s| s.x).collect();
    let loss = multi_stage_loss(&xs, &convert::cube_tensor(x))?;
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(NetError::Diverged("loss".into()));
    }
    let grads = g.backward(loss)?;
    Ok((value, p.iter().map(|v| grads.get_or_zeros(*v)).collect()))
}

/// Parameters with step sizes calibrated on the first training sample.
pub fn prepare(
    net: &Lrdun,
    dataset: &[HsiCube],
    spec: &SensingSpec,
    cfg: &TrainConfig,
) -> Result<ParamSet> {
    cfg.validate()?;
    let first = Sampler::new(dataset, spec, cfg.seed)?.next()?;
    net.initial_params(&cassi::forward(&first, spec)?, spec)
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
                *pi -= lr * update;
            }
        }
    }
}

/// Minimizes the mean multi-stage loss over random batches.
///
/// Samples are measured noiselessly through `spec`; cubes larger than the
/// sensing geometry are randomly cropped. With `parallel` off the run is
/// deterministic given `cfg.seed`; with it on, gradients are still summed
/// in batch order.
pub fn train(
    net: &Lrdun,
    mut params: ParamSet,
    dataset: &[HsiCube],
    spec: &SensingSpec,
    cfg: &TrainConfig,
) -> Result<(ParamSet, TrainLog)> {
    cfg.validate()?;
    params.check(net.registry())?;
    let mut sampler = Sampler::new(dataset, spec, cfg.seed)?;
    let total = cfg.total_steps(dataset.len());
    let mut adam = Adam::new(&params);
    let mut log = TrainLog::default();

    for t in 0..total {
        let batch = (0..cfg.batch_size)
            .map(|_| sampler.next())
            .collect::<Result<Vec<_>>>()?;
        let eval = |x: &HsiCube| sample_loss_and_grad(net, &params, x, spec);
        let results: Vec<Result<(f64, Vec<Tensor>)>> = if cfg.parallel {
            batch.par_iter().map(eval).collect()
        } else {
            batch.iter().map(eval).collect()
        };
        let lr = cosine_lr(cfg.lr, t, total);
        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, g) = match r {
                Ok(v) => v,
                Err(NetError::Diverged(_)) => {
                    log.records.push(TrainRecord {
                        step: t + 1,
                        loss: f64::NAN,
                        lr,
                    });
                    return Err(NetError::TrainingDiverged {
                        step: t + 1,
                        log: Box::new(log),
                    });
                }
                Err(e) => return Err(e),
            };
            loss += l;
            match &mut grads {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
            }
        }
        let n = cfg.batch_size as f64;
        loss /= n;
        let mut grads = grads.expect("batch_size >= 1");
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        log.records.push(TrainRecord {
            step: t + 1,
            loss,
            lr,
        });
        adam.step(&mut params, &grads, lr, cfg);
        if !params.tensors().iter().all(Tensor::all_finite) {
            return Err(NetError::TrainingDiverged {
                step: t + 1,
                log: Box::new(log),
            });
        }
        log::debug!("step {} loss {loss:.6e} lr {lr:.3e}", t + 1);
    }
    Ok((params, log))
}
