//! Central finite-difference checks of parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::ops;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// `|a - f| / max(|a|, |f|, 1e-6)`.
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(SCALE_FLOOR);
        (self.analytic - self.numeric).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(Probe::rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }

    /// Probes whose gradient is not numerically zero.
    pub fn nonzero(&self) -> usize {
        self.probes
            .iter()
            .filter(|p| p.analytic.abs().max(p.numeric.abs()) > SCALE_FLOOR)
            .count()
    }
}

/// Compares `f`'s analytic gradient with `(f(p + h) - f(p - h)) / 2h` at
/// `count` parameter entries drawn uniformly over all entries.
pub fn check_gradients<F>(
    params: &ParamSet,
    count: usize,
    h: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, Vec<Tensor>)>,
{
    let total = params.count();
    if total == 0 {
        return invalid("no parameters to check");
    }
    let (_, grads) = f(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut flat = rng.random_range(0..total);
        let mut t = 0;
        while flat >= params.tensors()[t].len() {
            flat -= params.tensors()[t].len();
            t += 1;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            p.tensors_mut()[t].data_mut()[flat] += delta;
            Ok(f(&p)?.0)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        probes.push(Probe {
            name: params.names()[t].clone(),
            index: flat,
            analytic: grads[t].data()[flat],
            numeric,
        });
    }
    Ok(GradCheckReport { probes })
}

/// Gradient check of a module `f(params, x)` with a tensor output, through
/// the scalar `<f(params, x), r>` for a fixed random `r`.
pub fn check_module<F>(
    params: &ParamSet,
    x: &Tensor,
    count: usize,
    h: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&[Var<'g>], Var<'g>) -> Result<Var<'g>>,
{
    let shape = {
        let g = Graph::new();
        let vars = params.bind(&g);
        f(&vars, g.leaf(x.clone()))?.shape()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66);
    let n = shape.iter().product();
    let r = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    check_gradients(params, count, h, seed, |p| {
        let g = Graph::new();
        let vars = p.bind(&g);
        let head = ops::dot_const(f(&vars, g.leaf(x.clone()))?, &r)?;
        let grads = g.backward(head)?;
        Ok((
            head.value().item(),
            vars.iter().map(|v| grads.get_or_zeros(*v)).collect(),
        ))
    })
}

/// Adds `U(-scale, scale)` noise to every parameter, so that zero-initialized
/// layers stop masking the gradients of the layers before them.
pub fn perturb(params: &ParamSet, scale: f64, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    for t in out.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
    out
}
