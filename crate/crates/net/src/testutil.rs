//! Finite-difference checks of single operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    t
}

/// Checks every input entry of `build`, reduced to a scalar through a fixed
/// random projection of its output.
pub fn check_op<F>(inputs: &[Tensor], tol: f64, build: F)
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let head = |ins: &[Tensor]| -> (f64, Vec<Tensor>) {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&g, &vars).unwrap();
        let r = random(out.value().shape(), 99);
        let s = ops::dot_const(out, &r).unwrap();
        let grads = g.backward(s).unwrap();
        let value = s.value().item();
        (value, vars.iter().map(|v| grads.get_or_zeros(*v)).collect())
    };
    let (_, grads) = head(inputs);
    let h = 1e-6;
    for (t, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let shifted = |d: f64| {
                let mut ins = inputs.to_vec();
                ins[t].data_mut()[i] += d;
                head(&ins).0
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = grads[t].data()[i];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() <= tol * scale,
                "input {t}[{i}]: analytic {analytic} vs numeric {numeric}"
            );
        }
    }
}
