use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::{finite, same_shape};
use crate::autodiff::Var;
use crate::error::{NetError, Result};
use crate::tensor::Tensor;

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub fn add<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (av, bv) = (a.value(), b.value());
    same_shape(&av, &bv, "add")?;
    let out = zip_with(&av, &bv, |x, y| x + y);
    let (ia, ib) = (a.id, b.id);
    Ok(a.graph.push(
        out,
        Box::new(move |g| vec![(ia, g.clone()), (ib, g.clone())]),
    ))
}

pub fn sub<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (av, bv) = (a.value(), b.value());
    same_shape(&av, &bv, "sub")?;
    let out = zip_with(&av, &bv, |x, y| x - y);
    let (ia, ib) = (a.id, b.id);
    Ok(a.graph.push(
        out,
        Box::new(move |g| vec![(ia, g.clone()), (ib, g.map(|v| -v))]),
    ))
}

pub fn mul<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (av, bv) = (a.value(), b.value());
    same_shape(&av, &bv, "mul")?;
    let out = zip_with(&av, &bv, |x, y| x * y);
    let (ia, ib) = (a.id, b.id);
    Ok(a.graph.push(
        out,
        Box::new(move |g| {
            vec![
                (ia, zip_with(g, &bv, |u, y| u * y)),
                (ib, zip_with(g, &av, |u, x| u * x)),
            ]
        }),
    ))
}

pub fn scale<'g>(a: Var<'g>, c: f64) -> Var<'g> {
    let out = a.value().map(|v| c * v);
    let ia = a.id;
    a.graph
        .push(out, Box::new(move |g| vec![(ia, g.map(|v| c * v))]))
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn erf_gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * pdf
}

/// Exact (erf-based) GELU.
pub fn gelu(a: Var<'_>) -> Result<Var<'_>> {
    let av = a.value();
    let out = finite(av.map(erf_gelu), "gelu")?;
    let ia = a.id;
    Ok(a.graph.push(
        out,
        Box::new(move |g| vec![(ia, zip_with(g, &av, |u, x| u * erf_gelu_grad(x)))]),
    ))
}

pub(crate) fn softplus_value(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus_value`] for `y > 0`.
pub(crate) fn softplus_inverse(y: f64) -> f64 {
    // log(exp(y) - 1), rearranged to stay finite for large y
    y + (-(-y).exp_m1()).ln()
}

pub fn softplus(a: Var<'_>) -> Var<'_> {
    let av = a.value();
    let out = av.map(softplus_value);
    let ia = a.id;
    a.graph.push(
        out,
        Box::new(move |g| vec![(ia, zip_with(g, &av, |u, x| u / (1.0 + (-x).exp())))]),
    )
}

/// `<a, r>` for a constant tensor `r`, as a scalar node.
pub fn dot_const<'g>(a: Var<'g>, r: &Tensor) -> Result<Var<'g>> {
    let av = a.value();
    same_shape(&av, r, "dot")?;
    let out = Tensor::scalar(av.dot(r));
    let r = r.clone();
    let ia = a.id;
    Ok(a.graph
        .push(out, Box::new(move |g| vec![(ia, r.map(|v| v * g.item()))])))
}

/// `sqrt(mean((a - target)^2))` as a scalar node.
pub fn rmse<'g>(a: Var<'g>, target: &Tensor) -> Result<Var<'g>> {
    let av = a.value();
    same_shape(&av, target, "rmse")?;
    if av.is_empty() {
        return Err(NetError::Shape("rmse of an empty tensor".into()));
    }
    let n = av.len() as f64;
    let diff = zip_with(&av, target, |x, t| x - t);
    let value = (diff.dot(&diff) / n).sqrt();
    let ia = a.id;
    Ok(a.graph.push(
        Tensor::scalar(value),
        Box::new(move |g| {
            // the subgradient at an exact match is taken to be zero
            let c = if value > 0.0 {
                g.item() / (n * value)
            } else {
                0.0
            };
            vec![(ia, diff.map(|d| c * d))]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::testutil::{check_op, random};

    #[test]
    fn elementwise_gradients() {
        let (a, b) = (random(&[3, 4], 1), random(&[3, 4], 2));
        check_op(&[a.clone(), b.clone()], 1e-6, |_, v| add(v[0], v[1]));
        check_op(&[a.clone(), b.clone()], 1e-6, |_, v| sub(v[0], v[1]));
        check_op(&[a.clone(), b.clone()], 1e-6, |_, v| mul(v[0], v[1]));
        check_op(std::slice::from_ref(&a), 1e-6, |_, v| Ok(scale(v[0], -2.5)));
        check_op(&[a.clone().map(|x| 3.0 * x)], 1e-6, |_, v| gelu(v[0]));
        check_op(&[a.clone().map(|x| 5.0 * x)], 1e-6, |_, v| {
            Ok(softplus(v[0]))
        });
        let t = random(&[3, 4], 3);
        check_op(&[a], 1e-6, move |_, v| rmse(v[0], &t));
    }

    #[test]
    fn gelu_reference_values() {
        // 0.5 x (1 + erf(x / sqrt 2)) at x = 1 and x = -2
        assert!((erf_gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((erf_gelu(-2.0) + 0.045_500_263_896_358_42).abs() < 1e-15);
        assert_eq!(erf_gelu(0.0), 0.0);
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-6, 0.01, 0.5, 1.0, 7.0, 40.0] {
            let x = softplus_inverse(y);
            assert!((softplus_value(x) - y).abs() <= 1e-12 * y.max(1.0), "{y}");
        }
    }

    #[test]
    fn rmse_closed_form() {
        let g = Graph::new();
        let x = g.leaf(Tensor::filled(&[2, 3], 0.75));
        let r = rmse(x, &Tensor::filled(&[2, 3], 0.5)).unwrap();
        assert!((r.value().item() - 0.25).abs() < 1e-15);
        assert!(rmse(x, &Tensor::zeros(&[3, 2])).is_err());
    }
}
