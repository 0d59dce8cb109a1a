use super::finite;
use crate::autodiff::Var;
use crate::error::{NetError, Result};
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

/// Normalizes each position across its channels, then applies a
/// per-channel affine map `gamma * x_hat + beta`.
#[allow(clippy::needless_range_loop)]
pub fn layer_norm<'g>(x: Var<'g>, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let c = xv.channels();
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(NetError::Shape(format!(
            "layer_norm affine {:?}/{:?} for {c} channels",
            gv.shape(),
            bv.shape()
        )));
    }
    let n = xv.positions();
    let mut x_hat = vec![0.0; xv.len()];
    let mut inv_std = vec![0.0; n];
    let mut out = vec![0.0; xv.len()];
    for p in 0..n {
        let row = &xv.data()[p * c..(p + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let is = 1.0 / (var + EPS).sqrt();
        inv_std[p] = is;
        for ch in 0..c {
            let xh = (row[ch] - mean) * is;
            x_hat[p * c + ch] = xh;
            out[p * c + ch] = gv.data()[ch] * xh + bv.data()[ch];
        }
    }
    let out = finite(Tensor::new(xv.shape().to_vec(), out)?, "layer_norm")?;
    let shape = xv.shape().to_vec();
    let (ix, ig, ib) = (x.id, gamma.id, beta.id);
    Ok(x.graph.push(
        out,
        Box::new(move |g| {
            let gd = g.data();
            let mut gx = vec![0.0; gd.len()];
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            let mut dxh = vec![0.0; c];
            for p in 0..n {
                let (mut m1, mut m2) = (0.0, 0.0);
                for ch in 0..c {
                    let i = p * c + ch;
                    gg[ch] += gd[i] * x_hat[i];
                    gb[ch] += gd[i];
                    dxh[ch] = gd[i] * gv.data()[ch];
                    m1 += dxh[ch];
                    m2 += dxh[ch] * x_hat[i];
                }
                m1 /= c as f64;
                m2 /= c as f64;
                for ch in 0..c {
                    let i = p * c + ch;
                    gx[i] = inv_std[p] * (dxh[ch] - m1 - x_hat[i] * m2);
                }
            }
            vec![
                (ix, Tensor::new(shape.clone(), gx).expect("consistent")),
                (ig, Tensor::new(vec![c], gg).expect("consistent")),
                (ib, Tensor::new(vec![c], gb).expect("consistent")),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::testutil::{check_op, random};

    #[test]
    fn gradients() {
        check_op(
            &[random(&[3, 2, 5], 1), random(&[5], 2), random(&[5], 3)],
            1e-5,
            |_, v| layer_norm(v[0], v[1], v[2]),
        );
    }

    #[test]
    fn normalizes_each_position() {
        let g = Graph::new();
        let x = g.leaf(random(&[4, 3, 6], 4).map(|v| 3.0 * v + 2.0));
        let y = layer_norm(
            x,
            g.leaf(Tensor::filled(&[6], 1.0)),
            g.leaf(Tensor::zeros(&[6])),
        )
        .unwrap()
        .value();
        for row in y.data().chunks(6) {
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
