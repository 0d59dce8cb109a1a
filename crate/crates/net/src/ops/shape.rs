use crate::autodiff::Var;
use crate::error::{invalid, NetError, Result};
use crate::tensor::Tensor;

fn rebuild(shape: &[usize], last: usize, data: Vec<f64>) -> Tensor {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 1") = last;
    Tensor::new(s, data).expect("consistent")
}

/// Channels `start..end` of the trailing axis.
pub fn slice_last(a: Var<'_>, start: usize, end: usize) -> Result<Var<'_>> {
    let av = a.value();
    let c = av.channels();
    if start > end || end > c {
        return invalid(format!("channel slice {start}..{end} of {c}"));
    }
    let w = end - start;
    let shape = av.shape().to_vec();
    let positions: usize = shape[..shape.len() - 1].iter().product();
    let mut out = Vec::with_capacity(positions * w);
    for p in 0..positions {
        out.extend_from_slice(&av.data()[p * c + start..p * c + end]);
    }
    let ia = a.id;
    Ok(a.graph.push(
        rebuild(&shape, w, out),
        Box::new(move |g| {
            let mut full = vec![0.0; shape.iter().product()];
            for p in 0..positions {
                full[p * c + start..p * c + end].copy_from_slice(&g.data()[p * w..(p + 1) * w]);
            }
            vec![(ia, Tensor::new(shape.clone(), full).expect("consistent"))]
        }),
    ))
}

/// Concatenation along the trailing axis.
pub fn concat_last<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (av, bv) = (a.value(), b.value());
    let (sa, sb) = (av.shape(), bv.shape());
    if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(NetError::Shape(format!("concat: {sa:?} vs {sb:?}")));
    }
    let (ca, cb) = (av.channels(), bv.channels());
    let positions: usize = sa[..sa.len() - 1].iter().product();
    let mut out = Vec::with_capacity(positions * (ca + cb));
    for p in 0..positions {
        out.extend_from_slice(&av.data()[p * ca..(p + 1) * ca]);
        out.extend_from_slice(&bv.data()[p * cb..(p + 1) * cb]);
    }
    let (shape_a, shape_b) = (sa.to_vec(), sb.to_vec());
    let (ia, ib) = (a.id, b.id);
    Ok(a.graph.push(
        rebuild(sa, ca + cb, out),
        Box::new(move |g| {
            let c = ca + cb;
            let mut ga = Vec::with_capacity(positions * ca);
            let mut gb = Vec::with_capacity(positions * cb);
            for p in 0..positions {
                ga.extend_from_slice(&g.data()[p * c..p * c + ca]);
                gb.extend_from_slice(&g.data()[p * c + ca..(p + 1) * c]);
            }
            vec![
                (ia, Tensor::new(shape_a.clone(), ga).expect("consistent")),
                (ib, Tensor::new(shape_b.clone(), gb).expect("consistent")),
            ]
        }),
    ))
}

pub fn reshape(a: Var<'_>, shape: Vec<usize>) -> Result<Var<'_>> {
    let av = a.value();
    let original = av.shape().to_vec();
    let out = (*av).clone().reshaped(shape)?;
    let ia = a.id;
    Ok(a.graph.push(
        out,
        Box::new(move |g| vec![(ia, g.clone().reshaped(original.clone()).expect("same size"))]),
    ))
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [h, w, c] => Ok((*h, *w, *c)),
        s => Err(NetError::Shape(format!(
            "{what} expects H x W x C, got {s:?}"
        ))),
    }
}

/// Nearest-neighbour 2x spatial upsampling of an `H x W x C` tensor.
pub fn upsample2x(a: Var<'_>) -> Result<Var<'_>> {
    let av = a.value();
    let (h, w, c) = dims3(&av, "upsample2x")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            let src = ((i / 2) * w + j / 2) * c;
            let dst = (i * ow + j) * c;
            out[dst..dst + c].copy_from_slice(&av.data()[src..src + c]);
        }
    }
    let ia = a.id;
    Ok(a.graph.push(
        Tensor::new(vec![oh, ow, c], out)?,
        Box::new(move |g| {
            let mut back = vec![0.0; h * w * c];
            for i in 0..oh {
                for j in 0..ow {
                    let dst = ((i / 2) * w + j / 2) * c;
                    let src = (i * ow + j) * c;
                    for ch in 0..c {
                        back[dst + ch] += g.data()[src + ch];
                    }
                }
            }
            vec![(ia, Tensor::new(vec![h, w, c], back).expect("consistent"))]
        }),
    ))
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads `pad_h` rows at the bottom and `pad_w` columns at the right.
pub fn pad_reflect2d(a: Var<'_>, pad_h: usize, pad_w: usize) -> Result<Var<'_>> {
    let av = a.value();
    let (h, w, c) = dims3(&av, "pad_reflect2d")?;
    let (oh, ow) = (h + pad_h, w + pad_w);
    let src_of = move |i: usize, j: usize| (reflect(i, h) * w + reflect(j, w)) * c;
    let mut out = vec![0.0; oh * ow * c];
    for i in 0..oh {
        for j in 0..ow {
            let (s, d) = (src_of(i, j), (i * ow + j) * c);
            out[d..d + c].copy_from_slice(&av.data()[s..s + c]);
        }
    }
    let ia = a.id;
    Ok(a.graph.push(
        Tensor::new(vec![oh, ow, c], out)?,
        Box::new(move |g| {
            let mut back = vec![0.0; h * w * c];
            for i in 0..oh {
                for j in 0..ow {
                    let (s, d) = (src_of(i, j), (i * ow + j) * c);
                    for ch in 0..c {
                        back[s + ch] += g.data()[d + ch];
                    }
                }
            }
            vec![(ia, Tensor::new(vec![h, w, c], back).expect("consistent"))]
        }),
    ))
}

/// Top-left `height x width` window.
pub fn crop2d(a: Var<'_>, height: usize, width: usize) -> Result<Var<'_>> {
    let av = a.value();
    let (h, w, c) = dims3(&av, "crop2d")?;
    if height > h || width > w {
        return invalid(format!("crop {height}x{width} exceeds {h}x{w}"));
    }
    let mut out = Vec::with_capacity(height * width * c);
    for i in 0..height {
        out.extend_from_slice(&av.data()[i * w * c..(i * w + width) * c]);
    }
    let ia = a.id;
    Ok(a.graph.push(
        Tensor::new(vec![height, width, c], out)?,
        Box::new(move |g| {
            let mut back = vec![0.0; h * w * c];
            for i in 0..height {
                back[i * w * c..(i * w + width) * c]
                    .copy_from_slice(&g.data()[i * width * c..(i + 1) * width * c]);
            }
            vec![(ia, Tensor::new(vec![h, w, c], back).expect("consistent"))]
        }),
    ))
}
