use crate::autodiff::Var;
use crate::error::{invalid, NetError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            pad_h: 0,
            pad_w: 0,
            groups: 1,
        }
    }
}

struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
    opts: Conv2dOpts,
}

impl Geometry {
    /// Input position for output `(o_i, o_j)` and tap `(t_i, t_j)`, if inside.
    #[inline]
    fn source(&self, oi: usize, oj: usize, ti: usize, tj: usize) -> Option<usize> {
        let i = (oi * self.opts.stride + ti) as isize - self.opts.pad_h as isize;
        let j = (oj * self.opts.stride + tj) as isize - self.opts.pad_w as isize;
        if i < 0 || j < 0 || i >= self.h as isize || j >= self.w as isize {
            None
        } else {
            Some((i as usize * self.w + j as usize) * self.cin)
        }
    }

    #[inline]
    fn weight_index(&self, co: usize, ci: usize, ti: usize, tj: usize) -> usize {
        ((co * self.cin_g + ci) * self.kh + ti) * self.kw + tj
    }
}

fn geometry(x: &Tensor, w: &Tensor, opts: Conv2dOpts) -> Result<Geometry> {
    let (h, wd, cin) = match x.shape() {
        [h, w, c] => (*h, *w, *c),
        s => {
            return Err(NetError::Shape(format!(
                "conv2d input must be H x W x C, got {s:?}"
            )))
        }
    };
    let (cout, cin_g, kh, kw) = match w.shape() {
        [a, b, c, d] => (*a, *b, *c, *d),
        s => {
            return Err(NetError::Shape(format!(
                "conv2d weight must be 4-D, got {s:?}"
            )))
        }
    };
    let g = opts.groups;
    if g == 0 || opts.stride == 0 || cin % g != 0 || cout % g != 0 || cin / g != cin_g {
        return invalid(format!(
            "conv2d: {cin} input channels, weight {:?}, groups {g}, stride {}",
            w.shape(),
            opts.stride
        ));
    }
    let (ph, pw) = (h + 2 * opts.pad_h, wd + 2 * opts.pad_w);
    if ph < kh || pw < kw {
        return invalid(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {ph}x{pw}"
        ));
    }
    Ok(Geometry {
        h,
        w: wd,
        cin,
        cout,
        kh,
        kw,
        oh: (ph - kh) / opts.stride + 1,
        ow: (pw - kw) / opts.stride + 1,
        cin_g,
        cout_g: cout / g,
        opts,
    })
}

/// Zero-padded grouped 2-D convolution of a channel-last `H x W x C_in`
/// tensor with a `C_out x C_in/groups x K_h x K_w` kernel.
pub fn conv2d<'g>(
    x: Var<'g>,
    weight: Var<'g>,
    bias: Option<Var<'g>>,
    opts: Conv2dOpts,
) -> Result<Var<'g>> {
    let (xv, wv) = (x.value(), weight.value());
    let geo = geometry(&xv, &wv, opts)?;
    let bv = match bias {
        Some(b) => {
            let bv = b.value();
            if bv.shape() != [geo.cout] {
                return Err(NetError::Shape(format!("conv2d bias {:?}", bv.shape())));
            }
            Some(bv)
        }
        None => None,
    };

    let mut out = vec![0.0; geo.oh * geo.ow * geo.cout];
    let (xd, wd) = (xv.data(), wv.data());
    for oi in 0..geo.oh {
        for oj in 0..geo.ow {
            let o = (oi * geo.ow + oj) * geo.cout;
            if let Some(bv) = &bv {
                out[o..o + geo.cout].copy_from_slice(bv.data());
            }
            for ti in 0..geo.kh {
                for tj in 0..geo.kw {
                    let Some(src) = geo.source(oi, oj, ti, tj) else {
                        continue;
                    };
                    for co in 0..geo.cout {
                        let base = src + (co / geo.cout_g) * geo.cin_g;
                        let mut acc = 0.0;
                        for ci in 0..geo.cin_g {
                            acc += wd[geo.weight_index(co, ci, ti, tj)] * xd[base + ci];
                        }
                        out[o + co] += acc;
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![geo.oh, geo.ow, geo.cout], out)?;

    let (ix, iw, ib) = (x.id, weight.id, bias.map(|b| b.id));
    Ok(x.graph.push(
        out,
        Box::new(move |g| {
            let gd = g.data();
            let (xd, wd) = (xv.data(), wv.data());
            let mut gx = vec![0.0; xd.len()];
            let mut gw = vec![0.0; wd.len()];
            for oi in 0..geo.oh {
                for oj in 0..geo.ow {
                    let o = (oi * geo.ow + oj) * geo.cout;
                    for ti in 0..geo.kh {
                        for tj in 0..geo.kw {
                            let Some(src) = geo.source(oi, oj, ti, tj) else {
                                continue;
                            };
                            for co in 0..geo.cout {
                                let go = gd[o + co];
                                if go == 0.0 {
                                    continue;
                                }
                                let base = src + (co / geo.cout_g) * geo.cin_g;
                                for ci in 0..geo.cin_g {
                                    let wi = geo.weight_index(co, ci, ti, tj);
                                    gx[base + ci] += go * wd[wi];
                                    gw[wi] += go * xd[base + ci];
                                }
                            }
                        }
                    }
                }
            }
            let mut grads = vec![
                (
                    ix,
                    Tensor::new(xv.shape().to_vec(), gx).expect("consistent"),
                ),
                (
                    iw,
                    Tensor::new(wv.shape().to_vec(), gw).expect("consistent"),
                ),
            ];
            if let Some(ib) = ib {
                let mut gb = vec![0.0; geo.cout];
                for row in gd.chunks(geo.cout) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                grads.push((ib, Tensor::new(vec![geo.cout], gb).expect("consistent")));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::testutil::{check_op, random};

    #[test]
    fn dense_grouped_and_strided_gradients() {
        let x = random(&[5, 4, 4], 1);
        let same = Conv2dOpts {
            pad_h: 1,
            pad_w: 1,
            ..Conv2dOpts::default()
        };
        check_op(
            &[x.clone(), random(&[3, 4, 3, 3], 2), random(&[3], 3)],
            1e-5,
            |_, v| conv2d(v[0], v[1], Some(v[2]), same),
        );
        let depthwise = Conv2dOpts { groups: 4, ..same };
        check_op(&[x.clone(), random(&[4, 1, 3, 3], 4)], 1e-5, |_, v| {
            conv2d(v[0], v[1], None, depthwise)
        });
        let strided = Conv2dOpts {
            stride: 2,
            ..Conv2dOpts::default()
        };
        let x = random(&[4, 6, 4], 5);
        check_op(
            &[x, random(&[8, 4, 2, 2], 6), random(&[8], 7)],
            1e-5,
            |_, v| conv2d(v[0], v[1], Some(v[2]), strided),
        );
    }

    #[test]
    fn matches_direct_correlation() {
        // 1 x 4 signal, kernel [1, 2, 3], zero padding 1
        let g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 4, 1], vec![1.0, 0.0, -1.0, 2.0]).unwrap());
        let w = g.leaf(Tensor::new(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let opts = Conv2dOpts {
            pad_w: 1,
            ..Conv2dOpts::default()
        };
        let y = conv2d(x, w, None, opts).unwrap();
        assert_eq!(y.value().data(), &[2.0, -2.0, 4.0, 3.0]);
    }

    #[test]
    fn rejects_bad_groups() {
        let g = Graph::new();
        let x = g.leaf(random(&[3, 3, 4], 1));
        let w = g.leaf(random(&[6, 2, 1, 1], 2));
        let opts = Conv2dOpts {
            groups: 3,
            ..Conv2dOpts::default()
        };
        assert!(conv2d(x, w, None, opts).is_err());
    }
}
