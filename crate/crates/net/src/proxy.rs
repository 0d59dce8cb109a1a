//! The learned proximal networks of one stage.

use crate::autodiff::Var;
use crate::error::{invalid, Result};
use crate::layers::{BandConv, Conv, WeightInit};
use crate::ops::{self, Conv2dOpts};
use crate::params::Registry;
use crate::scab::Scab;

const PROXY_E_BLOCKS: usize = 2;
const PROXY_E_KERNEL: usize = 3;

#[derive(Debug, Clone)]
struct BandBlock {
    expand: BandConv,
    contract: BandConv,
}

/// Residual 1-D convolutions along the bands, then QR of the physical part.
#[derive(Debug, Clone)]
pub struct ProxyE {
    blocks: Vec<BandBlock>,
    rank: usize,
    features: usize,
}

impl ProxyE {
    pub fn new(reg: &mut Registry, name: &str, rank: usize, features: usize) -> Self {
        let c = features;
        let blocks = (0..PROXY_E_BLOCKS)
            .map(|i| BandBlock {
                expand: BandConv::new(
                    reg,
                    &format!("{name}.block{i}.expand"),
                    c,
                    2 * c,
                    PROXY_E_KERNEL,
                    WeightInit::FanIn,
                ),
                contract: BandConv::new(
                    reg,
                    &format!("{name}.block{i}.contract"),
                    2 * c,
                    c,
                    PROXY_E_KERNEL,
                    WeightInit::Zeros,
                ),
            })
            .collect();
        Self {
            blocks,
            rank,
            features,
        }
    }

    /// Residual refinement only, without the final orthonormalization.
    pub fn refine<'g>(&self, p: &[Var<'g>], mut x: Var<'g>) -> Result<Var<'g>> {
        for b in &self.blocks {
            let h = ops::gelu(b.expand.apply(p, x)?)?;
            x = ops::add(x, b.contract.apply(p, h)?)?;
        }
        Ok(x)
    }

    /// `B x C` in, `B x C` out, with orthonormal first `k` columns.
    pub fn apply<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let x = self.refine(p, x)?;
        let q = ops::qr(ops::slice_last(x, 0, self.rank)?)?;
        if self.features == self.rank {
            return Ok(q);
        }
        ops::concat_last(q, ops::slice_last(x, self.rank, self.features)?)
    }

    pub fn params(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.expand.params() + b.contract.params())
            .sum()
    }

    /// Convolution MACs plus a `2 B k^2` Householder QR.
    pub fn macs(&self, bands: usize) -> u64 {
        let conv: u64 = self
            .blocks
            .iter()
            .map(|b| b.expand.macs(bands) + b.contract.macs(bands))
            .sum();
        conv + (2 * bands * self.rank * self.rank) as u64
    }
}

#[derive(Debug, Clone)]
struct Down {
    scab: Scab,
    conv: Conv,
}

#[derive(Debug, Clone)]
struct Up {
    project: Conv,
    fuse: Conv,
    scab: Scab,
}

/// U-Net of conv attention blocks with a global residual.
#[derive(Debug, Clone)]
pub struct ProxyA {
    down: Vec<Down>,
    bottleneck: Scab,
    up: Vec<Up>,
    out: Conv,
}

impl ProxyA {
    pub fn new(
        reg: &mut Registry,
        name: &str,
        features: usize,
        depth: usize,
        kernel: usize,
    ) -> Self {
        let levels = depth.saturating_sub(1);
        let ch = |l: usize| features << l;
        let down = (0..levels)
            .map(|l| Down {
                scab: Scab::new(reg, &format!("{name}.down{l}.scab"), ch(l), kernel),
                conv: Conv::new(
                    reg,
                    &format!("{name}.down{l}.conv"),
                    ch(l),
                    ch(l + 1),
                    (2, 2),
                    Conv2dOpts {
                        stride: 2,
                        ..Conv2dOpts::default()
                    },
                    true,
                    WeightInit::FanIn,
                ),
            })
            .collect();
        let bottleneck = Scab::new(reg, &format!("{name}.bottleneck"), ch(levels), kernel);
        let up = (0..levels)
            .rev()
            .map(|l| Up {
                project: Conv::pointwise(
                    reg,
                    &format!("{name}.up{l}.project"),
                    ch(l + 1),
                    ch(l),
                    WeightInit::FanIn,
                ),
                fuse: Conv::pointwise(
                    reg,
                    &format!("{name}.up{l}.fuse"),
                    2 * ch(l),
                    ch(l),
                    WeightInit::FanIn,
                ),
                scab: Scab::new(reg, &format!("{name}.up{l}.scab"), ch(l), kernel),
            })
            .collect();
        let out = Conv::pointwise(
            reg,
            &format!("{name}.out"),
            features,
            features,
            WeightInit::Zeros,
        );
        Self {
            down,
            bottleneck,
            up,
            out,
        }
    }

    /// Spatial dims must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.down.len()
    }

    pub fn apply<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let m = self.multiple();
        if shape.len() != 3 || !shape[0].is_multiple_of(m) || !shape[1].is_multiple_of(m) {
            return invalid(format!(
                "U-Net input {shape:?} must have H, W divisible by {m}"
            ));
        }
        let mut z = x;
        let mut skips = Vec::with_capacity(self.down.len());
        for d in &self.down {
            let s = d.scab.apply(p, z)?;
            skips.push(s);
            z = d.conv.apply(p, s)?;
        }
        z = self.bottleneck.apply(p, z)?;
        for u in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let up = u.project.apply(p, ops::upsample2x(z)?)?;
            z = u.fuse.apply(p, ops::concat_last(up, skip)?)?;
            z = u.scab.apply(p, z)?;
        }
        ops::add(x, self.out.apply(p, z)?)
    }

    pub fn params(&self) -> usize {
        self.down
            .iter()
            .map(|d| d.scab.params() + d.conv.params())
            .sum::<usize>()
            + self.bottleneck.params()
            + self
                .up
                .iter()
                .map(|u| u.project.params() + u.fuse.params() + u.scab.params())
                .sum::<usize>()
            + self.out.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let mut total = 0;
        let (mut hh, mut ww) = (h, w);
        let mut dims = Vec::new();
        for d in &self.down {
            total += d.scab.macs(hh, ww) + d.conv.macs(hh, ww);
            dims.push((hh, ww));
            (hh, ww) = d.conv.out_dims(hh, ww);
        }
        total += self.bottleneck.macs(hh, ww);
        for u in &self.up {
            let (sh, sw) = dims.pop().expect("one level per skip");
            total += u.project.macs(sh, sw) + u.fuse.macs(sh, sw) + u.scab.macs(sh, sw);
        }
        total + self.out.macs(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::gradcheck::{check_module, perturb};
    use crate::params::ParamSet;
    use crate::tensor::Tensor;
    use crate::testutil::random;
    use lrsci_core::linalg::orthonormality_error;

    fn eval<F>(p: &ParamSet, x: &Tensor, f: F) -> Tensor
    where
        F: for<'g> Fn(&[Var<'g>], Var<'g>) -> Result<Var<'g>>,
    {
        let g = Graph::new();
        let vars = p.bind(&g);
        let out = (*f(&vars, g.leaf(x.clone())).unwrap().value()).clone();
        out
    }

    fn grad_report<F>(p: &ParamSet, x: &Tensor, f: F) -> crate::gradcheck::GradCheckReport
    where
        F: for<'g> Fn(&[Var<'g>], Var<'g>) -> Result<Var<'g>>,
    {
        check_module(p, x, 20, 1e-5, 3, f).unwrap()
    }

    #[test]
    fn proxy_e_is_qr_at_initialization() {
        let mut reg = Registry::default();
        let net = ProxyE::new(&mut reg, "pe", 3, 5);
        let p = reg.initialize(0);
        let x = random(&[10, 5], 1);
        let out = eval(&p, &x, |v, x| net.apply(v, x));
        assert_eq!(out.shape(), &[10, 5]);

        let g = Graph::new();
        let q = ops::qr(ops::slice_last(g.leaf(x.clone()), 0, 3).unwrap())
            .unwrap()
            .value();
        let (phys, aux) = crate::gfum::gfum_split(&out, 3).unwrap();
        assert_eq!(phys, *q);
        assert_eq!(aux, crate::gfum::gfum_split(&x, 3).unwrap().1);
    }

    #[test]
    fn proxy_e_output_is_orthonormal() {
        let mut reg = Registry::default();
        let net = ProxyE::new(&mut reg, "pe", 4, 6);
        let p = perturb(&reg.initialize(0), 0.3, 1);
        let out = eval(&p, &random(&[28, 6], 2), |v, x| net.apply(v, x));
        let (phys, _) = crate::gfum::gfum_split(&out, 4).unwrap();
        let m = crate::ops::to_matrix(&phys, 28, 4);
        assert!(orthonormality_error(&m) <= 1e-5);
    }

    #[test]
    fn proxy_e_gradient_check() {
        let mut reg = Registry::default();
        let net = ProxyE::new(&mut reg, "pe", 3, 5);
        let p = perturb(&reg.initialize(0), 0.3, 1);
        let report = grad_report(&p, &random(&[8, 5], 2), |v, x| net.apply(v, x));
        assert!(report.max_rel_error() <= 1e-3, "{:?}", report.worst());
    }

    #[test]
    fn proxy_a_identity_at_initialization_and_shape() {
        let mut reg = Registry::default();
        let net = ProxyA::new(&mut reg, "pa", 4, 2, 11);
        let x = random(&[32, 32, 4], 1);
        assert_eq!(eval(&reg.initialize(0), &x, |v, x| net.apply(v, x)), x);
        let p = perturb(&reg.initialize(0), 0.1, 2);
        assert_eq!(eval(&p, &x, |v, x| net.apply(v, x)).shape(), &[32, 32, 4]);
        assert_eq!(net.params(), reg.count());
    }

    #[test]
    fn proxy_a_rejects_odd_sizes() {
        let mut reg = Registry::default();
        let net = ProxyA::new(&mut reg, "pa", 3, 2, 5);
        let g = Graph::new();
        let vars = reg.initialize(0).bind(&g);
        assert!(net.apply(&vars, g.leaf(random(&[7, 8, 3], 1))).is_err());
        let deeper = ProxyA::new(&mut Registry::default(), "pa", 3, 3, 5);
        assert_eq!(deeper.multiple(), 4);
    }

    #[test]
    fn proxy_a_gradient_check() {
        let mut reg = Registry::default();
        let net = ProxyA::new(&mut reg, "pa", 3, 2, 5);
        let p = perturb(&reg.initialize(0), 0.3, 1);
        let report = grad_report(&p, &random(&[8, 6, 3], 2), |v, x| net.apply(v, x));
        assert!(report.max_rel_error() <= 1e-3, "{:?}", report.worst());
        assert!(report.nonzero() >= 15);
    }
}
