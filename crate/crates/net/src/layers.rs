//! Parameterized building blocks.

use crate::autodiff::Var;
use crate::error::Result;
use crate::ops::{self, Conv2dOpts};
use crate::params::{Init, Registry};

/// Parameter count of a convolution layer.
pub fn conv_param_count(
    cin: usize,
    cout: usize,
    kernel: (usize, usize),
    groups: usize,
    bias: bool,
) -> usize {
    cout * (cin / groups) * kernel.0 * kernel.1 + if bias { cout } else { 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    FanIn,
    Zeros,
}

/// 2-D convolution over channel-last `H x W x C` features.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: usize,
    bias: Option<usize>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub opts: Conv2dOpts,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        reg: &mut Registry,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        opts: Conv2dOpts,
        bias: bool,
        init: WeightInit,
    ) -> Self {
        let fan_in = (cin / opts.groups) * kernel.0 * kernel.1;
        let pick = |i: WeightInit| match i {
            WeightInit::FanIn => Init::FanIn(fan_in),
            WeightInit::Zeros => Init::Zeros,
        };
        let weight = reg.add(
            format!("{name}.weight"),
            vec![cout, cin / opts.groups, kernel.0, kernel.1],
            pick(init),
        );
        let bias = bias.then(|| reg.add(format!("{name}.bias"), vec![cout], pick(init)));
        Self {
            weight,
            bias,
            cin,
            cout,
            kernel,
            opts,
        }
    }

    /// `1 x 1` convolution.
    pub fn pointwise(
        reg: &mut Registry,
        name: &str,
        cin: usize,
        cout: usize,
        init: WeightInit,
    ) -> Self {
        Self::new(
            reg,
            name,
            cin,
            cout,
            (1, 1),
            Conv2dOpts::default(),
            true,
            init,
        )
    }

    /// Odd square kernel with "same" zero padding.
    pub fn same(
        reg: &mut Registry,
        name: &str,
        cin: usize,
        cout: usize,
        size: usize,
        groups: usize,
    ) -> Self {
        let opts = Conv2dOpts {
            stride: 1,
            pad_h: size / 2,
            pad_w: size / 2,
            groups,
        };
        Self::new(
            reg,
            name,
            cin,
            cout,
            (size, size),
            opts,
            true,
            WeightInit::FanIn,
        )
    }

    pub fn apply<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        ops::conv2d(x, p[self.weight], self.bias.map(|b| p[b]), self.opts)
    }

    pub fn params(&self) -> usize {
        conv_param_count(
            self.cin,
            self.cout,
            self.kernel,
            self.opts.groups,
            self.bias.is_some(),
        )
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let s = self.opts.stride;
        (
            (h + 2 * self.opts.pad_h - self.kernel.0) / s + 1,
            (w + 2 * self.opts.pad_w - self.kernel.1) / s + 1,
        )
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_dims(h, w);
        (oh * ow * self.cout * (self.cin / self.opts.groups) * self.kernel.0 * self.kernel.1) as u64
    }
}

/// 1-D convolution along the band axis of a `B x C` feature matrix.
#[derive(Debug, Clone)]
pub struct BandConv {
    conv: Conv,
}

impl BandConv {
    pub fn new(
        reg: &mut Registry,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        init: WeightInit,
    ) -> Self {
        let opts = Conv2dOpts {
            stride: 1,
            pad_h: 0,
            pad_w: kernel / 2,
            groups: 1,
        };
        Self {
            conv: Conv::new(reg, name, cin, cout, (1, kernel), opts, true, init),
        }
    }

    pub fn apply<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        let b = shape[0];
        let x3 = ops::reshape(x, vec![1, b, self.conv.cin])?;
        let y = self.conv.apply(p, x3)?;
        ops::reshape(y, vec![b, self.conv.cout])
    }

    pub fn params(&self) -> usize {
        self.conv.params()
    }

    pub fn macs(&self, bands: usize) -> u64 {
        self.conv.macs(1, bands)
    }
}

/// Channel layer norm with a per-channel affine map.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: usize,
    beta: usize,
    channels: usize,
}

impl LayerNorm {
    pub fn new(reg: &mut Registry, name: &str, channels: usize) -> Self {
        Self {
            gamma: reg.add(format!("{name}.gamma"), vec![channels], Init::Const(1.0)),
            beta: reg.add(format!("{name}.beta"), vec![channels], Init::Zeros),
            channels,
        }
    }

    pub fn apply<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        ops::layer_norm(x, p[self.gamma], p[self.beta])
    }

    pub fn params(&self) -> usize {
        2 * self.channels
    }
}
