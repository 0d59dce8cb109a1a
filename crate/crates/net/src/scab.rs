//! Spatial conv attention block.

use crate::autodiff::Var;
use crate::error::Result;
use crate::layers::{Conv, LayerNorm, WeightInit};
use crate::ops;
use crate::params::Registry;

/// `x + W_o (v * dw(W_a n))` with `n = LN(x)`, `v = W_v n`, followed by a
/// residual feed-forward block `x + W_2 gelu(W_1 LN(x))`. The large
/// depthwise kernel gives each block its spatial reach.
#[derive(Debug, Clone)]
pub struct Scab {
    ln1: LayerNorm,
    value: Conv,
    gate_in: Conv,
    gate_dw: Conv,
    out: Conv,
    ln2: LayerNorm,
    ff_in: Conv,
    ff_out: Conv,
    channels: usize,
}

impl Scab {
    pub fn new(reg: &mut Registry, name: &str, channels: usize, kernel: usize) -> Self {
        let c = channels;
        Self {
            ln1: LayerNorm::new(reg, &format!("{name}.ln1"), c),
            value: Conv::pointwise(reg, &format!("{name}.value"), c, c, WeightInit::FanIn),
            gate_in: Conv::pointwise(reg, &format!("{name}.gate_in"), c, c, WeightInit::FanIn),
            gate_dw: Conv::same(reg, &format!("{name}.gate_dw"), c, c, kernel, c),
            out: Conv::pointwise(reg, &format!("{name}.out"), c, c, WeightInit::Zeros),
            ln2: LayerNorm::new(reg, &format!("{name}.ln2"), c),
            ff_in: Conv::pointwise(reg, &format!("{name}.ff_in"), c, 2 * c, WeightInit::FanIn),
            ff_out: Conv::pointwise(reg, &format!("{name}.ff_out"), 2 * c, c, WeightInit::Zeros),
            channels,
        }
    }

    pub fn apply<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let n = self.ln1.apply(p, x)?;
        let v = self.value.apply(p, n)?;
        let attn = self.gate_dw.apply(p, self.gate_in.apply(p, n)?)?;
        let x = ops::add(x, self.out.apply(p, ops::mul(v, attn)?)?)?;
        let n = self.ln2.apply(p, x)?;
        let f = self.ff_out.apply(p, ops::gelu(self.ff_in.apply(p, n)?)?)?;
        ops::add(x, f)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn params(&self) -> usize {
        self.ln1.params()
            + self.value.params()
            + self.gate_in.params()
            + self.gate_dw.params()
            + self.out.params()
            + self.ln2.params()
            + self.ff_in.params()
            + self.ff_out.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        // the gating product is elementwise and not counted
        [
            &self.value,
            &self.gate_in,
            &self.gate_dw,
            &self.out,
            &self.ff_in,
            &self.ff_out,
        ]
        .iter()
        .map(|c| c.macs(h, w))
        .sum()
    }
}
