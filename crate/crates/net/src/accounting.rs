//! Analytic parameter and operation counts.

use serde::Serialize;

use crate::error::Result;
use crate::lrdun::{Lrdun, NetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Complexity {
    pub params: usize,
    /// Multiply-accumulates of convolutions and matrix products.
    pub macs: u64,
    /// `2 * macs` plus the elementwise work of the sensing operator.
    pub flops: u64,
}

/// Cost of one data-fidelity gradient step on a factor with `update`
/// entries: composing `A E^T` and contracting the back-projection with the
/// other factor (both `HWBk` MACs), plus mask multiplies, shifted
/// accumulation, residual, back-projection mask and the update itself.
fn data_fidelity_cost(
    h: usize,
    w: usize,
    out_w: usize,
    b: usize,
    k: usize,
    update: usize,
) -> (u64, u64) {
    let macs = (2 * h * w * b * k) as u64;
    let elementwise = (3 * h * w * b + h * out_w + 2 * update) as u64;
    (macs, elementwise)
}

/// Counts for an `H x W x B` input with dispersion step `step`.
///
/// Layer norms, activations, gating products and the classical
/// initialization are not counted.
pub fn count_params_flops(
    cfg: &NetConfig,
    h: usize,
    w: usize,
    bands: usize,
    step: usize,
) -> Result<Complexity> {
    let net = Lrdun::new(cfg.clone())?;
    let k = cfg.k;
    let out_w = w + step * bands.saturating_sub(1);
    let m = net.proxy_a(0).multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);

    let mut macs = net.lift_macs(h, w, bands);
    let mut elementwise = 0;
    for i in 0..cfg.stages {
        let (m_e, el_e) = data_fidelity_cost(h, w, out_w, bands, k, bands * k);
        let (m_a, el_a) = data_fidelity_cost(h, w, out_w, bands, k, h * w * k);
        macs += m_e + m_a;
        elementwise += el_e + el_a;
        macs += net.proxy_e(i).macs(bands) + net.proxy_a(i).macs(ph, pw);
        // stage output X = A E^T
        macs += (h * w * bands * k) as u64;
    }
    Ok(Complexity {
        params: net.registry().count(),
        macs,
        flops: 2 * macs + elementwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::conv_param_count;

    fn toy() -> NetConfig {
        NetConfig::new(2, 3, 6)
    }

    #[test]
    fn single_band_conv() {
        assert_eq!(conv_param_count(4, 8, (1, 3), 1, false), 96);
    }

    /// Layer-by-layer tally for k = 3, C = 6, N = 2, two U-Net scales,
    /// 11 x 11 attention kernels, no sharing.
    #[test]
    fn toy_tally() {
        let scab = |c: usize| {
            2 * c                       // ln1
                + 3 * (c * c + c)       // value, gate_in, out
                + (121 * c + c)         // depthwise 11 x 11
                + 2 * c                 // ln2
                + (c * 2 * c + 2 * c)   // ff_in
                + (2 * c * c + c) // ff_out
        };
        assert_eq!(scab(6), 1044);
        assert_eq!(scab(12), 2592);
        let init = (3 * 6 + 6) + (4 * 6 * 9 + 6); // band lift + 3 x 3 lift
        let proxy_e = 2 * ((6 * 12 * 3 + 12) + (12 * 6 * 3 + 6));
        let proxy_a = scab(6)
            + (6 * 12 * 4 + 12) // 2 x 2 stride-2 down
            + scab(12)
            + (12 * 6 + 6)      // project after upsampling
            + (12 * 6 + 6)      // skip fusion
            + scab(6)
            + (6 * 6 + 6); // output
        let stage = 2 + proxy_e + proxy_a;
        assert_eq!(init + 2 * stage, 12406);
        let c = count_params_flops(&toy(), 32, 32, 8, 2).unwrap();
        assert_eq!(c.params, 12406);
        let shared = NetConfig {
            share_weights: true,
            ..toy()
        };
        assert_eq!(
            count_params_flops(&shared, 32, 32, 8, 2).unwrap().params,
            6328
        );
    }

    #[test]
    fn stage_parameters_double_with_stages() {
        let base = |n: usize| count_params_flops(&NetConfig::new(n, 3, 6), 32, 32, 8, 2).unwrap();
        let init = 246;
        assert_eq!(base(4).params - init, 2 * (base(2).params - init));
        assert_eq!(base(3).macs - base(2).macs, base(2).macs - base(1).macs);
    }

    #[test]
    fn flops_include_the_sensing_operator() {
        let c = count_params_flops(&toy(), 32, 32, 8, 2).unwrap();
        assert!(c.flops > 2 * c.macs);
        let (h, w, b, k) = (32u64, 32u64, 8u64, 3u64);
        // per stage: two steps of two HWBk contractions plus the output composition
        let physics_macs = 2 * (2 * 2 * h * w * b * k + h * w * b * k);
        assert!(c.macs > physics_macs);
    }
}
