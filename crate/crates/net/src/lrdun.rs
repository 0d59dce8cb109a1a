//! The unfolded network: lifting, then `N` stages of
//! E-step, ProxyNet-E, A-step, ProxyNet-A.

use std::rc::Rc;

use lrsci_core::cassi::{HsiCube, Measurement, SensingSpec};
use lrsci_core::solver::{self, ClassicalInit, LowRankOperator};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::convert;
use crate::error::{invalid, NetError, Result};
use crate::gfum;
use crate::layers::{BandConv, Conv, WeightInit};
use crate::ops::{self, Physics};
use crate::ops::{softplus_inverse, softplus_value};
use crate::params::{Init, ParamSet, Registry};
use crate::proxy::{ProxyA, ProxyE};
use crate::tensor::Tensor;

/// Safety factor on `1 / L` for the initial step sizes.
const STEP_SAFETY: f64 = 0.9;
const CALIBRATION_POWER_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Number of unfolded stages `N`.
    pub stages: usize,
    /// Physical rank.
    pub k: usize,
    /// Feature dimension; `c == k` disables the auxiliary channels.
    pub c: usize,
    #[serde(default)]
    pub share_weights: bool,
    #[serde(default = "default_depth")]
    pub unet_depth: usize,
    #[serde(default = "default_kernel")]
    pub scab_kernel: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_depth() -> usize {
    2
}

fn default_kernel() -> usize {
    11
}

impl NetConfig {
    pub fn new(stages: usize, k: usize, c: usize) -> Self {
        Self {
            stages,
            k,
            c,
            share_weights: false,
            unet_depth: default_depth(),
            scab_kernel: default_kernel(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return invalid("stages must be >= 1");
        }
        if self.k == 0 || self.c < self.k {
            return invalid(format!("need C >= k >= 1, got k={}, C={}", self.k, self.c));
        }
        if self.scab_kernel.is_multiple_of(2) {
            return invalid(format!("scab_kernel must be odd, got {}", self.scab_kernel));
        }
        if self.unet_depth == 0 {
            return invalid("unet_depth must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Stage {
    rho_e: usize,
    rho_a: usize,
    proxies: usize,
}

#[derive(Debug, Clone)]
pub struct Lrdun {
    cfg: NetConfig,
    registry: Registry,
    e_lift: BandConv,
    a_lift: Conv,
    proxies: Vec<(ProxyE, ProxyA)>,
    stages: Vec<Stage>,
}

/// Physical factors and cube after one stage.
#[derive(Debug, Clone, Copy)]
pub struct StageOutput<'g> {
    pub e: Var<'g>,
    pub a: Var<'g>,
    pub x: Var<'g>,
}

#[derive(Debug)]
pub struct ForwardPass<'g> {
    pub stages: Vec<StageOutput<'g>>,
    /// Rows and columns of reflect padding added around each ProxyNet-A.
    pub padding: (usize, usize),
}

/// Values of one stage's outputs.
#[derive(Debug, Clone)]
pub struct StageValues {
    pub e: Tensor,
    pub a: Tensor,
    pub x: HsiCube,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub stages: Vec<StageValues>,
    pub padding: (usize, usize),
}

impl Reconstruction {
    pub fn cube(&self) -> &HsiCube {
        &self.stages.last().expect("at least one stage").x
    }
}

impl Lrdun {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut reg = Registry::default();
        let (k, c) = (cfg.k, cfg.c);
        let e_lift = BandConv::new(&mut reg, "init.e_lift", k, c, 1, WeightInit::FanIn);
        let a_lift = Conv::same(&mut reg, "init.a_lift", k + 1, c, 3, 1);
        let copies = if cfg.share_weights { 1 } else { cfg.stages };
        let mut proxies = Vec::with_capacity(copies);
        let mut stages = Vec::with_capacity(cfg.stages);
        for i in 0..cfg.stages {
            let rho_e = reg.add(format!("stage{i}.rho_e"), vec![1], Init::Const(0.0));
            let rho_a = reg.add(format!("stage{i}.rho_a"), vec![1], Init::Const(0.0));
            if i < copies {
                let prefix = if cfg.share_weights {
                    "shared".to_string()
                } else {
                    format!("stage{i}")
                };
                proxies.push((
                    ProxyE::new(&mut reg, &format!("{prefix}.proxy_e"), k, c),
                    ProxyA::new(
                        &mut reg,
                        &format!("{prefix}.proxy_a"),
                        c,
                        cfg.unet_depth,
                        cfg.scab_kernel,
                    ),
                ));
            }
            stages.push(Stage {
                rho_e,
                rho_a,
                proxies: i.min(copies - 1),
            });
        }
        Ok(Self {
            cfg,
            registry: reg,
            e_lift,
            a_lift,
            proxies,
            stages,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub(crate) fn lift_macs(&self, h: usize, w: usize, bands: usize) -> u64 {
        self.e_lift.macs(bands) + self.a_lift.macs(h, w)
    }

    pub fn proxy_e(&self, stage: usize) -> &ProxyE {
        &self.proxies[self.stages[stage].proxies].0
    }

    pub fn proxy_a(&self, stage: usize) -> &ProxyA {
        &self.proxies[self.stages[stage].proxies].1
    }

    /// Seeded parameters with both step sizes of every stage set to
    /// `0.9 / L` for the operators seen at the first stage on `(y, spec)`.
    pub fn initial_params(&self, y: &Measurement, spec: &SensingSpec) -> Result<ParamSet> {
        let mut params = self.registry.initialize(self.cfg.seed);
        let init = solver::init_classical(y, spec, self.cfg.k)?;
        let g = Graph::new();
        let p = params.bind(&g);
        let (e_feat, a_feat) = self.lift(&g, &p, spec, &init)?;
        let k = self.cfg.k;
        let e_phys = ops::slice_last(e_feat, 0, k)?;
        let a_phys = convert::tensor_images(&ops::slice_last(a_feat, 0, k)?.value())?;
        let seed = self.cfg.seed;
        let l_e = solver::estimate_lipschitz(
            LowRankOperator::Basis(&a_phys),
            spec,
            CALIBRATION_POWER_ITERS,
            seed,
        )?;
        let q = convert::tensor_basis(&ops::qr(e_phys)?.value())?;
        let l_a = solver::estimate_lipschitz(
            LowRankOperator::Subspace(&q),
            spec,
            CALIBRATION_POWER_ITERS,
            seed.wrapping_add(1),
        )?;
        let step = |l: f64| {
            if l > 0.0 {
                STEP_SAFETY / l
            } else {
                log::warn!("zero operator norm during step-size calibration; using 1.0");
                1.0
            }
        };
        let (theta_e, theta_a) = (softplus_inverse(step(l_e)), softplus_inverse(step(l_a)));
        for st in &self.stages {
            params.tensors_mut()[st.rho_e] = Tensor::scalar(theta_e);
            params.tensors_mut()[st.rho_a] = Tensor::scalar(theta_a);
        }
        Ok(params)
    }

    /// `(rho_e, rho_a)` of every stage.
    pub fn step_sizes(&self, params: &ParamSet) -> Vec<(f64, f64)> {
        self.stages
            .iter()
            .map(|s| {
                (
                    softplus_value(params.tensors()[s.rho_e].item()),
                    softplus_value(params.tensors()[s.rho_a].item()),
                )
            })
            .collect()
    }

    fn lift<'g>(
        &self,
        g: &'g Graph,
        p: &[Var<'g>],
        spec: &SensingSpec,
        init: &ClassicalInit,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let e0 = g.leaf(convert::basis_tensor(&init.basis));
        let a0 = g.leaf(convert::images_tensor(&init.subspace));
        let mask = g.leaf(convert::mask_tensor(spec.mask()));
        let e_feat = self.e_lift.apply(p, e0)?;
        let a_feat = self.a_lift.apply(p, ops::concat_last(a0, mask)?)?;
        Ok((e_feat, a_feat))
    }

    fn padding_for(&self, h: usize, w: usize) -> (usize, usize) {
        let m = self.proxies[0].1.multiple();
        ((m - h % m) % m, (m - w % m) % m)
    }

    /// Records the full unfolded pass on `g`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        p: &[Var<'g>],
        phys: &Rc<Physics>,
        init: &ClassicalInit,
    ) -> Result<ForwardPass<'g>> {
        if p.len() != self.registry.specs().len() {
            return invalid(format!(
                "expected {} parameter tensors, got {}",
                self.registry.specs().len(),
                p.len()
            ));
        }
        let spec = &phys.spec;
        let (h, w) = (spec.height(), spec.width());
        let k = self.cfg.k;
        let padding = self.padding_for(h, w);
        if padding != (0, 0) {
            log::info!(
                "reflect-padding {h}x{w} by {}x{} around the U-Net",
                padding.0,
                padding.1
            );
        }
        let (mut e_feat, mut a_feat) = self.lift(g, p, spec, init)?;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            let rho_e = ops::softplus(p[st.rho_e]);
            let rho_a = ops::softplus(p[st.rho_a]);
            let a_phys = ops::slice_last(a_feat, 0, k)?;
            let e_half = gfum::df_feature_e(e_feat, a_phys, rho_e, k, phys)?;
            e_feat = self.proxy_e(i).apply(p, e_half)?;
            let e_phys = ops::slice_last(e_feat, 0, k)?;
            let a_half = gfum::df_feature_a(a_feat, e_phys, rho_a, k, phys)?;
            a_feat = if padding == (0, 0) {
                self.proxy_a(i).apply(p, a_half)?
            } else {
                let padded = ops::pad_reflect2d(a_half, padding.0, padding.1)?;
                ops::crop2d(self.proxy_a(i).apply(p, padded)?, h, w)?
            };
            let a_phys = ops::slice_last(a_feat, 0, k)?;
            let x = ops::compose(a_phys, e_phys)?;
            if !x.value().all_finite() {
                return Err(NetError::Diverged(format!("stage {i} output")));
            }
            out.push(StageOutput {
                e: e_phys,
                a: a_phys,
                x,
            });
        }
        Ok(ForwardPass {
            stages: out,
            padding,
        })
    }

    /// Inference on one measurement.
    pub fn reconstruct(
        &self,
        params: &ParamSet,
        y: &Measurement,
        spec: &SensingSpec,
    ) -> Result<Reconstruction> {
        params.check(&self.registry)?;
        let init = solver::init_classical(y, spec, self.cfg.k)?;
        let phys = Rc::new(Physics::new(y.clone(), spec.clone()));
        let g = Graph::new();
        let p = params.bind(&g);
        let pass = self.forward(&g, &p, &phys, &init)?;
        let stages = pass
            .stages
            .iter()
            .map(|s| {
                Ok(StageValues {
                    e: (*s.e.value()).clone(),
                    a: (*s.a.value()).clone(),
                    x: convert::tensor_cube(&s.x.value())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Reconstruction {
            stages,
            padding: pass.padding,
        })
    }
}

/// `sum_i sqrt(mean((X^i - x_gt)^2))`, all stages weighted equally.
pub fn multi_stage_loss<'g>(xs: &[Var<'g>], x_gt: &Tensor) -> Result<Var<'g>> {
    let mut iter = xs.iter();
    let first = iter
        .next()
        .ok_or_else(|| NetError::InvalidArgument("no stage outputs".into()))?;
    let mut total = ops::rmse(*first, x_gt)?;
    for x in iter {
        total = ops::add(total, ops::rmse(*x, x_gt)?)?;
    }
    Ok(total)
}

/// Value-only form of [`multi_stage_loss`].
pub fn multi_stage_loss_values(xs: &[HsiCube], x_gt: &HsiCube) -> Result<f64> {
    let g = Graph::new();
    let vars: Vec<Var<'_>> = xs.iter().map(|x| g.leaf(convert::cube_tensor(x))).collect();
    Ok(multi_stage_loss(&vars, &convert::cube_tensor(x_gt))?
        .value()
        .item())
}
