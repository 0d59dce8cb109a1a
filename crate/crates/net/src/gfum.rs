//! Feature-lifted variables: the first `k` channels are the physical
//! factor and obey the data-fidelity step, the remaining channels are
//! carried through it untouched.

use std::rc::Rc;

use lrsci_core::cassi::{Measurement, SensingSpec};

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, NetError, Result};
use crate::ops::{self, Physics};
use crate::tensor::Tensor;

/// Lifted basis (`B x C`) and subspace images (`H x W x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    pub e_feat: Tensor,
    pub a_feat: Tensor,
    pub k: usize,
}

impl FeatureState {
    pub fn new(e_feat: Tensor, a_feat: Tensor, k: usize) -> Result<Self> {
        let (ce, ca) = (e_feat.channels(), a_feat.channels());
        if e_feat.shape().len() != 2 || a_feat.shape().len() != 3 || ce != ca {
            return Err(NetError::Shape(format!(
                "feature state {:?} / {:?}",
                e_feat.shape(),
                a_feat.shape()
            )));
        }
        if k == 0 || k > ce {
            return invalid(format!("need 1 <= k <= C, got k={k}, C={ce}"));
        }
        Ok(Self { e_feat, a_feat, k })
    }

    pub fn features(&self) -> usize {
        self.e_feat.channels()
    }
}

/// Splits the trailing axis into the first `k` and the remaining channels.
pub fn gfum_split(feat: &Tensor, k: usize) -> Result<(Tensor, Tensor)> {
    let c = feat.channels();
    if k > c {
        return invalid(format!("physical rank {k} exceeds feature dim {c}"));
    }
    let g = Graph::new();
    let x = g.leaf(feat.clone());
    let phys = ops::slice_last(x, 0, k)?.value();
    let aux = ops::slice_last(x, k, c)?.value();
    Ok(((*phys).clone(), (*aux).clone()))
}

fn check_rank(feat: &Var<'_>, k: usize) -> Result<usize> {
    let c = *feat.shape().last().unwrap_or(&0);
    if k == 0 || k > c {
        return invalid(format!("physical rank {k} with feature dim {c}"));
    }
    Ok(c)
}

fn with_aux<'g>(feat: Var<'g>, phys: Var<'g>, k: usize, c: usize) -> Result<Var<'g>> {
    if c == k {
        Ok(phys)
    } else {
        ops::concat_last(phys, ops::slice_last(feat, k, c)?)
    }
}

/// Data-fidelity step on the physical channels of `E_feat` (`B x C`),
/// with `a_phys` the current physical subspace images.
pub fn df_feature_e<'g>(
    e_feat: Var<'g>,
    a_phys: Var<'g>,
    rho: Var<'g>,
    k: usize,
    phys: &Rc<Physics>,
) -> Result<Var<'g>> {
    let c = check_rank(&e_feat, k)?;
    let e = ops::gd_step_e(ops::slice_last(e_feat, 0, k)?, a_phys, rho, phys)?;
    with_aux(e_feat, e, k, c)
}

/// Data-fidelity step on the physical channels of `A_feat` (`H x W x C`).
pub fn df_feature_a<'g>(
    a_feat: Var<'g>,
    e_phys: Var<'g>,
    rho: Var<'g>,
    k: usize,
    phys: &Rc<Physics>,
) -> Result<Var<'g>> {
    let c = check_rank(&a_feat, k)?;
    let a = ops::gd_step_a(ops::slice_last(a_feat, 0, k)?, e_phys, rho, phys)?;
    with_aux(a_feat, a, k, c)
}

fn physics(y: &Measurement, spec: &SensingSpec) -> Rc<Physics> {
    Rc::new(Physics::new(y.clone(), spec.clone()))
}

/// Value-only form of [`df_feature_e`]; `k` is the channel count of
/// `a_physical`.
pub fn data_fidelity_feature_e(
    e_feat: &Tensor,
    y: &Measurement,
    spec: &SensingSpec,
    a_physical: &Tensor,
    rho_e: f64,
) -> Result<Tensor> {
    let g = Graph::new();
    let k = a_physical.channels();
    let out = df_feature_e(
        g.leaf(e_feat.clone()),
        g.leaf(a_physical.clone()),
        g.leaf(Tensor::scalar(rho_e)),
        k,
        &physics(y, spec),
    )?;
    Ok((*out.value()).clone())
}

/// Value-only form of [`df_feature_a`]; `k` is the channel count of
/// `e_physical`.
pub fn data_fidelity_feature_a(
    a_feat: &Tensor,
    y: &Measurement,
    spec: &SensingSpec,
    e_physical: &Tensor,
    rho_a: f64,
) -> Result<Tensor> {
    let g = Graph::new();
    let k = e_physical.channels();
    let out = df_feature_a(
        g.leaf(a_feat.clone()),
        g.leaf(e_physical.clone()),
        g.leaf(Tensor::scalar(rho_a)),
        k,
        &physics(y, spec),
    )?;
    Ok((*out.value()).clone())
}
