//! The data-fidelity gradient steps as fused differentiable operations.
//!
//! Forward values come straight from the classical solver, so the physical
//! update inside the network is the same computation. For the backward
//! pass, write `S = unfold(Phi^T Phi vec(...))` for the normal-operator
//! image of a cotangent direction:
//!
//! * `E' = E - rho Z^T A`: with `S` from `A E_bar^T`,
//!   `E_bar -= rho S^T A`, `A_bar = -rho (S E + Z E_bar)`.
//! * `A' = A - rho Z E`: with `S` from `A_bar E^T`,
//!   `A_bar -= rho S E`, `E_bar = -rho (S^T A + Z^T A_bar)`.
//!
//! `Z` is the unfolded back-projection of the residual and `rho_bar` is
//! `-<upstream, Z^T A>` or `-<upstream, Z E>` respectively.

use std::rc::Rc;

use lrsci_core::cassi::{adjoint, forward, HsiCube, Measurement, SensingSpec};
use lrsci_core::lowrank::{SpectralBasis, SubspaceImages};
use lrsci_core::solver;
use nalgebra::DMatrix;

use super::linalg::{from_matrix, to_matrix};
use crate::autodiff::Var;
use crate::error::{NetError, Result};
use crate::tensor::Tensor;

/// The fixed measurement and sensing operator for one sample.
#[derive(Debug, Clone)]
pub struct Physics {
    pub y: Measurement,
    pub spec: SensingSpec,
}

impl Physics {
    pub fn new(y: Measurement, spec: SensingSpec) -> Self {
        Self { y, spec }
    }

    fn hw(&self) -> (usize, usize) {
        (self.spec.height(), self.spec.width())
    }

    fn basis(&self, e: &Tensor) -> Result<SpectralBasis> {
        match e.shape() {
            [b, k] if *b == self.spec.bands() => Ok(SpectralBasis::new(to_matrix(e, *b, *k))?),
            s => Err(NetError::Shape(format!(
                "basis {s:?} for {} bands",
                self.spec.bands()
            ))),
        }
    }

    fn images(&self, a: &Tensor) -> Result<SubspaceImages> {
        let (h, w) = self.hw();
        match a.shape() {
            [ah, aw, k] if (*ah, *aw) == (h, w) => {
                Ok(SubspaceImages::new(h, w, to_matrix(a, h * w, *k))?)
            }
            s => Err(NetError::Shape(format!(
                "subspace images {s:?} for {h}x{w}"
            ))),
        }
    }

    /// `unfold(adjoint(r))` for `r = Phi vec(A E^T) - y`.
    fn residual_backprojection(&self, a: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
        self.normal_of(a, e, true)
    }

    /// `unfold(Phi^T (Phi vec(A E^T) [- y]))`.
    fn normal_of(&self, a: &DMatrix<f64>, e: &DMatrix<f64>, subtract_y: bool) -> DMatrix<f64> {
        let (h, w) = self.hw();
        let x = HsiCube::from_unfolded(h, w, &(a * e.transpose())).expect("finite");
        let mut r = forward(&x, &self.spec).expect("checked shapes");
        if subtract_y {
            r = r.sub(&self.y).expect("checked shapes");
        }
        adjoint(&r, &self.spec).expect("checked shapes").unfold()
    }
}

fn scalar_of(rho: &Tensor) -> Result<f64> {
    if rho.len() != 1 {
        return Err(NetError::Shape(format!(
            "step size must be a scalar, got {:?}",
            rho.shape()
        )));
    }
    Ok(rho.item())
}

fn core_to_net(err: lrsci_core::Error, what: &str) -> NetError {
    match err {
        lrsci_core::Error::Diverged { .. } => NetError::Diverged(what.to_string()),
        other => NetError::Core(other),
    }
}

/// `E - rho Phi_A^T (Phi_A e - y)` with `A` the physical subspace images.
pub fn gd_step_e<'g>(e: Var<'g>, a: Var<'g>, rho: Var<'g>, phys: &Rc<Physics>) -> Result<Var<'g>> {
    let (ev, av, rv) = (e.value(), a.value(), rho.value());
    let (basis, images) = (phys.basis(&ev)?, phys.images(&av)?);
    let r = scalar_of(&rv)?;
    let next = solver::gd_step_e(&basis, &images, &phys.y, &phys.spec, r)
        .map_err(|err| core_to_net(err, "E-step"))?;
    let (b, k) = (basis.bands(), basis.rank());
    let out = from_matrix(next.matrix(), vec![b, k]);
    let (h, w) = phys.hw();
    let phys = Rc::clone(phys);
    let (ie, ia, ir) = (e.id, a.id, rho.id);
    Ok(e.graph.push(
        out,
        Box::new(move |g| {
            let em = basis.matrix();
            let am = images.matrix();
            let gbar = to_matrix(g, b, k);
            let z = phys.residual_backprojection(am, em);
            let s = phys.normal_of(am, &gbar, false);
            let grad = z.transpose() * am;
            let ge = &gbar - (s.transpose() * am) * r;
            let ga = -(s * em + &z * &gbar) * r;
            let gr = -gbar.dot(&grad);
            vec![
                (ie, from_matrix(&ge, vec![b, k])),
                (ia, from_matrix(&ga, vec![h, w, k])),
                (ir, Tensor::scalar(gr)),
            ]
        }),
    ))
}

/// `A - rho Phi_E^T (Phi_E a - y)` with `E` the physical basis.
pub fn gd_step_a<'g>(a: Var<'g>, e: Var<'g>, rho: Var<'g>, phys: &Rc<Physics>) -> Result<Var<'g>> {
    let (av, ev, rv) = (a.value(), e.value(), rho.value());
    let (basis, images) = (phys.basis(&ev)?, phys.images(&av)?);
    let r = scalar_of(&rv)?;
    let next = solver::gd_step_a(&images, &basis, &phys.y, &phys.spec, r)
        .map_err(|err| core_to_net(err, "A-step"))?;
    let (b, k) = (basis.bands(), basis.rank());
    let (h, w) = phys.hw();
    let out = from_matrix(next.matrix(), vec![h, w, k]);
    let phys = Rc::clone(phys);
    let (ia, ie, ir) = (a.id, e.id, rho.id);
    Ok(a.graph.push(
        out,
        Box::new(move |g| {
            let em = basis.matrix();
            let am = images.matrix();
            let gbar = to_matrix(g, h * w, k);
            let z = phys.residual_backprojection(am, em);
            let s = phys.normal_of(&gbar, em, false);
            let grad = &z * em;
            let ga = &gbar - (&s * em) * r;
            let ge = -(s.transpose() * am + z.transpose() * &gbar) * r;
            let gr = -gbar.dot(&grad);
            vec![
                (ia, from_matrix(&ga, vec![h, w, k])),
                (ie, from_matrix(&ge, vec![b, k])),
                (ir, Tensor::scalar(gr)),
            ]
        }),
    ))
}
