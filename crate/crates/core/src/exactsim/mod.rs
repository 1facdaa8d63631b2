//! Exact dynamics of the spin-boson lattice on small systems (N <= 3) in a
//! truncated Fock space. Serves as the brute-force oracle for the bounds, the
//! impulsive closed form and the linear-response protocol.

pub mod commutator;
pub mod dominance;
pub mod evolve;
pub mod fock;
pub mod protocol;
pub mod sparse;

pub use commutator::{boson_commutator_norm, spin_commutator_norm, spin_commutator_norms, spin_commutator_norms_along};
pub use dominance::{dominance_suite, DominanceConfig, DominanceReport, DrawReport};
pub use evolve::{unitarity_defect, EvolveOptions, StateBlock, Stepper};
pub use fock::{assemble, Axis, FockBuilder, FockSystem, Frame, Quadrature, TimeFn, DEFAULT_DIM_CAP};
pub use protocol::{linear_response_protocol, ProtocolConfig, ProtocolReport, Regime, SpinBosonParams};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::propagator::{impulsive_phase_shaped, ConstantPropagation, ModalPropagator, PropagatorFamily, PulseShape};

/// Impulsive-regime commutator for delta kicks theta_j at t0 (site j) and
/// theta_i at t_f (site i), with phase phi = W^xp_ij(t_f, t0) theta_i theta_j.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImpulsiveClosedForm {
    pub w_xp: f64,
    pub phase: f64,
    /// 8 |sin(phi)|, the expression quoted for the bound.
    pub printed: f64,
    /// 2 |sin(2 phi)|, the exact norm of [sigma_i^x(t_f), sigma_j^x(t0)].
    pub exact: f64,
}

impl ImpulsiveClosedForm {
    pub fn from_phase(w_xp: f64, phase: f64) -> Self {
        ImpulsiveClosedForm {
            w_xp,
            phase,
            printed: 8.0 * phase.sin().abs(),
            exact: 2.0 * (2.0 * phase).sin().abs(),
        }
    }
}

/// Closed form for delta kicks, from the free propagator of Q.
#[allow(clippy::too_many_arguments)]
pub fn impulsive_closed_form(
    q: &DMatrix<f64>,
    h: f64,
    i: usize,
    j: usize,
    theta_i: f64,
    theta_j: f64,
    t0: f64,
    t_f: f64,
) -> Result<ImpulsiveClosedForm> {
    if h != 0.0 {
        return Err(Error::NotApplicable("the impulsive closed form needs h = 0".into()));
    }
    if t_f < t0 {
        return Err(Error::NonMonotoneGrid);
    }
    let prop = ConstantPropagation::new(q, t0)?;
    let n = prop.n();
    if i >= n || j >= n {
        return Err(Error::InvalidParameter("site out of range".into()));
    }
    let w = prop.at(t_f).xp(i, j);
    Ok(ImpulsiveClosedForm::from_phase(w, w * theta_i * theta_j))
}

/// Closed form for finite, non-overlapping pulses: the delta-kick phase is
/// replaced by the time-ordered double integral of the pulse profiles.
pub fn impulsive_closed_form_shaped(
    q: &DMatrix<f64>,
    i: usize,
    j: usize,
    pulse_i: &PulseShape,
    pulse_j: &PulseShape,
) -> Result<ImpulsiveClosedForm> {
    let modal = ModalPropagator::new(q, 0.0)?
        .ok_or_else(|| Error::Unsupported("shaped pulses need a structured Q".into()))?;
    let phase = impulsive_phase_shaped(&modal, i, j, pulse_i, pulse_j, 1e-12)?;
    let scale = pulse_i.area() * pulse_j.area();
    let w = if scale != 0.0 { phase / scale } else { 0.0 };
    Ok(ImpulsiveClosedForm::from_phase(w, phase))
}

/// Fock-space value of ||[sigma_i^x(t_end), sigma_j^x(0)]|| for sigma^z force
/// pulses on sites i and j and no transverse field.
#[allow(clippy::too_many_arguments)]
pub fn impulsive_fock(
    q: &DMatrix<f64>,
    omega_ref: f64,
    i: usize,
    j: usize,
    pulse_i: PulseShape,
    pulse_j: PulseShape,
    t_end: f64,
    n_max: usize,
    opts: &EvolveOptions,
) -> Result<f64> {
    let n = q.nrows() / 2;
    let mut b = FockBuilder::new(n, n_max, Frame::Rotating { omega_ref })?.quadratic(q)?;
    b = b.force(j, Axis::Z, TimeFn::pulse(pulse_j))?;
    if i != j {
        b = b.force(i, Axis::Z, TimeFn::pulse(pulse_i))?;
    }
    let sys = b.build();
    spin_commutator_norm(&sys, i, Axis::X, j, Axis::X, t_end, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q2() -> DMatrix<f64> {
        let mut q = DMatrix::identity(4, 4);
        q[(0, 0)] = 0.9;
        q[(2, 2)] = 0.9;
        q[(0, 2)] = 0.1;
        q[(2, 0)] = 0.1;
        q
    }

    #[test]
    fn closed_form_basics() {
        let c = impulsive_closed_form(&q2(), 0.0, 0, 1, 0.0, 1.0, 0.0, 5.0).unwrap();
        assert_eq!(c.printed, 0.0);
        assert_eq!(c.exact, 0.0);
        assert!(impulsive_closed_form(&q2(), 0.1, 0, 1, 1.0, 1.0, 0.0, 5.0).is_err());
        let mut prev_sign = 0.0;
        let mut changes = 0;
        for k in 0..200 {
            let c = impulsive_closed_form(&q2(), 0.0, 0, 1, 1.0, 1.0, 0.0, 0.2 * k as f64).unwrap();
            assert!(c.printed <= 8.0 && c.exact <= 2.0 && c.exact <= c.printed + 1e-15);
            let s = c.w_xp.signum();
            if s != 0.0 && prev_sign != 0.0 && s != prev_sign {
                changes += 1;
            }
            prev_sign = s;
        }
        assert!(changes > 2);
    }

    #[test]
    fn shaped_closed_form_approaches_delta_kicks() {
        let (t0, tf) = (1.0, 6.0);
        let delta = impulsive_closed_form(&q2(), 0.0, 0, 1, 0.8, 0.8, t0, tf).unwrap();
        let pi = PulseShape::Gaussian { center: tf, width: 1e-3, area: 0.8 };
        let pj = PulseShape::Gaussian { center: t0, width: 1e-3, area: 0.8 };
        let shaped = impulsive_closed_form_shaped(&q2(), 0, 1, &pi, &pj).unwrap();
        assert!((shaped.phase - delta.phase).abs() < 1e-5);
    }

    #[test]
    fn fock_dynamics_reproduce_the_exact_impulsive_value() {
        let pj = PulseShape::Gaussian { center: 0.5, width: 0.04, area: 0.9 };
        let pi = PulseShape::Gaussian { center: 3.5, width: 0.04, area: 0.9 };
        let closed = impulsive_closed_form_shaped(&q2(), 0, 1, &pi, &pj).unwrap();
        assert!(closed.exact > 1e-3, "{closed:?}");
        let opts = EvolveOptions::magnus4(20.0);
        // the truncation error follows the kicked amplitude at the cutoff
        let gaps: Vec<f64> = [7, 9, 11, 13]
            .iter()
            .map(|&n| (impulsive_fock(&q2(), 1.0, 0, 1, pi, pj, 4.0, n, &opts).unwrap() - closed.exact).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[3] < 1e-6, "{gaps:?}");
        // the printed form is an upper envelope of the exact value
        assert!(closed.exact <= closed.printed);
    }
}
