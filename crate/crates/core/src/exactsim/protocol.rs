//! Linear-response measurement of the retarded spin correlator: flip the
//! source spin, kick with e^{-i lambda sigma_j^x}, evolve, rotate the
//! probe and read out sigma_i^z, then compare the finite-difference response
//! with the directly evaluated commutator expectation.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use serde::Serialize;

use super::evolve::{EvolveOptions, StateBlock};
use super::fock::{Axis, FockBuilder, FockSystem, Frame, TimeFn};
use super::sparse::C64;
use crate::crystal::{build_q, CrystalSpec, DriveSpec};
use crate::error::{Error, Result};

/// Spin-boson parameters shared by every site: sigma^z force
/// g sin(nu t - phi) and transverse field h sigma^x.
#[derive(Clone, Debug)]
pub struct SpinBosonParams {
    pub q: DMatrix<f64>,
    pub omega_ref: f64,
    pub g: f64,
    pub nu: f64,
    pub phi: f64,
    pub h: f64,
}

impl SpinBosonParams {
    pub fn from_crystal(spec: &CrystalSpec, drive: &DriveSpec) -> Result<Self> {
        Ok(SpinBosonParams {
            q: build_q(spec)?.matrix().clone(),
            omega_ref: spec.omega_t,
            g: drive.g,
            nu: drive.nu_tilde,
            phi: drive.phi_tilde,
            h: drive.h,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.q.nrows() / 2
    }

    /// System for the given regime; in the echo regime the force and the
    /// homogeneous term change sign at `t_mid`.
    pub fn system(&self, n_max: usize, regime: Regime, t_mid: f64) -> Result<FockSystem> {
        let n = self.n_sites();
        let mut b = FockBuilder::new(n, n_max, Frame::Rotating { omega_ref: self.omega_ref })?.quadratic(&self.q)?;
        let (g, nu, phi) = (self.g, self.nu, self.phi);
        for i in 0..n {
            let force = match regime {
                Regime::Continuous => TimeFn::sinusoid(g, nu, phi),
                Regime::Echo { .. } => TimeFn::from_fn(
                    move |t| {
                        let s = if t < t_mid { 1.0 } else { -1.0 };
                        s * g * (nu * t - phi).sin()
                    },
                    nu.abs(),
                    g.abs(),
                ),
            };
            if g != 0.0 {
                b = b.force(i, Axis::Z, force)?;
            }
            if self.h != 0.0 {
                b = b.spin_field(i, Axis::X, TimeFn::constant(self.h))?;
            }
            if let Regime::Echo { ac_stark, omega_tilde } = regime {
                if ac_stark != 0.0 {
                    b = b.spin_field(i, Axis::Z, TimeFn::constant(0.5 * ac_stark))?;
                }
                if omega_tilde != 0.0 {
                    b = b.spin_field(
                        i,
                        Axis::Z,
                        TimeFn::from_fn(
                            move |t| {
                                let s = if t < t_mid { 1.0 } else { -1.0 };
                                s * omega_tilde * (nu * t).cos()
                            },
                            nu.abs(),
                            omega_tilde.abs(),
                        ),
                    )?;
                }
            }
        }
        Ok(b.build())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regime {
    /// Forces on throughout.
    Continuous,
    /// Spin echo at mid-evolution (all sigma^z flipped, force and homogeneous
    /// term inverted), with ac-Stark shift and homogeneous sigma^z drive
    /// Omega~ cos(nu t) present.
    Echo { ac_stark: f64, omega_tilde: f64 },
}

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub source: usize,
    pub probe: usize,
    pub lambda_b: f64,
    pub t0: f64,
    pub t_f: f64,
    pub regime: Regime,
    /// Mean phonon number of each oscillator in the initial thermal state.
    pub nbar: f64,
    pub leakage_tol: f64,
    pub n_max: Option<usize>,
    pub opts: EvolveOptions,
}

impl ProtocolConfig {
    pub fn new(source: usize, probe: usize, t0: f64, t_f: f64) -> Self {
        ProtocolConfig {
            source,
            probe,
            lambda_b: 1e-3,
            t0,
            t_f,
            regime: Regime::Continuous,
            nbar: 0.0,
            leakage_tol: 1e-6,
            n_max: None,
            opts: EvolveOptions::magnus4(40.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolReport {
    #[serde(rename = "lambda_B")]
    pub lambda_b: f64,
    pub derivative_fd: f64,
    pub commutator_direct: f64,
    pub abs_error: f64,
    pub n_max: usize,
    pub leakage: f64,
}

/// Probability of n quanta in a thermal state of mean occupation nbar.
pub fn thermal_probability(nbar: f64, n: usize) -> f64 {
    if nbar == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let r = nbar / (nbar + 1.0);
    (1.0 - r) * r.powi(n as i32)
}

/// Probability mass above n_max for `sites` independent thermal oscillators.
pub fn thermal_leakage(nbar: f64, n_max: usize, sites: usize) -> f64 {
    if nbar == 0.0 {
        return 0.0;
    }
    let per_site = (nbar / (nbar + 1.0)).powi(n_max as i32 + 1);
    1.0 - (1.0 - per_site).powi(sites as i32)
}

/// Cutoff max(7, ceil(4 nbar)), raised in steps of 4 until the leakage
/// drops below `tol`.
pub fn choose_n_max(nbar: f64, sites: usize, tol: f64) -> usize {
    let mut n = 7.max((4.0 * nbar).ceil() as usize);
    while thermal_leakage(nbar, n, sites) > tol {
        n += 4;
    }
    n
}

/// Truncated, renormalised thermal ensemble as (weight, occupations).
pub fn thermal_ensemble(nbar: f64, n_max: usize, sites: usize) -> Vec<(f64, Vec<usize>)> {
    let nb = n_max + 1;
    let mut out = Vec::new();
    for k in 0..nb.pow(sites as u32) {
        let occ: Vec<usize> = (0..sites).map(|s| (k / nb.pow((sites - 1 - s) as u32)) % nb).collect();
        let w: f64 = occ.iter().map(|&n| thermal_probability(nbar, n)).product();
        if w > 1e-16 {
            out.push((w, occ));
        }
    }
    let total: f64 = out.iter().map(|e| e.0).sum();
    out.iter_mut().for_each(|e| e.0 /= total);
    out
}

/// (1 + i sigma^y)/sqrt(2) on `site`, i.e. e^{i (pi/4) sigma^y}, which maps
/// sigma^z onto sigma^x under conjugation.
fn quarter_y(sys: &FockSystem, site: usize, x: &[C64], k: usize) -> Vec<C64> {
    let y = sys.apply_pauli(site, Axis::Y, x, k);
    x.iter()
        .zip(&y)
        .map(|(a, b)| (a + C64::new(0.0, 1.0) * b) * FRAC_1_SQRT_2)
        .collect()
}

fn flip_all(sys: &FockSystem, x: &[C64], k: usize) -> Vec<C64> {
    (0..sys.n_sites()).fold(x.to_vec(), |acc, s| sys.apply_pauli(s, Axis::X, &acc, k))
}

/// U_total(t_f, t0) applied to a block.
fn total_evolution(sys: &FockSystem, block: &mut StateBlock, cfg: &ProtocolConfig) -> Result<()> {
    match cfg.regime {
        Regime::Continuous => sys.evolve(block, cfg.t0, cfg.t_f, &cfg.opts),
        Regime::Echo { .. } => {
            let mid = 0.5 * (cfg.t0 + cfg.t_f);
            sys.evolve(block, cfg.t0, mid, &cfg.opts)?;
            block.data = flip_all(sys, &block.data, block.k);
            sys.evolve(block, mid, cfg.t_f, &cfg.opts)
        }
    }
}

/// Runs the full measurement sequence on the thermal ensemble.
pub fn linear_response_protocol(params: &SpinBosonParams, cfg: &ProtocolConfig) -> Result<ProtocolReport> {
    let n = params.n_sites();
    if cfg.source >= n || cfg.probe >= n {
        return Err(Error::InvalidParameter("source or probe out of range".into()));
    }
    if cfg.t_f < cfg.t0 {
        return Err(Error::NonMonotoneGrid);
    }
    if !(cfg.nbar >= 0.0) {
        return Err(Error::InvalidParameter("nbar must be non-negative".into()));
    }
    let n_max = cfg.n_max.unwrap_or_else(|| choose_n_max(cfg.nbar, n, cfg.leakage_tol));
    let leakage = thermal_leakage(cfg.nbar, n_max, n);
    let sys = params.system(n_max, cfg.regime, 0.5 * (cfg.t0 + cfg.t_f))?;
    let ensemble = thermal_ensemble(cfg.nbar, n_max, n);
    // e^{i (pi/2) sigma_j^y} flips the source up; a source in a sigma^x
    // eigenstate would make the response to the sigma_j^x kick vanish
    let spins = ((1usize << n) - 1) & !(1usize << (n - 1 - cfg.source));
    let starts: Vec<usize> = ensemble.iter().map(|(_, occ)| sys.layout.index(spins, occ)).collect();
    let m = starts.len();
    let psi = StateBlock::basis(sys.dim(), &starts).data;
    let sx_psi = sys.apply_pauli(cfg.source, Axis::X, &psi, m);
    let (c, s) = (cfg.lambda_b.cos(), cfg.lambda_b.sin());
    // columns: U_V(+lambda) psi, U_V(-lambda) psi, psi, sigma_j^x psi
    let k = 4 * m;
    let mut block = StateBlock::zeros(sys.dim(), k);
    for r in 0..sys.dim() {
        for v in 0..m {
            let (a, b) = (psi[r * m + v], sx_psi[r * m + v]);
            let row = &mut block.data[r * k..(r + 1) * k];
            row[v] = a * c - C64::new(0.0, s) * b;
            row[m + v] = a * c + C64::new(0.0, s) * b;
            row[2 * m + v] = a;
            row[3 * m + v] = b;
        }
    }
    total_evolution(&sys, &mut block, cfg)?;
    // readout pulse on the probe
    let rotated = quarter_y(&sys, cfg.probe, &block.data, k);
    let sz = sys.apply_pauli(cfg.probe, Axis::Z, &rotated, k);
    let sx = sys.apply_pauli(cfg.probe, Axis::X, &block.data, k);
    let (mut f_plus, mut f_minus, mut direct) = (0.0, 0.0, 0.0);
    for (v, (w, _)) in ensemble.iter().enumerate() {
        let (mut ep, mut em, mut cross) = (0.0, 0.0, C64::new(0.0, 0.0));
        for r in 0..sys.dim() {
            let row = r * k;
            ep += (rotated[row + v].conj() * sz[row + v]).re;
            em += (rotated[row + m + v].conj() * sz[row + m + v]).re;
            // <U psi| sigma_i^x |U sigma_j^x psi>
            cross += block.data[row + 2 * m + v].conj() * sx[row + 3 * m + v];
        }
        f_plus += w * ep;
        f_minus += w * em;
        direct += w * 2.0 * cross.im;
    }
    let derivative_fd = (f_plus - f_minus) / (2.0 * cfg.lambda_b);
    Ok(ProtocolReport {
        lambda_b: cfg.lambda_b,
        derivative_fd,
        commutator_direct: direct,
        abs_error: (derivative_fd - direct).abs(),
        n_max,
        leakage,
    })
}

/// Largest entry of U_echo - X U_SBL over [t0, t0 + dt], where the echo run
/// includes the ac-Stark and homogeneous terms and X flips every spin.
pub fn echo_identity_defect(
    params: &SpinBosonParams,
    t0: f64,
    dt: f64,
    ac_stark: f64,
    omega_tilde: f64,
    n_max: usize,
    opts: &EvolveOptions,
) -> Result<f64> {
    if params.h != 0.0 {
        return Err(Error::NotApplicable("the echo identity needs h = 0".into()));
    }
    let mid = t0 + 0.5 * dt;
    let echo = params.system(n_max, Regime::Echo { ac_stark, omega_tilde }, mid)?;
    let ideal = params.system(n_max, Regime::Continuous, mid)?;
    let dim = echo.dim();
    let mut a = StateBlock::identity(dim);
    echo.evolve(&mut a, t0, mid, opts)?;
    a.data = flip_all(&echo, &a.data, dim);
    echo.evolve(&mut a, mid, t0 + dt, opts)?;
    let mut b = StateBlock::identity(dim);
    ideal.evolve(&mut b, t0, t0 + dt, opts)?;
    b.data = flip_all(&ideal, &b.data, dim);
    Ok(a.data.iter().zip(&b.data).fold(0.0, |m, (x, y)| m.max((x - y).norm())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(g: f64) -> SpinBosonParams {
        let mut q = DMatrix::identity(4, 4);
        q[(0, 0)] = 0.88;
        q[(2, 2)] = 0.88;
        q[(0, 2)] = 0.12;
        q[(2, 0)] = 0.12;
        SpinBosonParams {
            q,
            omega_ref: 1.0,
            g,
            nu: 1.08,
            phi: 0.4,
            h: 0.0,
        }
    }

    #[test]
    fn thermal_ensemble_is_normalised() {
        let n_max = choose_n_max(0.3, 2, 1e-6);
        assert!(thermal_leakage(0.3, n_max, 2) < 1e-6);
        assert_eq!(choose_n_max(0.0, 2, 1e-6), 7);
        let e = thermal_ensemble(0.3, n_max, 2);
        let total: f64 = e.iter().map(|x| x.0).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let mean: f64 = e.iter().map(|(w, o)| w * o[0] as f64).sum();
        assert!((mean - 0.3).abs() < 1e-5);
    }

    #[test]
    fn zero_kick_gives_no_response_difference() {
        let mut cfg = ProtocolConfig::new(0, 1, 0.0, 4.0);
        cfg.lambda_b = 1e-300;
        cfg.n_max = Some(4);
        let r = linear_response_protocol(&params(0.5), &cfg).unwrap();
        assert!(r.derivative_fd.is_finite());
    }

    #[test]
    fn no_coupling_no_response() {
        let mut cfg = ProtocolConfig::new(0, 1, 0.0, 4.0);
        cfg.n_max = Some(3);
        let mut p = params(0.0);
        p.h = 0.4;
        let r = linear_response_protocol(&p, &cfg).unwrap();
        assert!(r.derivative_fd.abs() < 1e-12 && r.commutator_direct.abs() < 1e-12);
    }

    #[test]
    fn finite_difference_matches_direct_commutator() {
        // with h = 0 the probe stays in a sigma^z eigenstate and the signal vanishes
        let mut p = params(0.6);
        p.h = 0.4;
        let mut cfg = ProtocolConfig::new(0, 1, 0.0, 4.0);
        cfg.nbar = 0.1;
        cfg.opts = EvolveOptions::magnus4(20.0);
        let r = linear_response_protocol(&p, &cfg).unwrap();
        assert!(r.commutator_direct.abs() > 1e-4, "{r:?}");
        assert!(r.abs_error < 1e-6, "{r:?}");
        cfg.regime = Regime::Echo { ac_stark: 0.3, omega_tilde: 0.2 };
        let e = linear_response_protocol(&p, &cfg).unwrap();
        assert!(e.abs_error < 1e-6, "{e:?}");
    }

    #[test]
    fn echo_refocuses_spurious_terms() {
        let p = params(0.7);
        // nu dt = 2 pi n
        let dt = 2.0 * std::f64::consts::PI * 3.0 / p.nu;
        let d = echo_identity_defect(&p, 0.2, dt, 0.4, 0.3, 3, &EvolveOptions::magnus4(50.0)).unwrap();
        assert!(d < 1e-8, "defect {d}");
        // off the commensurate duration the homogeneous term survives
        let off = echo_identity_defect(&p, 0.2, dt * 1.05, 0.4, 0.3, 3, &EvolveOptions::magnus4(20.0)).unwrap();
        assert!(off > 1e-3);
    }
}
