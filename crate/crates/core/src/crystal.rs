//! Trapped-ion crystals: equilibrium positions, Coulomb couplings, the
//! quadratic matrix Q, normal modes and effective spin-spin couplings.
//!
//! Frequencies are angular (rad/s) throughout; configs quote f/2pi in Hz.

use nalgebra::{Complex, DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::constants::{coulomb_e0_sq, hz_to_angular, AMU};
use crate::error::{Error, Result};
use crate::lattice::{build_chain, build_triangular, LatticeGeometry, LatticeKind};
use crate::linalg::{spectral_norm2, sym_eigen_sorted};

#[derive(Clone, Debug)]
pub struct CrystalSpec {
    pub species: String,
    /// Ion mass in kg.
    pub mass: f64,
    /// e^2 / (4 pi eps0) in J m.
    pub e0_sq: f64,
    /// Transverse trap frequency (rad/s).
    pub omega_t: f64,
    /// Axial trap frequency (rad/s), chains only.
    pub omega_ax: Option<f64>,
    /// Minimal ion spacing (m).
    pub d_m: f64,
    /// Idealised unit lattice used for distances in bounds.
    pub geometry: LatticeGeometry,
    /// Physical equilibrium positions in units of d_m, used for V_ij.
    pub positions: Vec<[f64; 2]>,
}

/// Structured-text description of a crystal preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalConfig {
    pub species: String,
    pub mass_amu: f64,
    pub omega_t_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_ax_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_m_um: Option<f64>,
    pub geometry: LatticeKind,
    #[serde(rename = "N_or_shells")]
    pub n_or_shells: usize,
    /// Keep only this many sites, nearest to the centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_to: Option<usize>,
}

pub const PRESET_NAMES: [&str; 3] = ["mg_chain", "be_penning", "be_surface"];

impl CrystalConfig {
    /// Named presets: 30 Mg+ ions in a linear Paul trap, the 253-ion Be+
    /// Penning crystal, and a small Be+ surface-trap array.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mg_chain" => Ok(CrystalConfig {
                species: "25Mg+".into(),
                mass_amu: 24.985_836_96,
                omega_t_hz: 5.0e6,
                omega_ax_hz: Some(0.25e6),
                d_m_um: None,
                geometry: LatticeKind::Chain,
                n_or_shells: 30,
                truncate_to: None,
            }),
            "be_penning" => Ok(CrystalConfig {
                species: "9Be+".into(),
                mass_amu: 9.012_182_2,
                omega_t_hz: 0.8e6,
                omega_ax_hz: None,
                d_m_um: Some(20.0),
                geometry: LatticeKind::Triangular,
                n_or_shells: 9,
                truncate_to: Some(253),
            }),
            "be_surface" => Ok(CrystalConfig {
                species: "9Be+".into(),
                mass_amu: 9.012_182_2,
                omega_t_hz: 10.0e6,
                omega_ax_hz: None,
                d_m_um: Some(40.0),
                geometry: LatticeKind::Triangular,
                n_or_shells: 2,
                truncate_to: None,
            }),
            other => Err(Error::InvalidParameter(format!(
                "unknown preset '{other}' (known: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn build(&self) -> Result<CrystalSpec> {
        let mass = self.mass_amu * AMU;
        let e0_sq = coulomb_e0_sq();
        let omega_t = hz_to_angular(self.omega_t_hz);
        if !(mass > 0.0) || !(omega_t > 0.0) {
            return Err(Error::InvalidParameter("mass and omega_t must be positive".into()));
        }
        let omega_ax = self.omega_ax_hz.map(hz_to_angular);
        match self.geometry {
            LatticeKind::Chain => {
                let n = self.n_or_shells;
                let geometry = build_chain(n)?;
                let (d_m, positions) = match (omega_ax, self.d_m_um) {
                    (Some(w), None) => {
                        let z = solve_chain_equilibrium(n, mass, e0_sq, w)?;
                        let d_m = min_gap(&z);
                        (d_m, z.iter().map(|zi| [zi / d_m, 0.0]).collect())
                    }
                    (None, Some(d)) => (d * 1e-6, geometry.positions().to_vec()),
                    _ => {
                        return Err(Error::InvalidParameter(
                            "a chain needs exactly one of omega_ax_hz (equilibrium solve) or d_m_um (uniform)".into(),
                        ))
                    }
                };
                let spec = CrystalSpec {
                    species: self.species.clone(),
                    mass,
                    e0_sq,
                    omega_t,
                    omega_ax,
                    d_m,
                    geometry,
                    positions,
                };
                match self.truncate_to {
                    Some(_) => Err(Error::InvalidParameter("truncate_to applies to triangular crystals".into())),
                    None => Ok(spec),
                }
            }
            LatticeKind::Triangular => {
                let d_m = self
                    .d_m_um
                    .ok_or_else(|| Error::InvalidParameter("triangular crystals need d_m_um".into()))?
                    * 1e-6;
                let mut geometry = build_triangular(self.n_or_shells);
                if let Some(n) = self.truncate_to {
                    geometry = geometry.truncate_radial(n)?;
                }
                let positions = geometry.positions().to_vec();
                Ok(CrystalSpec {
                    species: self.species.clone(),
                    mass,
                    e0_sq,
                    omega_t,
                    omega_ax,
                    d_m,
                    geometry,
                    positions,
                })
            }
            LatticeKind::Explicit => Err(Error::Unsupported("explicit geometries are built in code".into())),
        }
    }
}

fn min_gap(z: &[f64]) -> f64 {
    z.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

impl CrystalSpec {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Length unit of the axial problem, (e0^2 / (m omega_ax^2))^{1/3}.
    pub fn axial_length_scale(mass: f64, e0_sq: f64, omega_ax: f64) -> f64 {
        (e0_sq / (mass * omega_ax * omega_ax)).cbrt()
    }
}

/// Axial equilibrium of N ions in a harmonic well: minimises
/// sum_i u_i^2 / 2 + sum_{i<j} 1 / |u_i - u_j| in units of the axial length
/// scale by damped Newton iteration. Returns sorted positions in metres.
pub fn solve_chain_equilibrium(n: usize, mass: f64, e0_sq: f64, omega_ax: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("chain needs N >= 2, got {n}")));
    }
    if !(omega_ax > 0.0) {
        return Err(Error::InvalidParameter("omega_ax must be positive".into()));
    }
    let ell = CrystalSpec::axial_length_scale(mass, e0_sq, omega_ax);
    let force = |u: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            let mut f = -u[i];
            for j in 0..n {
                if j != i {
                    let d = u[i] - u[j];
                    f += d.signum() / (d * d);
                }
            }
            f
        })
    };
    let half = 0.5 * (n as f64 - 1.0);
    let spacing = 2.0 * (n as f64).powf(-0.56);
    let mut u = DVector::from_fn(n, |i, _| (i as f64 - half) * spacing);
    let mut r = force(&u);
    const MAX_ITER: usize = 200;
    for _ in 0..MAX_ITER {
        let res = r.amax();
        if res < 1e-13 {
            let mut z: Vec<f64> = u.iter().map(|v| v * ell).collect();
            z.sort_by(|a, b| a.partial_cmp(b).unwrap());
            return Ok(z);
        }
        // Hessian of the potential (= minus the force Jacobian).
        let mut h = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let c = 2.0 / (u[i] - u[j]).abs().powi(3);
                    h[(i, j)] -= c;
                    h[(i, i)] += c;
                }
            }
        }
        let step = h
            .lu()
            .solve(&r)
            .ok_or(Error::Convergence { iterations: 0, residual: res })?;
        let mut lambda = 1.0;
        loop {
            let trial = &u + &step * lambda;
            let ordered = trial.iter().zip(trial.iter().skip(1)).all(|(a, b)| b > a);
            if ordered {
                let rt = force(&trial);
                if rt.amax() < res || lambda < 1e-6 {
                    u = trial;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                return Err(Error::Convergence { iterations: 0, residual: res });
            }
        }
    }
    Err(Error::Convergence {
        iterations: MAX_ITER,
        residual: r.amax(),
    })
}

/// Stiffness beta = e0^2 / (m omega_t^2 d_m^3).
pub fn stiffness(spec: &CrystalSpec) -> f64 {
    spec.e0_sq / (spec.mass * spec.omega_t * spec.omega_t * spec.d_m.powi(3))
}

/// Conventions for the off-diagonal coupling strength kappa.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KappaConvention {
    /// kappa = 8 beta omega_t, paired with the (1 + d)^3 envelope.
    #[default]
    KappaSupp,
    /// kappa = 4 beta omega_t, the alternative quoted value.
    KappaMain,
}

impl KappaConvention {
    pub fn kappa(self, beta_omega_t: f64) -> f64 {
        match self {
            KappaConvention::KappaSupp => 8.0 * beta_omega_t,
            KappaConvention::KappaMain => 4.0 * beta_omega_t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub time: f64,
    pub scale: f64,
}

/// Time dependence of Q. A quench list holds piecewise-constant trap scalings:
/// the scale of the last breakpoint with `time <= t` applies, 1 before the
/// first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum TimeProfile {
    #[default]
    Constant,
    Quench(Vec<Breakpoint>),
}

impl TimeProfile {
    pub fn scale_at(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Quench(bps) => bps
                .iter()
                .take_while(|b| b.time <= t)
                .last()
                .map_or(1.0, |b| b.scale),
        }
    }
}

/// Trap-derived structure of Q: xx block omega_t (1 + beta V~), pp block
/// omega_t, no xp coupling.
#[derive(Clone, Debug)]
pub struct TrapStructure {
    pub omega_t: f64,
    pub beta: f64,
    /// Rescaled Coulomb matrix V~_ij = |r~_i - r~_j|^{-3}, V~_ii = -sum_{j!=i} V~_ij.
    pub vtilde: DMatrix<f64>,
}

/// Quadratic boson coupling H_b = 1/2 sum_ij R_i^T Q_ij R_j with
/// R_i = (x_i, p_i); stored as one 2N x 2N symmetric matrix.
#[derive(Clone, Debug)]
pub struct QuadraticCoupling {
    q: DMatrix<f64>,
    pub kappa: f64,
    pub profile: TimeProfile,
    trap: Option<TrapStructure>,
}

fn kappa_of(q: &DMatrix<f64>, geometry: &LatticeGeometry) -> f64 {
    let n = q.nrows() / 2;
    let mut kappa = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let b = Matrix2::new(q[(2 * i, 2 * j)], q[(2 * i, 2 * j + 1)], q[(2 * i + 1, 2 * j)], q[(2 * i + 1, 2 * j + 1)]);
                kappa = kappa.max(spectral_norm2(&b) * (1.0 + geometry.d(i, j)).powi(3));
            }
        }
    }
    kappa
}

impl QuadraticCoupling {
    /// Generic Q from a symmetric 2N x 2N matrix; kappa is measured against
    /// the (1 + d)^3 envelope of `geometry`.
    pub fn from_matrix(q: DMatrix<f64>, geometry: &LatticeGeometry) -> Result<Self> {
        let n2 = q.nrows();
        if n2 != q.ncols() || n2 % 2 != 0 || n2 / 2 != geometry.n() {
            return Err(Error::InvalidSize(format!(
                "Q must be 2N x 2N with N = {} sites, got {} x {}",
                geometry.n(),
                q.nrows(),
                q.ncols()
            )));
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 * q.amax().max(1e-300) {
            return Err(Error::InvalidParameter(format!("Q is not blockwise symmetric (defect {asym:e})")));
        }
        Ok(QuadraticCoupling {
            kappa: kappa_of(&q, geometry),
            q,
            profile: TimeProfile::Constant,
            trap: None,
        })
    }

    fn trap_matrix(trap: &TrapStructure, scale: f64) -> DMatrix<f64> {
        let n = trap.vtilde.nrows();
        let w = scale * trap.omega_t;
        let c = trap.beta * trap.omega_t * trap.omega_t / w;
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                q[(2 * i, 2 * j)] = c * trap.vtilde[(i, j)];
            }
            q[(2 * i, 2 * i)] += w;
            q[(2 * i + 1, 2 * i + 1)] = w;
        }
        q
    }

    pub fn with_profile(mut self, profile: TimeProfile) -> Self {
        self.profile = profile;
        self
    }

    pub fn n(&self) -> usize {
        self.q.nrows() / 2
    }

    /// Q at t = 0 (before any quench).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn trap(&self) -> Option<&TrapStructure> {
        self.trap.as_ref()
    }

    pub fn is_constant(&self) -> bool {
        match &self.profile {
            TimeProfile::Constant => true,
            TimeProfile::Quench(b) => b.is_empty(),
        }
    }

    /// Q with the trap frequency scaled by `scale`, Coulomb forces unchanged.
    /// Without trap structure the whole matrix is scaled.
    pub fn matrix_scaled(&self, scale: f64) -> DMatrix<f64> {
        match &self.trap {
            Some(t) => Self::trap_matrix(t, scale),
            None => &self.q * scale,
        }
    }

    pub fn matrix_at(&self, t: f64) -> DMatrix<f64> {
        let s = self.profile.scale_at(t);
        if s == 1.0 {
            self.q.clone()
        } else {
            self.matrix_scaled(s)
        }
    }

    pub fn block(&self, i: usize, j: usize) -> Matrix2<f64> {
        let q = &self.q;
        Matrix2::new(q[(2 * i, 2 * j)], q[(2 * i, 2 * j + 1)], q[(2 * i + 1, 2 * j)], q[(2 * i + 1, 2 * j + 1)])
    }
}

/// Builds Q from the physical positions: diagonal blocks
/// diag(omega_t + V_ii/(m omega_t), omega_t), off-diagonal diag(V_ij/(m omega_t), 0).
pub fn build_q(spec: &CrystalSpec) -> Result<QuadraticCoupling> {
    let n = spec.n();
    let mut vt = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let p = spec.positions[i];
                let r = spec.positions[j];
                let d = (p[0] - r[0]).hypot(p[1] - r[1]);
                if d == 0.0 {
                    return Err(Error::SingularCoupling(i.min(j), i.max(j)));
                }
                vt[(i, j)] = d.powi(-3);
            }
        }
        let row: f64 = (0..n).filter(|&j| j != i).map(|j| vt[(i, j)]).sum();
        vt[(i, i)] = -row;
    }
    let trap = TrapStructure {
        omega_t: spec.omega_t,
        beta: stiffness(spec),
        vtilde: vt,
    };
    let q = QuadraticCoupling::trap_matrix(&trap, 1.0);
    Ok(QuadraticCoupling {
        kappa: kappa_of(&q, &spec.geometry),
        q,
        profile: TimeProfile::Constant,
        trap: Some(trap),
    })
}

/// State-dependent force and transverse-field parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Force strength g = sqrt(2) Omega~ gamma (rad/s).
    pub g: f64,
    /// Lamb-Dicke parameter.
    pub gamma: f64,
    pub omega_tilde: f64,
    pub nu_tilde: f64,
    pub phi_tilde: f64,
    /// Detuning from the relevant mode (rad/s).
    pub delta_t: f64,
    pub pulse_areas: Vec<f64>,
    /// Transverse field Omega/2 (rad/s).
    pub h: f64,
}

/// Largest pulse area accepted by [`DriveSpec::with_pulse_areas`].
pub const MAX_PULSE_AREA: f64 = 100.0;

impl DriveSpec {
    pub fn from_rabi(omega_tilde: f64, gamma: f64, nu_tilde: f64, phi_tilde: f64, delta_t: f64) -> Self {
        DriveSpec {
            g: std::f64::consts::SQRT_2 * omega_tilde * gamma,
            gamma,
            omega_tilde,
            nu_tilde,
            phi_tilde,
            delta_t,
            pulse_areas: Vec::new(),
            h: 0.0,
        }
    }

    /// Drive specified through g; Omega~ follows from g = sqrt(2) Omega~ gamma.
    pub fn from_force(g: f64, gamma: f64, nu_tilde: f64, phi_tilde: f64, delta_t: f64) -> Self {
        DriveSpec {
            g,
            gamma,
            omega_tilde: g / (std::f64::consts::SQRT_2 * gamma),
            nu_tilde,
            phi_tilde,
            delta_t,
            pulse_areas: Vec::new(),
            h: 0.0,
        }
    }

    pub fn with_pulse_areas(mut self, areas: Vec<f64>) -> Result<Self> {
        if let Some(a) = areas.iter().find(|a| !a.is_finite() || a.abs() > MAX_PULSE_AREA) {
            return Err(Error::InvalidParameter(format!("pulse area {a} outside [-{MAX_PULSE_AREA}, {MAX_PULSE_AREA}]")));
        }
        self.pulse_areas = areas;
        Ok(self)
    }

    pub fn with_transverse_field(mut self, h: f64) -> Self {
        self.h = h;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ModeData {
    /// Mode frequencies, descending.
    pub omega_n: Vec<f64>,
    /// Column n is the mode vector of omega_n.
    pub m: DMatrix<f64>,
    pub gamma_n: Vec<f64>,
    /// F_in = i Omega~ gamma_n e^{i phi~} M_in / 2.
    pub f_in: DMatrix<Complex<f64>>,
    /// delta_n = omega_n - nu~.
    pub delta_n: Vec<f64>,
}

/// Normal modes of the transverse x-sector, omega_n = omega_t sqrt(1 + beta V~_n).
pub fn normal_modes(q: &QuadraticCoupling, drive: &DriveSpec) -> Result<ModeData> {
    if !q.is_constant() {
        return Err(Error::NotApplicable("normal modes need a constant profile".into()));
    }
    let trap = q
        .trap()
        .ok_or_else(|| Error::NotApplicable("normal modes need a trap-derived Q".into()))?;
    let n = q.n();
    let (vals, vecs) = sym_eigen_sorted(trap.vtilde.clone());
    // Ascending V~_n means ascending omega_n; walk backwards for descending
    // order, keeping the lower eigen-index first among degenerate modes.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (1.0 + trap.beta * vals[a], 1.0 + trap.beta * vals[b]);
        if (fa - fb).abs() <= 1e-10 * fa.abs().max(fb.abs()) {
            a.cmp(&b)
        } else {
            fb.partial_cmp(&fa).unwrap()
        }
    });
    let mut omega_n = Vec::with_capacity(n);
    let mut m = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        let factor = 1.0 + trap.beta * vals[k];
        if !(factor > 0.0) {
            return Err(Error::UnstableCrystal { mode: c, value: factor });
        }
        omega_n.push(trap.omega_t * factor.sqrt());
        m.set_column(c, &vecs.column(k));
    }
    let gamma_n: Vec<f64> = omega_n.iter().map(|w| drive.gamma * (trap.omega_t / w).sqrt()).collect();
    let phase = Complex::new(0.0, 1.0) * Complex::from_polar(1.0, drive.phi_tilde);
    let f_in = DMatrix::from_fn(n, n, |i, k| phase * (drive.omega_tilde * gamma_n[k] * m[(i, k)] / 2.0));
    let delta_n = omega_n.iter().map(|w| w - drive.nu_tilde).collect();
    Ok(ModeData {
        omega_n,
        m,
        gamma_n,
        f_in,
        delta_n,
    })
}

#[derive(Clone, Debug)]
pub struct EffectiveCouplings {
    /// J_ij = -sum_n F*_in F_jn / delta_n (real part).
    pub j: DMatrix<f64>,
    /// Largest |Im J_ij| relative to max |Re J|.
    pub imag_defect: f64,
    /// J0 = (1/16) (g / delta_t)^2 beta omega_t.
    pub j0: f64,
    /// Dipolar approximation J0 / |r~_i - r~_j|^3 (zero diagonal).
    pub dipolar: DMatrix<f64>,
    /// max |F_in| / min |delta_n|; far detuning needs this << 1.
    pub detuning_ratio: f64,
}

impl EffectiveCouplings {
    pub fn far_detuned(&self) -> bool {
        self.detuning_ratio < 0.1
    }
}

pub fn effective_couplings(modes: &ModeData, drive: &DriveSpec, spec: &CrystalSpec) -> Result<EffectiveCouplings> {
    let n = modes.omega_n.len();
    if let Some(k) = modes.delta_n.iter().position(|d| *d == 0.0) {
        return Err(Error::ResonantDetuning(k));
    }
    let mut jc = DMatrix::<Complex<f64>>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..n {
                acc -= modes.f_in[(i, k)].conj() * modes.f_in[(j, k)] / modes.delta_n[k];
            }
            jc[(i, j)] = acc;
        }
    }
    let j = jc.map(|c| c.re);
    let scale = j.amax().max(1e-300);
    let imag_defect = jc.iter().fold(0.0_f64, |a, c| a.max(c.im.abs())) / scale;
    let beta = stiffness(spec);
    let j0 = (drive.g / drive.delta_t).powi(2) * beta * spec.omega_t / 16.0;
    let dipolar = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            let (p, r) = (spec.positions[a], spec.positions[b]);
            j0 / (p[0] - r[0]).hypot(p[1] - r[1]).powi(3)
        }
    });
    let fmax = modes.f_in.iter().fold(0.0_f64, |a, c| a.max(c.norm()));
    let dmin = modes.delta_n.iter().fold(f64::INFINITY, |a, d| a.min(d.abs()));
    Ok(EffectiveCouplings {
        j,
        imag_defect,
        j0,
        dipolar,
        detuning_ratio: fmax / dmin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::angular_to_hz;
    use proptest::prelude::*;

    fn mg() -> CrystalSpec {
        CrystalConfig::preset("mg_chain").unwrap().build().unwrap()
    }

    fn uniform_chain(n: usize, mass_amu: f64, omega_t_hz: f64, d_m_um: f64) -> CrystalSpec {
        CrystalConfig {
            species: "test".into(),
            mass_amu,
            omega_t_hz,
            omega_ax_hz: None,
            d_m_um: Some(d_m_um),
            geometry: LatticeKind::Chain,
            n_or_shells: n,
            truncate_to: None,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn two_ion_separation() {
        let (m, e, w) = (25.0 * AMU, coulomb_e0_sq(), hz_to_angular(1e6));
        let z = solve_chain_equilibrium(2, m, e, w).unwrap();
        let expect = (2.0 * e / (m * w * w)).cbrt();
        assert!(((z[1] - z[0]) - expect).abs() < 1e-12 * expect);
    }

    /// Golden-section minimisation of the symmetric three-ion potential
    /// u^2 + 2/u + 1/(2u) (outer ions at +-u, centre fixed at 0).
    #[test]
    fn three_ion_equilibrium_matches_direct_minimisation() {
        let v = |u: f64| u * u + 2.0 / u + 1.0 / (2.0 * u);
        let (mut a, mut b) = (0.1, 5.0);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if v(c) < v(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let u_min = 0.5 * (a + b);
        assert!((u_min - 1.25f64.cbrt()).abs() < 1e-8);
        let (m, e, w) = (9.0 * AMU, coulomb_e0_sq(), hz_to_angular(0.5e6));
        let ell = CrystalSpec::axial_length_scale(m, e, w);
        let z = solve_chain_equilibrium(3, m, e, w).unwrap();
        assert!(z[1].abs() < 1e-12 * ell);
        assert!((z[2] / ell - u_min).abs() < 1e-8);
        assert!((z[0] + z[2]).abs() < 1e-12 * ell);
    }

    #[test]
    fn equilibrium_residual_is_tiny() {
        let (m, e, w) = (25.0 * AMU, coulomb_e0_sq(), hz_to_angular(0.25e6));
        let ell = CrystalSpec::axial_length_scale(m, e, w);
        let z = solve_chain_equilibrium(30, m, e, w).unwrap();
        let u: Vec<f64> = z.iter().map(|v| v / ell).collect();
        for i in 0..30 {
            let mut f = -u[i];
            for j in 0..30 {
                if j != i {
                    let d = u[i] - u[j];
                    f += d.signum() / (d * d);
                }
            }
            assert!(f.abs() < 1e-12, "residual {f}");
        }
        assert!(solve_chain_equilibrium(1, m, e, w).is_err());
    }

    #[test]
    fn mg_chain_length_and_gap() {
        let s = mg();
        let z: Vec<f64> = s.positions.iter().map(|p| p[0] * s.d_m).collect();
        let len = z[29] - z[0];
        assert!((len * 1e6 - 140.0).abs() < 15.0, "length {}", len * 1e6);
        assert!((s.d_m * 1e6 - 4.0).abs() < 0.5, "gap {}", s.d_m * 1e6);
        // the minimal gap sits at the centre of the chain
        assert!((z[15] - z[14] - s.d_m).abs() < 1e-12);
    }

    #[test]
    fn stiffness_golden_values() {
        let s = mg();
        let b = stiffness(&s);
        assert!((b - 0.09).abs() < 0.01, "beta {b}");
        assert!((angular_to_hz(b * s.omega_t) / 1e3 - 450.0).abs() < 30.0);
        let be = CrystalConfig::preset("be_penning").unwrap().build().unwrap();
        let b = stiffness(&be);
        assert!((b - 0.08).abs() < 0.01, "beta {b}");
        assert!((angular_to_hz(b * be.omega_t) / 1e3 - 60.0).abs() < 5.0);
        assert_eq!(be.n(), 253);
    }

    #[test]
    fn stiffness_scales_with_inverse_cube_of_spacing() {
        let a = stiffness(&uniform_chain(3, 9.0, 1e6, 10.0));
        let b = stiffness(&uniform_chain(3, 9.0, 1e6, 20.0));
        assert!((a / b - 8.0).abs() < 1e-12);
    }

    #[test]
    fn two_ion_offdiagonal_entry_is_beta_omega_t() {
        let s = uniform_chain(2, 25.0, 5e6, 4.0);
        let q = build_q(&s).unwrap();
        let bw = stiffness(&s) * s.omega_t;
        assert!((q.block(0, 1)[(0, 0)] - bw).abs() < 1e-12 * bw);
        assert_eq!(q.block(0, 1)[(1, 1)], 0.0);
        assert!((q.block(0, 0)[(0, 0)] - (s.omega_t - bw)).abs() < 1e-9 * s.omega_t);
        assert_eq!(q.block(0, 0)[(1, 1)], s.omega_t);
    }

    #[test]
    fn coupling_invariants_on_presets() {
        for name in PRESET_NAMES {
            let s = CrystalConfig::preset(name).unwrap().build().unwrap();
            let beta = stiffness(&s);
            assert!(beta > 0.0 && beta < 1.0);
            let q = build_q(&s).unwrap();
            let vt = &q.trap().unwrap().vtilde;
            for i in 0..s.n() {
                let row: f64 = vt.row(i).sum();
                assert!(row.abs() < 1e-12 * vt[(i, i)].abs());
                for j in 0..s.n() {
                    if i != j {
                        assert!(vt[(i, j)] > 0.0);
                    }
                    assert_eq!(q.block(i, j), q.block(j, i).transpose());
                }
            }
            assert!(q.kappa <= 8.0 * beta * s.omega_t * (1.0 + 1e-12), "{name}: kappa {} vs {}", q.kappa, 8.0 * beta * s.omega_t);
        }
    }

    #[test]
    fn coincident_positions_rejected() {
        let mut s = uniform_chain(3, 9.0, 1e6, 10.0);
        s.positions[2] = s.positions[1];
        assert!(matches!(build_q(&s), Err(Error::SingularCoupling(1, 2))));
    }

    fn drive() -> DriveSpec {
        DriveSpec::from_force(hz_to_angular(50e3), 0.1, 0.0, 0.3, hz_to_angular(500e3))
    }

    #[test]
    fn single_ion_mode() {
        let s = CrystalSpec {
            species: "x".into(),
            mass: 9.0 * AMU,
            e0_sq: coulomb_e0_sq(),
            omega_t: 2.0,
            omega_ax: None,
            d_m: 1e-5,
            geometry: build_chain(2).unwrap(),
            positions: vec![[0.0, 0.0]],
        };
        let q = build_q(&s).unwrap();
        let m = normal_modes(&q, &drive()).unwrap();
        assert_eq!(m.omega_n, vec![2.0]);
        assert_eq!(m.m[(0, 0)], 1.0);
    }

    #[test]
    fn modes_are_orthonormal_with_com_on_top() {
        let s = mg();
        let q = build_q(&s).unwrap();
        let m = normal_modes(&q, &drive()).unwrap();
        let n = s.n();
        let defect = crate::linalg::spectral_norm(&(m.m.transpose() * &m.m - DMatrix::identity(n, n)));
        assert!(defect < 1e-10);
        assert!((m.omega_n[0] - s.omega_t).abs() < 1e-9 * s.omega_t);
        for k in 0..n {
            assert!((m.m[(k, 0)] - 1.0 / (n as f64).sqrt()).abs() < 1e-9);
        }
        assert!(m.omega_n.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.omega_n.iter().all(|w| *w > 0.0));
    }

    /// Frequencies from the eigenvalues of the x-sector dynamical matrix
    /// D = Q_pp Q_xx (from x'' = -Q_pp Q_xx x), via a general eigensolver.
    #[test]
    fn five_ion_modes_match_dynamical_matrix() {
        let cfg = CrystalConfig {
            n_or_shells: 5,
            ..CrystalConfig::preset("mg_chain").unwrap()
        };
        let s = cfg.build().unwrap();
        let q = build_q(&s).unwrap();
        let modes = normal_modes(&q, &drive()).unwrap();
        let full = q.matrix();
        let n = 5;
        let xx = DMatrix::from_fn(n, n, |i, j| full[(2 * i, 2 * j)]);
        let pp = DMatrix::from_fn(n, n, |i, j| full[(2 * i + 1, 2 * j + 1)]);
        let dyn_m = pp * xx;
        let ev = dyn_m.complex_eigenvalues();
        let mut w: Vec<f64> = ev.iter().map(|c| c.re.sqrt()).collect();
        w.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in w.iter().zip(&modes.omega_n) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn unstable_crystal_detected() {
        let mut s = uniform_chain(4, 9.0, 1e5, 1.0);
        s.omega_t = 1e3;
        let q = build_q(&s).unwrap();
        assert!(matches!(normal_modes(&q, &drive()), Err(Error::UnstableCrystal { .. })));
    }

    #[test]
    fn j0_golden_value() {
        // g/2pi = 50 kHz, delta/2pi = 500 kHz, beta omega_t / 2pi = 450 kHz.
        let bw = hz_to_angular(450e3);
        let j0 = (50.0f64 / 500.0).powi(2) * bw / 16.0;
        assert!((angular_to_hz(j0) - 281.25).abs() < 1e-9);
        let s = mg();
        let d = DriveSpec::from_force(hz_to_angular(50e3), 0.1, s.omega_t + hz_to_angular(500e3), 0.0, hz_to_angular(500e3));
        let q = build_q(&s).unwrap();
        let m = normal_modes(&q, &d).unwrap();
        let c = effective_couplings(&m, &d, &s).unwrap();
        let expect = (50.0f64 / 500.0).powi(2) * stiffness(&s) * s.omega_t / 16.0;
        assert!((c.j0 - expect).abs() < 1e-12 * expect);
        assert!(c.imag_defect < 1e-12);
    }

    #[test]
    fn far_detuned_couplings_approach_dipolar() {
        // beta omega_t << delta << omega_t needs a weak crystal
        let s = uniform_chain(6, 25.0, 5e6, 30.0);
        let q = build_q(&s).unwrap();
        let delta = 0.01 * s.omega_t;
        let d = DriveSpec::from_force(0.05 * delta, 0.1, s.omega_t + delta, 0.0, delta);
        let c = effective_couplings(&normal_modes(&q, &d).unwrap(), &d, &s).unwrap();
        assert!(c.far_detuned());
        let rel = (c.j[(2, 3)] - c.dipolar[(2, 3)]).abs() / c.dipolar[(2, 3)];
        assert!(rel < 0.06, "relative deviation {rel}");
    }

    #[test]
    fn degenerate_modes_kill_offdiagonal_couplings() {
        let mut s = uniform_chain(4, 9.0, 1e6, 10.0);
        s.e0_sq = 0.0;
        let q = build_q(&s).unwrap();
        let d = DriveSpec::from_force(0.3, 0.1, s.omega_t + 1e4, 0.4, 1e4);
        let m = normal_modes(&q, &d).unwrap();
        let c = effective_couplings(&m, &d, &s).unwrap();
        let diag = -(d.omega_tilde * d.gamma).powi(2) / (4.0 * (s.omega_t - d.nu_tilde));
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { diag } else { 0.0 };
                assert!((c.j[(i, j)] - expect).abs() < 1e-12 * diag.abs());
            }
        }
    }

    #[test]
    fn dipolar_discrepancy_grows_as_detuning_shrinks() {
        let s = uniform_chain(6, 25.0, 5e6, 30.0);
        let q = build_q(&s).unwrap();
        let mut prev = 0.0;
        for k in 0..8 {
            let delta = 0.01 * s.omega_t / 1.5f64.powi(k);
            let d = DriveSpec::from_force(0.05 * delta, 0.1, s.omega_t + delta, 0.0, delta);
            let m = normal_modes(&q, &d).unwrap();
            let c = effective_couplings(&m, &d, &s).unwrap();
            let rel = (c.j[(2, 3)] - c.dipolar[(2, 3)]).abs() / c.dipolar[(2, 3)];
            assert!(rel > prev, "step {k}: {rel} after {prev}");
            prev = rel;
        }
    }

    #[test]
    fn resonant_detuning_rejected() {
        let s = uniform_chain(2, 9.0, 1e6, 10.0);
        let q = build_q(&s).unwrap();
        let d = DriveSpec::from_force(0.3, 0.1, s.omega_t, 0.0, 1.0);
        let m = normal_modes(&q, &d).unwrap();
        assert!(matches!(effective_couplings(&m, &d, &s), Err(Error::ResonantDetuning(0))));
    }

    #[test]
    fn pulse_areas_are_bounded() {
        assert!(drive().with_pulse_areas(vec![1.0, -2.0]).is_ok());
        assert!(drive().with_pulse_areas(vec![f64::NAN]).is_err());
        assert!(drive().with_pulse_areas(vec![1e3]).is_err());
    }

    #[test]
    fn preset_config_round_trips() {
        for name in PRESET_NAMES {
            let c = CrystalConfig::preset(name).unwrap();
            let text = serde_json::to_string(&c).unwrap();
            assert!(text.contains("N_or_shells"));
            let back: CrystalConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, c);
        }
        assert!(CrystalConfig::preset("nope").is_err());
    }

    #[test]
    fn quench_profile_scales_trap() {
        let s = uniform_chain(2, 9.0, 1e6, 10.0);
        let q = build_q(&s).unwrap().with_profile(TimeProfile::Quench(vec![Breakpoint { time: 1.0, scale: 2.0 }]));
        assert_eq!(q.matrix_at(0.5), q.matrix().clone());
        let m = q.matrix_at(1.5);
        assert_eq!(m[(1, 1)], 2.0 * s.omega_t);
        let bw = stiffness(&s) * s.omega_t;
        assert!((m[(0, 2)] - bw / 2.0).abs() < 1e-12 * bw);
    }

    proptest! {
        #[test]
        fn couplings_are_symmetric(
            n in 2usize..7,
            spacing in 15.0f64..40.0,
            det in 0.02f64..0.5,
            phi in 0.0f64..6.0,
        ) {
            let s = uniform_chain(n, 9.0, 1e6, spacing);
            let q = build_q(&s).unwrap();
            let d = DriveSpec::from_force(1e4, 0.1, s.omega_t * (1.0 + det), phi, s.omega_t * det);
            let m = normal_modes(&q, &d).unwrap();
            let c = effective_couplings(&m, &d, &s).unwrap();
            prop_assert!((&c.j - c.j.transpose()).amax() <= 1e-12 * c.j.amax());
            prop_assert!(c.imag_defect < 1e-12);
        }
    }
}
