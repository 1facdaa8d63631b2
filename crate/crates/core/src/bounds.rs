//! Lieb-Robinson bounds as explicit functions of distance and time, and
//! extraction of cone fronts from (site, time) fields.
//!
//! Every bound is evaluated in log space so that huge exponentials multiplied
//! by tiny prefactors neither overflow early nor produce inf * 0.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crystal::KappaConvention;
use crate::error::{Error, Result};
use crate::lattice::{DecayEnvelope, LatticeGeometry};
use crate::propagator::ModalPropagator;

/// Commutator-norm ceiling for Pauli operators, ||[A, B]|| <= 2 ||A|| ||B||.
pub const COMMUTATOR_CEILING: f64 = 2.0;

/// Default "correlations have arrived" threshold, 1e-2 of the ceiling.
pub const ARRIVAL_THRESHOLD: f64 = 1e-2 * COMMUTATOR_CEILING;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Eq4,
    Eq9,
    Eq10,
    Eq11Main,
    Eq11Supp,
    Bosonic,
    ImpulsiveExact,
}

impl BoundKind {
    pub const ALL: [BoundKind; 7] = [
        BoundKind::Eq4,
        BoundKind::Eq9,
        BoundKind::Eq10,
        BoundKind::Eq11Main,
        BoundKind::Eq11Supp,
        BoundKind::Bosonic,
        BoundKind::ImpulsiveExact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::Eq4 => "eq4",
            BoundKind::Eq9 => "eq9",
            BoundKind::Eq10 => "eq10",
            BoundKind::Eq11Main => "eq11_main",
            BoundKind::Eq11Supp => "eq11_supp",
            BoundKind::Bosonic => "bosonic",
            BoundKind::ImpulsiveExact => "impulsive_exact",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        BoundKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown bound kind '{s}'")))
    }
}

/// Leading prefactor of the generic spin-boson bound: one printed form
/// carries the bosonic alpha, the other does not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eq4Prefactor {
    #[default]
    Supplement,
    MainText,
}

/// Where the pulse areas sit in the impulsive envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SineConvention {
    /// 8 |sin W^xp| theta_i theta_j.
    #[default]
    ThetaOutside,
    /// 8 |sin(W^xp theta_i theta_j)|.
    ThetaInside,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundModel {
    pub a0: f64,
    /// Bosonic prefactor, (1 + a0)/a0 for the power-law case.
    pub alpha: f64,
    /// v_LR = kappa a0 (rad/s).
    pub v_lr: f64,
    pub kappa: f64,
    pub kappa_convention: Option<KappaConvention>,
    pub g: f64,
    pub s: f64,
    /// chi = 2 g^2 S alpha.
    pub chi: f64,
    pub eta: f64,
    pub mu: f64,
    /// alpha1 = 8 a0.
    pub alpha1: f64,
    /// alpha2 = (1/4)(1 + 1/a0)(g / beta omega_t)^2.
    pub alpha2: f64,
    /// (a0/8)(g/delta_t)^2, once a detuning is set.
    pub alpha2_tilde: Option<f64>,
    /// (g/delta_t)^2 for the alternative spin-model exponent.
    pub g_over_delta_sq: Option<f64>,
    pub beta_omega_t: f64,
    /// J0 = (1/16)(g/delta_t)^2 beta omega_t.
    pub j0: Option<f64>,
}

impl BoundModel {
    /// Trapped-ion parameter bundle: S = 1, f(d) = (1 + d)^{-3}.
    pub fn trapped_ion(a0: f64, beta_omega_t: f64, g: f64, convention: KappaConvention) -> Self {
        let alpha = (1.0 + a0) / a0;
        let kappa = convention.kappa(beta_omega_t);
        let s = 1.0;
        BoundModel {
            a0,
            alpha,
            v_lr: kappa * a0,
            kappa,
            kappa_convention: Some(convention),
            g,
            s,
            chi: 2.0 * g * g * s * alpha,
            eta: 3.0,
            mu: 0.0,
            alpha1: 8.0 * a0,
            alpha2: 0.25 * (1.0 + 1.0 / a0) * (g / beta_omega_t).powi(2),
            alpha2_tilde: None,
            g_over_delta_sq: None,
            beta_omega_t,
            j0: None,
        }
    }

    /// Generic spin-boson bundle for an arbitrary envelope and kappa.
    pub fn generic(a0: f64, env: &DecayEnvelope, kappa: f64, g: f64, s: f64, beta_omega_t: f64) -> Self {
        let alpha = env.alpha;
        BoundModel {
            a0,
            alpha,
            v_lr: kappa * a0,
            kappa,
            kappa_convention: None,
            g,
            s,
            chi: 2.0 * g * g * s * alpha,
            eta: env.eta,
            mu: env.mu,
            alpha1: 8.0 * a0,
            alpha2: 0.25 * (1.0 + 1.0 / a0) * (g / beta_omega_t).powi(2),
            alpha2_tilde: None,
            g_over_delta_sq: None,
            beta_omega_t,
            j0: None,
        }
    }

    /// Sets the detuning delta_t used by the spin-model bounds.
    pub fn with_detuning(mut self, delta_t: f64) -> Self {
        let r2 = (self.g / delta_t).powi(2);
        self.alpha2_tilde = Some(self.a0 / 8.0 * r2);
        self.g_over_delta_sq = Some(r2);
        self.j0 = Some(r2 * self.beta_omega_t / 16.0);
        self
    }

    /// Replaces kappa (e.g. by the value measured on Q); v_LR follows.
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self.v_lr = kappa * self.a0;
        self.kappa_convention = None;
        self
    }

    fn ln_f(&self, d: f64) -> f64 {
        -self.mu * d - self.eta * d.ln_1p()
    }

    /// Generic spin-boson bound
    /// P e^{v_LR t} f(d) (2 S^2 / a0) (e^{(chi a0 / v_LR) t} - 1),
    /// with P = alpha (`MainText`) or 1 (`Supplement`).
    pub fn generic_spin_boson(&self, d: f64, t: f64, prefactor: Eq4Prefactor) -> f64 {
        let bracket = (self.chi * self.a0 / self.v_lr * t).exp_m1();
        if bracket <= 0.0 {
            return 0.0;
        }
        let p = match prefactor {
            Eq4Prefactor::Supplement => 0.0,
            Eq4Prefactor::MainText => self.alpha.ln(),
        };
        (p + self.v_lr * t + self.ln_f(d) + (2.0 * self.s * self.s / self.a0).ln() + bracket.ln()).exp()
    }

    /// Trapped-ion spin-boson bound
    /// 2 / (a0 (1+d)^3) e^{alpha1 bw t} (e^{alpha2 bw t} - 1).
    pub fn trapped_ion_bound(&self, d: f64, t: f64) -> f64 {
        let x = self.beta_omega_t * t;
        let bracket = (self.alpha2 * x).exp_m1();
        if bracket <= 0.0 {
            return 0.0;
        }
        ((2.0 / self.a0).ln() - 3.0 * d.ln_1p() + self.alpha1 * x + bracket.ln()).exp()
    }

    /// Free-boson propagator bound delta_jk + e^{kappa a0 t - mu d} / (a0 (1+d)^eta).
    pub fn bosonic(&self, d: f64, t: f64, same_site: bool) -> f64 {
        let delta = if same_site { 1.0 } else { 0.0 };
        delta + (self.kappa * self.a0 * t - self.mu * d - self.a0.ln() - self.eta * d.ln_1p()).exp()
    }

    /// Looser variant (1 + a0)/a0 e^{kappa a0 t - mu d} / (1+d)^eta.
    pub fn bosonic_loose(&self, d: f64, t: f64) -> f64 {
        (((1.0 + self.a0) / self.a0).ln() + self.kappa * self.a0 * t - self.mu * d - self.eta * d.ln_1p()).exp()
    }

    /// Perturbative spin-model bound
    /// 2 / (a0 (1+d)^3) (e^{alpha2~ bw t} - 1), alpha2~ = (a0/8)(g/delta)^2.
    pub fn spin_model_main(&self, d: f64, t: f64) -> Result<f64> {
        let a2 = self
            .alpha2_tilde
            .ok_or_else(|| Error::InvalidParameter("spin-model bound needs a detuning".into()))?;
        Ok(self.spin_model_with(a2, d, t))
    }

    /// Perturbative spin-model bound, alternative form with exponent
    /// a0 (g/delta)^2 bw t.
    pub fn spin_model_supp(&self, d: f64, t: f64) -> Result<f64> {
        let r2 = self
            .g_over_delta_sq
            .ok_or_else(|| Error::InvalidParameter("spin-model bound needs a detuning".into()))?;
        Ok(self.spin_model_with(self.a0 * r2, d, t))
    }

    fn spin_model_with(&self, rate: f64, d: f64, t: f64) -> f64 {
        let bracket = (rate * self.beta_omega_t * t).exp_m1();
        if bracket <= 0.0 {
            return 0.0;
        }
        ((2.0 / self.a0).ln() - 3.0 * d.ln_1p() + bracket.ln()).exp()
    }

    /// Impulsive bound 8 (1 + a0) / (a0 (1+d)^3) e^{alpha1 bw t} |theta_i theta_j|.
    pub fn impulsive(&self, d: f64, t: f64, theta_i: f64, theta_j: f64) -> f64 {
        let th = (theta_i * theta_j).abs();
        if th == 0.0 {
            return 0.0;
        }
        ((8.0 * (1.0 + self.a0) / self.a0).ln() - 3.0 * d.ln_1p() + self.alpha1 * self.beta_omega_t * t + th.ln()).exp()
    }

    /// Dispatches on a closed-form bound kind. Pulse areas are used by Eq10 only.
    pub fn eval(&self, kind: BoundKind, d: f64, t: f64, thetas: (f64, f64)) -> Result<f64> {
        Ok(match kind {
            BoundKind::Eq4 => self.generic_spin_boson(d, t, Eq4Prefactor::Supplement),
            BoundKind::Eq9 => self.trapped_ion_bound(d, t),
            BoundKind::Eq10 => self.impulsive(d, t, thetas.0, thetas.1),
            BoundKind::Eq11Main => self.spin_model_main(d, t)?,
            BoundKind::Eq11Supp => self.spin_model_supp(d, t)?,
            BoundKind::Bosonic => self.bosonic(d, t, d == 0.0),
            BoundKind::ImpulsiveExact => {
                return Err(Error::NotApplicable("the exact impulsive envelope needs a propagator".into()))
            }
        })
    }
}

/// Closed-form bound over every site (rows) and time (columns), with
/// distances measured from `source` on the idealised lattice.
pub fn bound_field(
    model: &BoundModel,
    kind: BoundKind,
    geom: &LatticeGeometry,
    source: usize,
    times: &[f64],
    thetas: (f64, f64),
) -> Result<DMatrix<f64>> {
    let n = geom.n();
    if source >= n {
        return Err(Error::InvalidParameter(format!("source {source} out of range for N = {n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| times.iter().map(|&t| model.eval(kind, geom.d(j, source), t, thetas)).collect())
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, times.len(), |j, k| rows[j][k]))
}

/// Running maximum over tau <= t of 8 |sin(.)| for a series of
/// W^xp_ij(tau, 0) on a monotone grid.
pub fn impulsive_exact_envelope(xp_series: &[f64], theta_i: f64, theta_j: f64, convention: SineConvention) -> Vec<f64> {
    let mut run = 0.0_f64;
    xp_series
        .iter()
        .map(|&w| {
            let v = match convention {
                SineConvention::ThetaOutside => 8.0 * w.sin().abs() * (theta_i * theta_j).abs(),
                SineConvention::ThetaInside => 8.0 * (w * theta_i * theta_j).sin().abs(),
            };
            run = run.max(v);
            run
        })
        .collect()
}

/// Exact impulsive envelope for every site i against a fixed source j, with
/// uniform pulse area theta on all sites.
pub fn impulsive_exact_field(
    modal: &ModalPropagator,
    source: usize,
    times: &[f64],
    theta: f64,
    convention: SineConvention,
) -> Result<DMatrix<f64>> {
    use crate::propagator::PropagatorFamily;
    let n = modal.n();
    if source >= n {
        return Err(Error::InvalidParameter(format!("source {source} out of range for N = {n}")));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::NonMonotoneGrid);
    }
    let cols: Vec<_> = times.par_iter().map(|&t| modal.xp_column(source, t)).collect();
    let mut field = DMatrix::zeros(n, times.len());
    for i in 0..n {
        let series: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        let env = impulsive_exact_envelope(&series, theta, theta, convention);
        for (k, v) in env.into_iter().enumerate() {
            field[(i, k)] = v;
        }
    }
    Ok(field)
}

/// First crossing of `threshold` per site, linearly interpolated between grid
/// points; `None` when the field never reaches it.
pub fn front_extract(field: &DMatrix<f64>, times: &[f64], threshold: f64) -> Result<Vec<Option<f64>>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter("threshold must be positive".into()));
    }
    if field.ncols() != times.len() {
        return Err(Error::InvalidSize("field columns must match the time grid".into()));
    }
    Ok((0..field.nrows())
        .map(|j| {
            let row = field.row(j);
            let k = (0..times.len()).find(|&k| row[k] >= threshold)?;
            if k == 0 {
                return Some(times[0]);
            }
            let (f0, f1) = (row[k - 1], row[k]);
            let frac = (threshold - f0) / (f1 - f0);
            Some(times[k - 1] + frac * (times[k] - times[k - 1]))
        })
        .collect())
}

/// Least-squares slope of distance against arrival time.
pub fn fit_speed(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.1).sum::<f64>() / n;
    let md = points.iter().map(|p| p.0).sum::<f64>() / n;
    let cov: f64 = points.iter().map(|p| (p.1 - mt) * (p.0 - md)).sum();
    let var: f64 = points.iter().map(|p| (p.1 - mt).powi(2)).sum();
    (var > 0.0).then(|| cov / var)
}

/// First time in [0, t_max] at which a nondecreasing function reaches
/// `threshold`, by bisection to relative precision 1e-12.
pub fn crossing_time(f: impl Fn(f64) -> f64, threshold: f64, t_max: f64) -> Option<f64> {
    if f(t_max) < threshold {
        return None;
    }
    if f(0.0) >= threshold {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0, t_max);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}
