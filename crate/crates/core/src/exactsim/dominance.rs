//! Randomised dominance check: exact commutator norms of small trapped-ion
//! systems against the trapped-ion bound, the bosonic bound and the ceiling 2.
//!
//! Units are fixed by beta omega_t = 1. Thermal occupations enter through
//! coherent-state sampling: for a coherent initial state |alpha>, the
//! displacement frame turns the force g sin(nu t - phi) x_i sigma_i^z into
//! the same force plus the c-number field g sin(nu t - phi) x_cl,i(t) sigma_i^z,
//! with x_cl the free classical trajectory, while the commutator norm on the
//! displaced reference subspace is unchanged.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::commutator::{boson_commutator_norm, spin_commutator_norms_along};
use super::evolve::EvolveOptions;
use super::fock::{Axis, FockBuilder, FockSystem, Frame, Quadrature, TimeFn};
use crate::bounds::{crossing_time, BoundModel, COMMUTATOR_CEILING};
use crate::crystal::KappaConvention;
use crate::error::{Error, Result};
use crate::lattice::{compute_a0, DecayEnvelope, LatticeGeometry};
use crate::propagator::ModalPropagator;

/// Relative and absolute slack allowed before a comparison counts as a violation.
const REL_SLACK: f64 = 1e-9;
const ABS_SLACK: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct DominanceConfig {
    pub n_sites: usize,
    pub draws: usize,
    pub seed: u64,
    pub n_max: usize,
    /// Number of grid times in (0, t_max], with t_max the time at which the
    /// trapped-ion bound at the largest separation reaches 2.
    pub time_points: usize,
    pub beta_range: (f64, f64),
    /// Neighbour gaps in units of the minimal spacing.
    pub gap_range: (f64, f64),
    /// Largest force g in units of beta omega_t.
    pub g_max: f64,
    /// Largest |nu - omega_t| in units of beta omega_t.
    pub detuning_max: f64,
    pub h_max: f64,
    /// Mean occupations cycled over the draws.
    pub nbars: Vec<f64>,
    /// Probe and source axes of the spin commutators.
    pub axes: Vec<(Axis, Axis)>,
    /// Every this many draws, repeat the final time at n_max + 2 and report
    /// the change (0 disables the check).
    pub truncation_every: usize,
    pub opts: EvolveOptions,
}

impl DominanceConfig {
    pub fn new(n_sites: usize, draws: usize, seed: u64) -> Self {
        DominanceConfig {
            n_sites,
            draws,
            seed,
            n_max: if n_sites <= 2 { 6 } else { 4 },
            time_points: 4,
            beta_range: (0.05, 0.2),
            gap_range: (1.0, 1.5),
            g_max: 5.0,
            detuning_max: 2.0,
            h_max: 2.0,
            nbars: vec![0.0, 5.0, 15.0],
            axes: vec![(Axis::X, Axis::X), (Axis::Z, Axis::X)],
            truncation_every: 5,
            opts: EvolveOptions::magnus4(10.0),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DrawReport {
    pub draw: usize,
    pub beta: f64,
    pub positions: Vec<f64>,
    pub g: f64,
    pub nu: f64,
    pub phi: f64,
    pub h: f64,
    pub nbar: f64,
    /// Sampled coherent amplitudes (re, im) per site.
    pub alpha: Vec<(f64, f64)>,
    pub a0: f64,
    pub times: Vec<f64>,
    pub max_spin_norm: f64,
    /// Largest exact / bound ratio over pairs and times.
    pub max_ratio: f64,
    pub max_boson_ratio: f64,
    pub violations: usize,
    /// Largest change of a spin norm when n_max grows by 2 (final time),
    /// for the draws where the check ran.
    pub truncation_delta: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DominanceReport {
    pub n_sites: usize,
    pub n_max: usize,
    pub draws: Vec<DrawReport>,
    pub violations: usize,
    pub max_ratio: f64,
    pub max_truncation_delta: f64,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

struct Draw {
    beta: f64,
    positions: Vec<f64>,
    g: f64,
    nu: f64,
    phi: f64,
    h: f64,
    nbar: f64,
    alpha: Vec<(f64, f64)>,
}

fn sample(cfg: &DominanceConfig, draw: usize) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(draw as u64);
    let beta = rng.gen_range(cfg.beta_range.0..=cfg.beta_range.1);
    let mut positions = vec![0.0];
    for _ in 1..cfg.n_sites {
        let gap = rng.gen_range(cfg.gap_range.0..=cfg.gap_range.1);
        positions.push(positions.last().unwrap() + gap);
    }
    let g = cfg.g_max * (1.0 - rng.gen::<f64>());
    let omega_t = 1.0 / beta;
    let nu = omega_t + rng.gen_range(-cfg.detuning_max..=cfg.detuning_max);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let h = rng.gen_range(0.0..=cfg.h_max);
    let nbar = if cfg.nbars.is_empty() { 0.0 } else { cfg.nbars[draw % cfg.nbars.len()] };
    let sd = (0.5 * nbar).sqrt();
    let alpha = (0..cfg.n_sites)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            (sd * re, sd * im)
        })
        .collect();
    Draw {
        beta,
        positions,
        g,
        nu,
        phi,
        h,
        nbar,
        alpha,
    }
}

/// Trap matrix in units beta omega_t = 1: xx block omega_t + V~, pp block omega_t.
fn trap_q(beta: f64, positions: &[f64]) -> DMatrix<f64> {
    let n = positions.len();
    let omega_t = 1.0 / beta;
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                let v = (positions[i] - positions[j]).abs().powi(-3);
                q[(2 * i, 2 * j)] = v;
                row += v;
            }
        }
        q[(2 * i, 2 * i)] = omega_t - row;
        q[(2 * i + 1, 2 * i + 1)] = omega_t;
    }
    q
}

fn build_system(d: &Draw, q: &DMatrix<f64>, n_max: usize) -> Result<FockSystem> {
    let n = d.positions.len();
    let modal = Arc::new(ModalPropagator::new(q, 0.0)?.ok_or_else(|| Error::Unsupported("trap Q expected".into()))?);
    let r0: Vec<(f64, f64)> = d.alpha.iter().map(|&(re, im)| (std::f64::consts::SQRT_2 * re, std::f64::consts::SQRT_2 * im)).collect();
    let r0 = Arc::new(r0);
    let amp_cl = r0.iter().map(|(x, p)| x.hypot(*p)).sum::<f64>();
    let mut b = FockBuilder::new(n, n_max, Frame::Rotating { omega_ref: 1.0 / d.beta })?.quadratic(q)?;
    for i in 0..n {
        b = b.force(i, Axis::Z, TimeFn::sinusoid(d.g, d.nu, d.phi))?;
        if d.h != 0.0 {
            b = b.spin_field(i, Axis::X, TimeFn::constant(d.h))?;
        }
        if amp_cl > 0.0 {
            let freq = d.nu + modal.omega().max();
            let (modal, r0) = (modal.clone(), r0.clone());
            let (g, nu, phi) = (d.g, d.nu, d.phi);
            let x_cl = move |t: f64| {
                let (xx, xp, _) = modal.sectors(t);
                (0..r0.len()).map(|k| xx[(i, k)] * r0[k].0 + xp[(i, k)] * r0[k].1).sum::<f64>()
            };
            let field = TimeFn::from_fn(move |t| g * (nu * t - phi).sin() * x_cl(t), freq, d.g * amp_cl);
            b = b.spin_field(i, Axis::Z, field)?;
        }
    }
    Ok(b.build())
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

fn exceeds(value: f64, bound: f64) -> bool {
    value > bound * (1.0 + REL_SLACK) + ABS_SLACK
}

fn run_draw(cfg: &DominanceConfig, draw: usize) -> Result<DrawReport> {
    let d = sample(cfg, draw);
    let n = cfg.n_sites;
    let q = trap_q(d.beta, &d.positions);
    let geom = LatticeGeometry::explicit(d.positions.iter().map(|&x| [x, 0.0]).collect())?;
    let a0 = compute_a0(&geom, &DecayEnvelope::power_law(3.0))?.a0;
    let model = BoundModel::trapped_ion(a0, 1.0, d.g, KappaConvention::KappaSupp);
    let d_max = d.positions[n - 1] - d.positions[0];
    let t_max = crossing_time(|t| model.trapped_ion_bound(d_max, t), COMMUTATOR_CEILING, 100.0)
        .ok_or_else(|| Error::Convergence { iterations: 0, residual: d_max })?;
    let times: Vec<f64> = (1..=cfg.time_points).map(|k| t_max * k as f64 / cfg.time_points as f64).collect();
    let sys = build_system(&d, &q, cfg.n_max)?;
    let prs = pairs(n);
    let (mut max_norm, mut max_ratio, mut violations) = (0.0_f64, 0.0_f64, 0);
    let rows = spin_commutator_norms_along(&sys, &prs, &cfg.axes, &times, &cfg.opts)?;
    for (&t, row) in times.iter().zip(&rows) {
        for (k, &v) in row.iter().enumerate() {
            let (i, j) = prs[k % prs.len()];
            let bound = model.trapped_ion_bound(geom.d(i, j), t);
            max_norm = max_norm.max(v);
            max_ratio = max_ratio.max(v / bound);
            if exceeds(v, bound) || exceeds(v, COMMUTATOR_CEILING) {
                violations += 1;
            }
        }
    }
    // bosonic commutator across the crystal at the final time
    let v = boson_commutator_norm(&sys, 0, Quadrature::X, n - 1, Quadrature::P, t_max, &cfg.opts)?;
    let bound = model.bosonic(d_max, t_max, false);
    let max_boson_ratio = v / bound;
    if exceeds(v, bound) {
        violations += 1;
    }
    let truncation_delta = if cfg.truncation_every > 0 && draw % cfg.truncation_every == 0 {
        let finer = build_system(&d, &q, cfg.n_max + 2)?;
        let fine = spin_commutator_norms_along(&finer, &prs, &cfg.axes, &[t_max], &cfg.opts)?;
        let last = rows.last().unwrap();
        Some(fine[0].iter().zip(last).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    } else {
        None
    };
    Ok(DrawReport {
        draw,
        beta: d.beta,
        positions: d.positions,
        g: d.g,
        nu: d.nu,
        phi: d.phi,
        h: d.h,
        nbar: d.nbar,
        alpha: d.alpha,
        a0,
        times,
        max_spin_norm: max_norm,
        max_ratio,
        max_boson_ratio,
        violations,
        truncation_delta,
    })
}

/// Runs every draw (in parallel, each with its own seeded stream).
pub fn dominance_suite(cfg: &DominanceConfig) -> Result<DominanceReport> {
    if !(2..=3).contains(&cfg.n_sites) {
        return Err(Error::InvalidParameter(format!("dominance suite needs N in 2..=3, got {}", cfg.n_sites)));
    }
    if cfg.time_points == 0 || cfg.gap_range.0 < 1.0 || cfg.beta_range.0 <= 0.0 {
        return Err(Error::InvalidParameter("need time points, gaps >= 1 and beta > 0".into()));
    }
    let draws = (0..cfg.draws).into_par_iter().map(|k| run_draw(cfg, k)).collect::<Result<Vec<_>>>()?;
    Ok(DominanceReport {
        n_sites: cfg.n_sites,
        n_max: cfg.n_max,
        violations: draws.iter().map(|d| d.violations).sum(),
        max_ratio: draws.iter().map(|d| d.max_ratio).fold(0.0, f64::max),
        max_truncation_delta: draws.iter().filter_map(|d| d.truncation_delta).fold(0.0, f64::max),
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_in_range() {
        let cfg = DominanceConfig::new(3, 4, 11);
        let a = sample(&cfg, 2);
        let b = sample(&cfg, 2);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.alpha, b.alpha);
        assert!(a.g > 0.0 && a.g <= 5.0);
        assert!((0.05..=0.2).contains(&a.beta));
        assert_eq!(a.nbar, 15.0);
        let c = sample(&cfg, 3);
        assert_ne!(a.g, c.g);
    }

    #[test]
    fn trap_matrix_has_positive_modes() {
        let q = trap_q(0.2, &[0.0, 1.0, 2.0]);
        let m = ModalPropagator::new(&q, 0.0).unwrap().unwrap();
        assert!(m.omega().iter().all(|&w| w > 0.0));
        // centre-of-mass mode at omega_t
        assert!((m.omega().max() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn small_suite_passes() {
        let mut cfg = DominanceConfig::new(2, 3, 5);
        cfg.n_max = 4;
        cfg.time_points = 3;
        cfg.truncation_every = 2;
        let r = dominance_suite(&cfg).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.draws.iter().all(|d| d.max_spin_norm <= 2.0 + 1e-10));
        assert!(r.draws[0].truncation_delta.is_some() && r.draws[1].truncation_delta.is_none());
    }
}
