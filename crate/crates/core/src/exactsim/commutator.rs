//! Unequal-time commutator norms on the spin-times-reference-boson subspace.
//!
//! The truncated space has spurious states near the cutoff, so norms are
//! taken on the 2^N-dimensional subspace P spanned by all spin configurations
//! with every oscillator in its reference (vacuum) state: ||C P|| with
//! C = [A(t), B(0)]. Nonzero initial occupations enter through the
//! displacement frame (see the dominance suite).

use nalgebra::DMatrix;

use super::evolve::{EvolveOptions, StateBlock};
use super::fock::{Axis, FockSystem, Quadrature};
use super::sparse::C64;
use crate::error::{Error, Result};
use crate::linalg::complex_spectral_norm;

/// Basis indices of P ordered by spin configuration (site 0 most significant).
pub fn reference_subspace(sys: &FockSystem) -> Vec<usize> {
    let n = sys.n_sites();
    let zeros = vec![0; n];
    (0..1usize << n).map(|s| sys.layout.index(s, &zeros)).collect()
}

fn check_site(sys: &FockSystem, site: usize) -> Result<()> {
    if site >= sys.n_sites() {
        return Err(Error::InvalidParameter(format!("site {site} out of range")));
    }
    Ok(())
}

fn block_norm(b: &StateBlock) -> f64 {
    complex_spectral_norm(&b.to_matrix())
}

fn sub(a: &StateBlock, b: &StateBlock) -> StateBlock {
    StateBlock {
        dim: a.dim,
        k: a.k,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    }
}

/// A P = U^dag sigma_i^alpha U P for every requested probe site, sharing the
/// forward evolution.
fn heisenberg_on_subspace(
    sys: &FockSystem,
    probes: &[usize],
    alpha: Axis,
    t: f64,
    opts: &EvolveOptions,
) -> Result<Vec<StateBlock>> {
    let p = reference_subspace(sys);
    let mut y = StateBlock::basis(sys.dim(), &p);
    sys.evolve(&mut y, 0.0, t, opts)?;
    probes
        .iter()
        .map(|&i| {
            let mut z = StateBlock {
                dim: y.dim,
                k: y.k,
                data: sys.apply_pauli(i, alpha, &y.data, y.k),
            };
            sys.evolve_back(&mut z, 0.0, t, opts)?;
            Ok(z)
        })
        .collect()
}

/// sigma_j^phi restricted to P as a 2^N x 2^N matrix acting on coefficient vectors.
fn pauli_on_subspace(sys: &FockSystem, j: usize, phi: Axis) -> DMatrix<C64> {
    let p = reference_subspace(sys);
    let dim = sys.dim();
    let k = p.len();
    let basis = StateBlock::basis(dim, &p);
    let img = sys.apply_pauli(j, phi, &basis.data, k);
    DMatrix::from_fn(k, k, |r, c| img[p[r] * k + c])
}

/// C P = A sigma_j P - sigma_j A P, with A P given as a block.
fn commutator_block(sys: &FockSystem, ap: &StateBlock, j: usize, phi: Axis) -> StateBlock {
    let s = pauli_on_subspace(sys, j, phi);
    let a_sigma = StateBlock::from_matrix(&(ap.to_matrix() * s));
    let sigma_a = StateBlock {
        dim: ap.dim,
        k: ap.k,
        data: sys.apply_pauli(j, phi, &ap.data, ap.k),
    };
    sub(&a_sigma, &sigma_a)
}

/// ||[sigma_i^alpha(t), sigma_j^phi(0)] P||.
pub fn spin_commutator_norm(sys: &FockSystem, i: usize, alpha: Axis, j: usize, phi: Axis, t: f64, opts: &EvolveOptions) -> Result<f64> {
    Ok(spin_commutator_norms(sys, &[(i, j)], alpha, phi, t, opts)?[0])
}

/// Norms for several (probe, source) pairs at one time, sharing evolutions.
pub fn spin_commutator_norms(
    sys: &FockSystem,
    pairs: &[(usize, usize)],
    alpha: Axis,
    phi: Axis,
    t: f64,
    opts: &EvolveOptions,
) -> Result<Vec<f64>> {
    for &(i, j) in pairs {
        check_site(sys, i)?;
        check_site(sys, j)?;
    }
    let mut probes: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    probes.sort_unstable();
    probes.dedup();
    let aps = heisenberg_on_subspace(sys, &probes, alpha, t, opts)?;
    Ok(pairs
        .iter()
        .map(|&(i, j)| {
            let ap = &aps[probes.binary_search(&i).unwrap()];
            block_norm(&commutator_block(sys, ap, j, phi))
        })
        .collect())
}

/// Norms for several (probe, source) pairs and axis combinations on an
/// increasing time grid. The forward evolution advances segment by segment;
/// each backward pass retraces the same segments, so it inverts the forward
/// steps exactly. Returns one row per time, pairs varying fastest within
/// each axis combination.
pub fn spin_commutator_norms_along(
    sys: &FockSystem,
    pairs: &[(usize, usize)],
    axes: &[(Axis, Axis)],
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<Vec<f64>>> {
    for &(i, j) in pairs {
        check_site(sys, i)?;
        check_site(sys, j)?;
    }
    if times.first().is_some_and(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::NonMonotoneGrid);
    }
    let mut probes: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    probes.sort_unstable();
    probes.dedup();
    let p = reference_subspace(sys);
    let mut y = StateBlock::basis(sys.dim(), &p);
    let mut grid = vec![0.0];
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        sys.evolve(&mut y, *grid.last().unwrap(), t, opts)?;
        grid.push(t);
        let mut row = Vec::with_capacity(axes.len() * pairs.len());
        for &(alpha, phi) in axes {
            let mut aps = Vec::with_capacity(probes.len());
            for &i in &probes {
                let mut z = StateBlock {
                    dim: y.dim,
                    k: y.k,
                    data: sys.apply_pauli(i, alpha, &y.data, y.k),
                };
                for w in grid.windows(2).rev() {
                    sys.evolve_back(&mut z, w[0], w[1], opts)?;
                }
                aps.push(z);
            }
            for &(i, j) in pairs {
                let ap = &aps[probes.binary_search(&i).unwrap()];
                row.push(block_norm(&commutator_block(sys, ap, j, phi)));
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// ||[R_i^a(t), R_k^b(0)] P|| with lab-frame quadratures.
pub fn boson_commutator_norm(
    sys: &FockSystem,
    i: usize,
    a: Quadrature,
    k: usize,
    b: Quadrature,
    t: f64,
    opts: &EvolveOptions,
) -> Result<f64> {
    check_site(sys, i)?;
    check_site(sys, k)?;
    let p = reference_subspace(sys);
    let heis = |start: &StateBlock| -> Result<StateBlock> {
        let mut y = start.clone();
        sys.evolve(&mut y, 0.0, t, opts)?;
        let mut z = StateBlock {
            dim: y.dim,
            k: y.k,
            data: sys.apply_quadrature(i, a, t, &y.data, y.k),
        };
        sys.evolve_back(&mut z, 0.0, t, opts)?;
        Ok(z)
    };
    let basis = StateBlock::basis(sys.dim(), &p);
    let rk_p = StateBlock {
        dim: basis.dim,
        k: basis.k,
        data: sys.apply_quadrature(k, b, 0.0, &basis.data, basis.k),
    };
    let first = heis(&rk_p)?;
    let ri_p = heis(&basis)?;
    let second = StateBlock {
        dim: ri_p.dim,
        k: ri_p.k,
        data: sys.apply_quadrature(k, b, 0.0, &ri_p.data, ri_p.k),
    };
    Ok(block_norm(&sub(&first, &second)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactsim::fock::{FockBuilder, Frame, TimeFn};
    use crate::propagator::{ConstantPropagation, PropagatorFamily};

    fn q2() -> DMatrix<f64> {
        let mut q = DMatrix::identity(4, 4);
        q[(0, 0)] = 0.85;
        q[(2, 2)] = 0.85;
        q[(0, 2)] = 0.15;
        q[(2, 0)] = 0.15;
        q
    }

    fn system(g: f64) -> FockSystem {
        let mut b = FockBuilder::new(2, 4, Frame::Rotating { omega_ref: 1.0 }).unwrap().quadratic(&q2()).unwrap();
        for i in 0..2 {
            b = b
                .force(i, Axis::Z, TimeFn::sinusoid(g, 1.1, 0.0))
                .unwrap()
                .spin_field(i, Axis::X, TimeFn::constant(0.3))
                .unwrap();
        }
        b.build()
    }

    #[test]
    fn equal_time_values() {
        let sys = system(0.5);
        let opts = EvolveOptions::default();
        assert!(spin_commutator_norm(&sys, 0, Axis::X, 1, Axis::X, 0.0, &opts).unwrap() < 1e-14);
        let same = spin_commutator_norm(&sys, 0, Axis::X, 0, Axis::Z, 0.0, &opts).unwrap();
        assert!((same - 2.0).abs() < 1e-14);
    }

    #[test]
    fn norms_respect_the_ceiling_and_vanish_without_coupling() {
        let opts = EvolveOptions::magnus4(30.0);
        let sys = system(0.8);
        for t in [0.5, 2.0, 5.0] {
            let v = spin_commutator_norm(&sys, 0, Axis::X, 1, Axis::X, t, &opts).unwrap();
            assert!(v <= 2.0 + 1e-10);
        }
        assert!(spin_commutator_norm(&sys, 0, Axis::X, 1, Axis::X, 5.0, &opts).unwrap() > 1e-4);
        let free = system(0.0);
        assert!(spin_commutator_norm(&free, 0, Axis::X, 1, Axis::X, 5.0, &opts).unwrap() < 1e-12);
    }

    #[test]
    fn boson_commutator_matches_propagator() {
        let sys = FockBuilder::new(2, 6, Frame::Rotating { omega_ref: 1.0 }).unwrap().quadratic(&q2()).unwrap().build();
        let prop = ConstantPropagation::new(&q2(), 0.0).unwrap();
        let opts = EvolveOptions::magnus4(40.0);
        let t = 3.0;
        let w = prop.at(t);
        // [x_i(t), p_k] = i W_{x_i x_k}, [x_i(t), x_k] = -i W_{x_i p_k}
        let xx = boson_commutator_norm(&sys, 0, Quadrature::X, 1, Quadrature::P, t, &opts).unwrap();
        assert!((xx - w.matrix()[(0, 2)].abs()).abs() < 1e-6, "{xx} vs {}", w.matrix()[(0, 2)]);
        let xp = boson_commutator_norm(&sys, 0, Quadrature::X, 1, Quadrature::X, t, &opts).unwrap();
        assert!((xp - w.matrix()[(0, 3)].abs()).abs() < 1e-6);
    }

    #[test]
    fn grid_norms_match_single_time_norms() {
        let sys = system(0.8);
        let opts = EvolveOptions::magnus4(30.0);
        let times = [0.7, 1.9, 3.0];
        let grid = spin_commutator_norms_along(&sys, &[(0, 1), (1, 0)], &[(Axis::X, Axis::X), (Axis::Z, Axis::Y)], &times, &opts).unwrap();
        for (k, &t) in times.iter().enumerate() {
            let direct = spin_commutator_norms(&sys, &[(0, 1), (1, 0)], Axis::Z, Axis::Y, t, &opts).unwrap();
            assert!((grid[k][2] - direct[0]).abs() < 1e-8 && (grid[k][3] - direct[1]).abs() < 1e-8);
        }
        assert!(spin_commutator_norms_along(&sys, &[(0, 1)], &[(Axis::X, Axis::X)], &[2.0, 1.0], &opts).is_err());
    }
}
