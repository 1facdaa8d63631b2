//! Time-ordered evolution of vector blocks under H(t).

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::fock::FockSystem;
use super::sparse::C64;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stepper {
    /// exp(-i h H(t + h/2)), second order.
    #[default]
    Midpoint,
    /// Commutator-free fourth-order Magnus with two exponentials per step.
    Magnus4,
}

#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub stepper: Stepper,
    /// Steps per period of the fastest scale in H(t).
    pub steps_per_period: f64,
    /// Requested step; rejected if coarser than the resolution requirement.
    pub max_step: Option<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            stepper: Stepper::Midpoint,
            steps_per_period: 20.0,
            max_step: None,
        }
    }
}

impl EvolveOptions {
    pub fn magnus4(steps_per_period: f64) -> Self {
        EvolveOptions {
            stepper: Stepper::Magnus4,
            steps_per_period,
            max_step: None,
        }
    }
}

/// Row-major block of `k` state vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBlock {
    pub dim: usize,
    pub k: usize,
    pub data: Vec<C64>,
}

impl StateBlock {
    pub fn zeros(dim: usize, k: usize) -> Self {
        StateBlock {
            dim,
            k,
            data: vec![C64::new(0.0, 0.0); dim * k],
        }
    }

    /// Block whose v-th vector is the basis state `indices[v]`.
    pub fn basis(dim: usize, indices: &[usize]) -> Self {
        let k = indices.len();
        let mut b = Self::zeros(dim, k);
        for (v, &i) in indices.iter().enumerate() {
            b.data[i * k + v] = C64::new(1.0, 0.0);
        }
        b
    }

    pub fn identity(dim: usize) -> Self {
        Self::basis(dim, &(0..dim).collect::<Vec<_>>())
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.dim, self.k, &self.data)
    }

    pub fn from_matrix(m: &DMatrix<C64>) -> Self {
        let (dim, k) = m.shape();
        let mut data = Vec::with_capacity(dim * k);
        for r in 0..dim {
            for c in 0..k {
                data.push(m[(r, c)]);
            }
        }
        StateBlock { dim, k, data }
    }

    pub fn column(&self, v: usize) -> Vec<C64> {
        (0..self.dim).map(|r| self.data[r * self.k + v]).collect()
    }
}

const M4_C1: f64 = 0.5 - 0.288_675_134_594_812_9; // 1/2 - sqrt(3)/6
const M4_C2: f64 = 0.5 + 0.288_675_134_594_812_9;
const M4_A1: f64 = (3.0 - 2.0 * 1.732_050_807_568_877_2) / 12.0;
const M4_A2: f64 = (3.0 + 2.0 * 1.732_050_807_568_877_2) / 12.0;

impl FockSystem {
    /// Step size meeting the resolution requirement: `steps_per_period` steps
    /// per period of the fastest coefficient or of the time-dependent norm.
    pub fn step_size(&self, opts: &EvolveOptions) -> Result<f64> {
        let scale = self.max_frequency().max(self.time_dependent_norm());
        let required = if scale > 0.0 { 2.0 * PI / (opts.steps_per_period * scale) } else { f64::INFINITY };
        match opts.max_step {
            Some(h) if h > required => Err(Error::Resolution { required, actual: h }),
            Some(h) => Ok(h),
            None => Ok(required),
        }
    }

    fn steps(&self, t0: f64, t1: f64, opts: &EvolveOptions) -> Result<(usize, f64)> {
        let span = t1 - t0;
        if span < 0.0 {
            return Err(Error::NonMonotoneGrid);
        }
        if span == 0.0 {
            return Ok((0, 0.0));
        }
        if self.is_time_independent() {
            return Ok((1, span));
        }
        let h = self.step_size(opts)?;
        let n = (span / h).ceil().max(1.0) as usize;
        Ok((n, span / n as f64))
    }

    /// The two (or one) exponents of one step starting at t, applied in order.
    fn step_factors(&self, t: f64, h: f64, stepper: Stepper) -> Vec<Vec<C64>> {
        match stepper {
            Stepper::Midpoint => vec![self.hamiltonian_values(t + 0.5 * h)],
            Stepper::Magnus4 => {
                let c1 = self.coefficients(t + M4_C1 * h);
                let c2 = self.coefficients(t + M4_C2 * h);
                let mix = |a: f64, b: f64| -> Vec<f64> { c1.iter().zip(&c2).map(|(x, y)| a * x + b * y).collect() };
                let first = self.operators().combine(&mix(M4_A2, M4_A1));
                let second = self.operators().combine(&mix(M4_A1, M4_A2));
                vec![first, second]
            }
        }
    }

    /// block <- U(t1, t0) block.
    pub fn evolve(&self, block: &mut StateBlock, t0: f64, t1: f64, opts: &EvolveOptions) -> Result<()> {
        let (n, h) = self.steps(t0, t1, opts)?;
        for s in 0..n {
            let t = t0 + s as f64 * h;
            for vals in self.step_factors(t, h, opts.stepper) {
                self.operators().expmv_block(&vals, h, &mut block.data, block.k);
            }
        }
        Ok(())
    }

    /// block <- U(t1, t0)^dag block, the exact inverse of `evolve` on the same interval.
    pub fn evolve_back(&self, block: &mut StateBlock, t0: f64, t1: f64, opts: &EvolveOptions) -> Result<()> {
        let (n, h) = self.steps(t0, t1, opts)?;
        for s in (0..n).rev() {
            let t = t0 + s as f64 * h;
            for vals in self.step_factors(t, h, opts.stepper).into_iter().rev() {
                self.operators().expmv_block(&vals, -h, &mut block.data, block.k);
            }
        }
        Ok(())
    }

    /// Dense U(t1, t0); small systems only.
    pub fn unitary(&self, t0: f64, t1: f64, opts: &EvolveOptions) -> Result<DMatrix<C64>> {
        let mut b = StateBlock::identity(self.dim());
        self.evolve(&mut b, t0, t1, opts)?;
        Ok(b.to_matrix())
    }
}

/// ||U^dag U - 1|| by max entry.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    (u.adjoint() * u - DMatrix::identity(u.nrows(), u.ncols())).iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactsim::fock::{Axis, FockBuilder, Frame, TimeFn};
    use crate::exactsim::sparse::max_abs;

    fn coupled_q() -> DMatrix<f64> {
        let mut q = DMatrix::identity(4, 4);
        q[(0, 0)] = 0.9;
        q[(2, 2)] = 0.9;
        q[(0, 2)] = 0.1;
        q[(2, 0)] = 0.1;
        q
    }

    fn driven(frame: Frame, g: f64) -> FockSystem {
        FockBuilder::new(2, 3, frame)
            .unwrap()
            .quadratic(&coupled_q())
            .unwrap()
            .force(0, Axis::Z, TimeFn::sinusoid(g, 1.05, 0.3))
            .unwrap()
            .force(1, Axis::Z, TimeFn::sinusoid(g, 1.05, 0.3))
            .unwrap()
            .spin_field(1, Axis::X, TimeFn::constant(0.2))
            .unwrap()
            .build()
    }

    #[test]
    fn constant_hamiltonian_matches_direct_exponential() {
        let sys = FockBuilder::new(2, 2, Frame::Lab)
            .unwrap()
            .quadratic(&coupled_q())
            .unwrap()
            .force(0, Axis::Z, TimeFn::constant(0.3))
            .unwrap()
            .spin_field(1, Axis::X, TimeFn::constant(0.5))
            .unwrap()
            .build();
        let h = sys.dense_hamiltonian(0.0);
        let eig = h.symmetric_eigen();
        let t = 2.3;
        let ph = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(0.0, -l * t).exp()));
        let direct = &eig.eigenvectors * ph * eig.eigenvectors.adjoint();
        let u = sys.unitary(0.0, t, &EvolveOptions::default()).unwrap();
        assert!(max_abs((u - direct).as_slice()) < 1e-9);
    }

    #[test]
    fn evolution_is_unitary_and_invertible() {
        let sys = driven(Frame::Rotating { omega_ref: 1.0 }, 0.4);
        let opts = EvolveOptions::default();
        let u = sys.unitary(0.0, 6.0, &opts).unwrap();
        assert!(unitarity_defect(&u) < 1e-9);
        let mut b = StateBlock::basis(sys.dim(), &[0, 5, 17]);
        let orig = b.clone();
        sys.evolve(&mut b, 0.3, 4.1, &opts).unwrap();
        sys.evolve_back(&mut b, 0.3, 4.1, &opts).unwrap();
        let diff = b.data.iter().zip(&orig.data).fold(0.0_f64, |a, (x, y)| a.max((x - y).norm()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn lab_and_rotating_frames_agree_on_spin_observables() {
        let opts = EvolveOptions::magnus4(40.0);
        let lab = driven(Frame::Lab, 0.4);
        let rot = driven(Frame::Rotating { omega_ref: 1.0 }, 0.4);
        let t = 5.0;
        // U_lab = exp(-i H0 t) U_rot: spin populations and sigma^x coherences agree
        let start = [0usize, 4 * 8 + 4];
        let mut a = StateBlock::basis(lab.dim(), &start);
        let mut b = a.clone();
        lab.evolve(&mut a, 0.0, t, &opts).unwrap();
        rot.evolve(&mut b, 0.0, t, &opts).unwrap();
        for v in 0..2 {
            let expect = |sys: &FockSystem, blk: &StateBlock| {
                let col = blk.column(v);
                let sx = sys.apply_pauli(0, Axis::X, &col, 1);
                let sz = sys.apply_pauli(1, Axis::Z, &col, 1);
                let dot = |y: &[C64]| col.iter().zip(y).map(|(c, y)| c.conj() * y).sum::<C64>().re;
                (dot(&sx), dot(&sz))
            };
            let (ea, eb) = (expect(&lab, &a), expect(&rot, &b));
            assert!((ea.0 - eb.0).abs() < 1e-8 && (ea.1 - eb.1).abs() < 1e-8, "{ea:?} vs {eb:?}");
        }
    }

    #[test]
    fn refinement_converges() {
        let sys = driven(Frame::Rotating { omega_ref: 1.0 }, 0.6);
        let run = |spp: f64, stepper: Stepper| {
            let opts = EvolveOptions {
                stepper,
                steps_per_period: spp,
                max_step: None,
            };
            let mut b = StateBlock::basis(sys.dim(), &[3]);
            sys.evolve(&mut b, 0.0, 8.0, &opts).unwrap();
            b.data
        };
        let dist = |a: &[C64], b: &[C64]| a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()));
        let (m1, m2, m4) = (run(20.0, Stepper::Magnus4), run(40.0, Stepper::Magnus4), run(80.0, Stepper::Magnus4));
        let (e1, e2) = (dist(&m1, &m4), dist(&m2, &m4));
        assert!(e2 < 1e-8, "Magnus4 doubling change {e2}");
        assert!(e1 / e2 > 10.0, "fourth-order ratio {}", e1 / e2);
        let (p1, p2) = (run(80.0, Stepper::Midpoint), run(160.0, Stepper::Midpoint));
        let r = dist(&p1, &m4) / dist(&p2, &m4);
        assert!((r - 4.0).abs() < 0.5, "second-order ratio {r}");
    }

    #[test]
    fn zero_coupling_factorises() {
        // with g = 0 the spin evolves under its own field only
        let sys = FockBuilder::new(2, 3, Frame::Rotating { omega_ref: 1.0 })
            .unwrap()
            .quadratic(&coupled_q())
            .unwrap()
            .spin_field(0, Axis::X, TimeFn::cosine(0.7, 0.4))
            .unwrap()
            .build();
        let opts = EvolveOptions::magnus4(40.0);
        let lay = sys.layout;
        let start = lay.index(0b00, &[0, 0]);
        let mut b = StateBlock::basis(sys.dim(), &[start]);
        let t = 3.0;
        sys.evolve(&mut b, 0.0, t, &opts).unwrap();
        // closed form: sigma^x field commutes with itself, angle = int 0.7 cos(0.4 s) ds
        let angle = 0.7 / 0.4 * (0.4 * t).sin();
        let spin_amp_stay: f64 = (0..lay.n_boson().pow(2))
            .map(|k| {
                let occ = [k / lay.n_boson(), k % lay.n_boson()];
                b.data[lay.index(0b00, &occ)].norm_sqr()
            })
            .sum();
        assert!((spin_amp_stay - angle.cos().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn under_resolved_step_is_rejected() {
        let sys = driven(Frame::Lab, 0.4);
        let opts = EvolveOptions {
            max_step: Some(1.0),
            ..Default::default()
        };
        let mut b = StateBlock::basis(sys.dim(), &[0]);
        assert!(matches!(sys.evolve(&mut b, 0.0, 1.0, &opts), Err(Error::Resolution { .. })));
        assert!(matches!(sys.evolve(&mut b, 1.0, 0.0, &EvolveOptions::default()), Err(Error::NonMonotoneGrid)));
    }
}
