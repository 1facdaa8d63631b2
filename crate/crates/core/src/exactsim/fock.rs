//! Truncated-Fock representation of the spin-boson lattice Hamiltonian.
//!
//! Basis: site-major product of per-site spaces, each spin (major) times boson
//! number (minor), local index s (n_max + 1) + n with spin up = 0. Site 0 is the
//! most significant digit of the global index.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::sparse::{OperatorSum, C64};
use crate::crystal::{build_q, CrystalSpec, DriveSpec};
use crate::error::{Error, Result};
use crate::propagator::PulseShape;

/// Default cap on the Hilbert-space dimension.
pub const DEFAULT_DIM_CAP: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    X,
    P,
}

/// Frame in which H(t) is represented. The rotating frame is the interaction
/// picture with respect to omega_ref sum_i a_i^dag a_i; spin operators are the
/// same in both frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    Lab,
    Rotating { omega_ref: f64 },
}

/// Real coefficient function with hints for step-size selection: the largest
/// angular frequency it contains and its largest magnitude.
#[derive(Clone)]
pub struct TimeFn {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub freq: f64,
    pub amp: f64,
    pub constant: bool,
}

impl std::fmt::Debug for TimeFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TimeFn")
            .field("freq", &self.freq)
            .field("amp", &self.amp)
            .field("constant", &self.constant)
            .finish()
    }
}

impl TimeFn {
    pub fn constant(v: f64) -> Self {
        TimeFn {
            f: Arc::new(move |_| v),
            freq: 0.0,
            amp: v.abs(),
            constant: true,
        }
    }

    /// amp sin(nu t - phase).
    pub fn sinusoid(amp: f64, nu: f64, phase: f64) -> Self {
        TimeFn {
            f: Arc::new(move |t| amp * (nu * t - phase).sin()),
            freq: nu.abs(),
            amp: amp.abs(),
            constant: false,
        }
    }

    /// amp cos(nu t).
    pub fn cosine(amp: f64, nu: f64) -> Self {
        TimeFn {
            f: Arc::new(move |t| amp * (nu * t).cos()),
            freq: nu.abs(),
            amp: amp.abs(),
            constant: false,
        }
    }

    /// Pulse profile; the inverse width serves as the frequency scale.
    pub fn pulse(shape: PulseShape) -> Self {
        let (freq, amp) = match shape {
            PulseShape::Gaussian { width, area, .. } => (2.0 / width, area.abs() / (width * (2.0 * std::f64::consts::PI).sqrt())),
            PulseShape::Rect { duration, area, .. } => (2.0 / duration, area.abs() / duration),
        };
        TimeFn {
            f: Arc::new(move |t| shape.value(t)),
            freq,
            amp,
            constant: false,
        }
    }

    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static, freq: f64, amp: f64) -> Self {
        TimeFn {
            f: Arc::new(f),
            freq,
            amp,
            constant: false,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }
}

/// Frame factor multiplying a coefficient: c = cos(omega_ref t), s = sin(omega_ref t).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RotFactor {
    One,
    Cos,
    Sin,
    Cos2,
    CosSin,
    Sin2,
}

impl RotFactor {
    fn eval(self, w: f64, t: f64) -> f64 {
        let (s, c) = (w * t).sin_cos();
        match self {
            RotFactor::One => 1.0,
            RotFactor::Cos => c,
            RotFactor::Sin => s,
            RotFactor::Cos2 => c * c,
            RotFactor::CosSin => c * s,
            RotFactor::Sin2 => s * s,
        }
    }

    fn freq(self, w: f64) -> f64 {
        match self {
            RotFactor::One => 0.0,
            RotFactor::Cos | RotFactor::Sin => w.abs(),
            _ => 2.0 * w.abs(),
        }
    }
}

#[derive(Clone, Debug)]
struct Coef {
    base: TimeFn,
    rot: RotFactor,
}

/// Local operators on one site, exact matrix elements of the untruncated
/// operators restricted to occupations 0..=n_max.
#[derive(Clone, Debug)]
pub struct LocalOps {
    pub n_max: usize,
    pub x: DMatrix<C64>,
    pub p: DMatrix<C64>,
    pub xx: DMatrix<C64>,
    pub pp: DMatrix<C64>,
    /// xp + px.
    pub xp_sym: DMatrix<C64>,
    pub number: DMatrix<C64>,
}

impl LocalOps {
    pub fn new(n_max: usize) -> Self {
        let m = n_max + 2;
        let mut a = DMatrix::<C64>::zeros(m, m);
        for n in 1..m {
            a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
        }
        let ad = a.adjoint();
        let x = (&a + &ad) * C64::new(1.0 / SQRT_2, 0.0);
        let p = (&ad - &a) * C64::new(0.0, 1.0 / SQRT_2);
        let cut = |op: DMatrix<C64>| op.view((0, 0), (n_max + 1, n_max + 1)).into_owned();
        LocalOps {
            n_max,
            xx: cut(&x * &x),
            pp: cut(&p * &p),
            xp_sym: cut(&x * &p + &p * &x),
            number: cut(&ad * &a),
            x: cut(x),
            p: cut(p),
        }
    }

    pub fn quadrature(&self, q: Quadrature) -> &DMatrix<C64> {
        match q {
            Quadrature::X => &self.x,
            Quadrature::P => &self.p,
        }
    }
}

pub fn pauli(axis: Axis) -> DMatrix<C64> {
    let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    match axis {
        Axis::X => DMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        Axis::Y => DMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        Axis::Z => DMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub n_sites: usize,
    pub n_max: usize,
}

impl Layout {
    pub fn n_boson(&self) -> usize {
        self.n_max + 1
    }

    pub fn local_dim(&self) -> usize {
        2 * self.n_boson()
    }

    pub fn dim(&self) -> usize {
        self.local_dim().pow(self.n_sites as u32)
    }

    pub fn stride(&self, site: usize) -> usize {
        self.local_dim().pow((self.n_sites - 1 - site) as u32)
    }

    pub fn digit(&self, idx: usize, site: usize) -> usize {
        (idx / self.stride(site)) % self.local_dim()
    }

    /// Global index of a spin configuration (bit of site 0 most significant,
    /// 1 = down) with given boson occupations.
    pub fn index(&self, spins: usize, occupations: &[usize]) -> usize {
        (0..self.n_sites)
            .map(|s| {
                let spin = (spins >> (self.n_sites - 1 - s)) & 1;
                (spin * self.n_boson() + occupations[s]) * self.stride(s)
            })
            .sum()
    }

    /// Sparse triplets of the tensor product of local operators on distinct
    /// sites (identity elsewhere), scaled by `scale`.
    pub fn kron_triplets(&self, factors: &[(usize, &DMatrix<C64>)], scale: f64) -> Vec<(usize, usize, C64)> {
        let l = self.local_dim();
        let cols: Vec<Vec<Vec<(usize, C64)>>> = factors
            .iter()
            .map(|(_, m)| {
                (0..l)
                    .map(|c| (0..l).filter(|&r| m[(r, c)].norm() > 0.0).map(|r| (r, m[(r, c)])).collect())
                    .collect()
            })
            .collect();
        let mut out = Vec::new();
        for col in 0..self.dim() {
            let mut partial = vec![(col, C64::new(scale, 0.0))];
            for (f, (site, _)) in factors.iter().enumerate() {
                let stride = self.stride(*site);
                let d = self.digit(col, *site);
                let mut next = Vec::with_capacity(partial.len() * 2);
                for &(row, v) in &partial {
                    for &(r, x) in &cols[f][d] {
                        next.push((row + r * stride - d * stride, v * x));
                    }
                }
                partial = next;
            }
            out.extend(partial.into_iter().map(|(r, v)| (r, col, v)));
        }
        out
    }
}

/// Assembled spin-boson system H(t) = sum_k c_k(t) O_k.
#[derive(Clone, Debug)]
pub struct FockSystem {
    pub layout: Layout,
    pub frame: Frame,
    ops: OperatorSum,
    coefs: Vec<Coef>,
}

impl FockSystem {
    pub fn n_sites(&self) -> usize {
        self.layout.n_sites
    }

    pub fn n_max(&self) -> usize {
        self.layout.n_max
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    pub fn operators(&self) -> &OperatorSum {
        &self.ops
    }

    fn omega_ref(&self) -> f64 {
        match self.frame {
            Frame::Lab => 0.0,
            Frame::Rotating { omega_ref } => omega_ref,
        }
    }

    pub fn coefficients(&self, t: f64) -> Vec<f64> {
        let w = self.omega_ref();
        self.coefs.iter().map(|c| c.base.eval(t) * c.rot.eval(w, t)).collect()
    }

    pub fn hamiltonian_values(&self, t: f64) -> Vec<C64> {
        self.ops.combine(&self.coefficients(t))
    }

    pub fn dense_hamiltonian(&self, t: f64) -> DMatrix<C64> {
        self.ops.to_dense(&self.hamiltonian_values(t))
    }

    pub fn is_time_independent(&self) -> bool {
        self.coefs.iter().all(|c| c.base.constant && c.rot == RotFactor::One)
    }

    /// Largest angular frequency among the coefficients.
    pub fn max_frequency(&self) -> f64 {
        let w = self.omega_ref();
        self.coefs
            .iter()
            .filter(|c| !(c.base.constant && c.rot == RotFactor::One))
            .map(|c| c.base.freq + c.rot.freq(w))
            .fold(0.0, f64::max)
    }

    /// Upper estimate of the 1-norm of the time-dependent part of H.
    pub fn time_dependent_norm(&self) -> f64 {
        self.coefs
            .iter()
            .enumerate()
            .filter(|(_, c)| !(c.base.constant && c.rot == RotFactor::One))
            .map(|(k, c)| c.base.amp * self.ops.one_norm(self.ops.term(k)))
            .sum()
    }

    /// Applies sigma^axis on `site` to every vector of a row-major block.
    pub fn apply_pauli(&self, site: usize, axis: Axis, x: &[C64], k: usize) -> Vec<C64> {
        let lay = self.layout;
        let nb = lay.n_boson();
        let stride = lay.stride(site);
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        for idx in 0..lay.dim() {
            let d = lay.digit(idx, site);
            let (s, n) = (d / nb, d % nb);
            let (target, phase) = match axis {
                Axis::X => ((1 - s) * nb + n, C64::new(1.0, 0.0)),
                // sigma^y |up> = i |down>, sigma^y |down> = -i |up>
                Axis::Y => ((1 - s) * nb + n, if s == 0 { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) }),
                Axis::Z => (d, if s == 0 { C64::new(1.0, 0.0) } else { C64::new(-1.0, 0.0) }),
            };
            let row = idx + target * stride - d * stride;
            for v in 0..k {
                y[row * k + v] += phase * x[idx * k + v];
            }
        }
        y
    }

    /// Applies the lab-frame quadrature R_site^q at time t. In the rotating
    /// frame this is c R + s J'R with c, s of omega_ref t.
    pub fn apply_quadrature(&self, site: usize, q: Quadrature, t: f64, x: &[C64], k: usize) -> Vec<C64> {
        let local = LocalOps::new(self.layout.n_max);
        let spin_id = DMatrix::<C64>::identity(2, 2);
        let w = self.omega_ref();
        let (s, c) = (w * t).sin_cos();
        // x -> c x + s p, p -> c p - s x
        let op = match q {
            Quadrature::X => &local.x * C64::from(c) + &local.p * C64::from(s),
            Quadrature::P => &local.p * C64::from(c) - &local.x * C64::from(s),
        };
        let full = kron(&spin_id, &op);
        let sum = OperatorSum::from_terms(self.dim(), vec![self.layout.kron_triplets(&[(site, &full)], 1.0)]);
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        sum.matvec_block(sum.term(0), x, &mut y, k);
        y
    }
}

/// Incremental construction of a FockSystem.
pub struct FockBuilder {
    layout: Layout,
    frame: Frame,
    dim_cap: usize,
    local: LocalOps,
    terms: Vec<Vec<(usize, usize, C64)>>,
    coefs: Vec<Coef>,
}

impl FockBuilder {
    pub fn new(n_sites: usize, n_max: usize, frame: Frame) -> Result<Self> {
        Self::with_cap(n_sites, n_max, frame, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(n_sites: usize, n_max: usize, frame: Frame, dim_cap: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidSize("at least one site is required".into()));
        }
        if n_max < 1 {
            return Err(Error::InvalidParameter("boson cutoff n_max must be >= 1".into()));
        }
        let layout = Layout { n_sites, n_max };
        let dim = (2.0 * (n_max as f64 + 1.0)).powi(n_sites as i32);
        if dim > dim_cap as f64 {
            return Err(Error::DimensionCap {
                dim: dim.min(usize::MAX as f64) as usize,
                cap: dim_cap,
            });
        }
        Ok(FockBuilder {
            layout,
            frame,
            dim_cap,
            local: LocalOps::new(n_max),
            terms: Vec::new(),
            coefs: Vec::new(),
        })
    }

    pub fn dim_cap(&self) -> usize {
        self.dim_cap
    }

    fn push(&mut self, triplets: Vec<(usize, usize, C64)>, base: TimeFn, rot: RotFactor) {
        self.terms.push(triplets);
        self.coefs.push(Coef { base, rot });
    }

    /// Triplets of (1/2) sum_ab K_ab R_a R_b, R ordered (x1, p1, x2, p2, ...).
    fn quadratic_triplets(&self, k: &DMatrix<f64>) -> Vec<(usize, usize, C64)> {
        let n = self.layout.n_sites;
        let id = DMatrix::<C64>::identity(2, 2);
        let l = &self.local;
        let mut out = Vec::new();
        for i in 0..n {
            let (xx, pp, xp) = (k[(2 * i, 2 * i)], k[(2 * i + 1, 2 * i + 1)], k[(2 * i, 2 * i + 1)]);
            let local = &l.xx * C64::from(0.5 * xx) + &l.pp * C64::from(0.5 * pp) + &l.xp_sym * C64::from(0.5 * xp);
            if local.iter().any(|z| z.norm() > 0.0) {
                out.extend(self.layout.kron_triplets(&[(i, &kron(&id, &local))], 1.0));
            }
        }
        let quads = [Quadrature::X, Quadrature::P];
        for i in 0..n {
            for j in i + 1..n {
                for (a, qa) in quads.iter().enumerate() {
                    for (b, qb) in quads.iter().enumerate() {
                        let v = k[(2 * i + a, 2 * j + b)];
                        if v != 0.0 {
                            let oi = kron(&id, l.quadrature(*qa));
                            let oj = kron(&id, l.quadrature(*qb));
                            out.extend(self.layout.kron_triplets(&[(i, &oi), (j, &oj)], v));
                        }
                    }
                }
            }
        }
        out
    }

    /// Free bosonic part (1/2) R^T Q R for a constant symmetric 2N x 2N matrix.
    pub fn quadratic(mut self, q: &DMatrix<f64>) -> Result<Self> {
        let n2 = 2 * self.layout.n_sites;
        if q.nrows() != n2 || q.ncols() != n2 {
            return Err(Error::InvalidSize(format!("Q must be {n2} x {n2}")));
        }
        if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::InvalidParameter("Q must be symmetric".into()));
        }
        match self.frame {
            Frame::Lab => {
                let t = self.quadratic_triplets(q);
                self.push(t, TimeFn::constant(1.0), RotFactor::One);
            }
            Frame::Rotating { omega_ref } => {
                let k = q - DMatrix::identity(n2, n2) * omega_ref;
                let mut jp = DMatrix::zeros(n2, n2);
                for i in 0..self.layout.n_sites {
                    jp[(2 * i, 2 * i + 1)] = 1.0;
                    jp[(2 * i + 1, 2 * i)] = -1.0;
                }
                let kcs = jp.transpose() * &k + &k * &jp;
                let kss = jp.transpose() * &k * &jp;
                for (m, rot) in [(k, RotFactor::Cos2), (kcs, RotFactor::CosSin), (kss, RotFactor::Sin2)] {
                    if m.amax() > 0.0 {
                        let t = self.quadratic_triplets(&m);
                        self.push(t, TimeFn::constant(1.0), rot);
                    }
                }
            }
        }
        Ok(self)
    }

    /// Spin-boson coupling F(t) x_site sigma_site^axis (lab-frame x).
    pub fn force(mut self, site: usize, axis: Axis, f: TimeFn) -> Result<Self> {
        self.check_site(site)?;
        let sp = pauli(axis);
        match self.frame {
            Frame::Lab => {
                let t = self.layout.kron_triplets(&[(site, &kron(&sp, &self.local.x))], 1.0);
                self.push(t, f, RotFactor::One);
            }
            Frame::Rotating { .. } => {
                let tx = self.layout.kron_triplets(&[(site, &kron(&sp, &self.local.x))], 1.0);
                let tp = self.layout.kron_triplets(&[(site, &kron(&sp, &self.local.p))], 1.0);
                self.push(tx, f.clone(), RotFactor::Cos);
                self.push(tp, f, RotFactor::Sin);
            }
        }
        Ok(self)
    }

    /// Spin field B(t) sigma_site^axis.
    pub fn spin_field(mut self, site: usize, axis: Axis, b: TimeFn) -> Result<Self> {
        self.check_site(site)?;
        let id = DMatrix::<C64>::identity(self.layout.n_boson(), self.layout.n_boson());
        let t = self.layout.kron_triplets(&[(site, &kron(&pauli(axis), &id))], 1.0);
        self.push(t, b, RotFactor::One);
        Ok(self)
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.layout.n_sites {
            return Err(Error::InvalidParameter(format!("site {site} out of range")));
        }
        Ok(())
    }

    pub fn build(self) -> FockSystem {
        let dim = self.layout.dim();
        FockSystem {
            layout: self.layout,
            frame: self.frame,
            ops: OperatorSum::from_terms(dim, self.terms),
            coefs: self.coefs,
        }
    }
}

/// Trapped-ion system for a crystal of at most three ions: free bosons from Q,
/// sigma^z forces g sin(nu t - phi) on every ion, the transverse field
/// h sigma^x from the drive, and extra constant fields B_i . sigma_i.
pub fn assemble(spec: &CrystalSpec, drive: &DriveSpec, fields: &[[f64; 3]], n_max: usize, frame: Frame) -> Result<FockSystem> {
    let n = spec.n();
    if n > 3 {
        return Err(Error::InvalidSize(format!("exact dynamics supports N <= 3, got {n}")));
    }
    if !fields.is_empty() && fields.len() != n {
        return Err(Error::InvalidSize("one field vector per site".into()));
    }
    let q = build_q(spec)?;
    let mut b = FockBuilder::new(n, n_max, frame)?.quadratic(q.matrix())?;
    for i in 0..n {
        if drive.g != 0.0 {
            b = b.force(i, Axis::Z, TimeFn::sinusoid(drive.g, drive.nu_tilde, drive.phi_tilde))?;
        }
        if drive.h != 0.0 {
            b = b.spin_field(i, Axis::X, TimeFn::constant(drive.h))?;
        }
        if let Some(f) = fields.get(i) {
            for (axis, v) in [Axis::X, Axis::Y, Axis::Z].into_iter().zip(f) {
                if *v != 0.0 {
                    b = b.spin_field(i, axis, TimeFn::constant(*v))?;
                }
            }
        }
    }
    Ok(b.build())
}
