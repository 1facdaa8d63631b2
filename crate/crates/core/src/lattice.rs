//! Lattice geometries, decay envelopes and the geometric convolution factor a0.
//!
//! Distances live on the idealised Bravais lattice with unit minimal spacing,
//! never on the physical (inhomogeneous) crystal.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Triangular,
    Explicit,
}

impl LatticeKind {
    /// Spatial dimension of the underlying Bravais lattice.
    pub fn dimension(self) -> Option<u32> {
        match self {
            LatticeKind::Chain => Some(1),
            LatticeKind::Triangular => Some(2),
            LatticeKind::Explicit => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatticeGeometry {
    kind: LatticeKind,
    positions: Vec<[f64; 2]>,
    distance: DMatrix<f64>,
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl LatticeGeometry {
    fn from_positions(kind: LatticeKind, positions: Vec<[f64; 2]>) -> Self {
        let n = positions.len();
        let distance = DMatrix::from_fn(n, n, |i, j| euclid(positions[i], positions[j]));
        LatticeGeometry {
            kind,
            positions,
            distance,
        }
    }

    /// Arbitrary point set, rescaled so the minimal pairwise distance is 1.
    pub fn explicit(positions: Vec<[f64; 2]>) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(Error::InvalidSize(format!("explicit geometry needs >= 2 sites, got {n}")));
        }
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let d = euclid(positions[i], positions[j]);
                if d == 0.0 {
                    return Err(Error::SingularCoupling(i, j));
                }
                dmin = dmin.min(d);
            }
        }
        let scaled = positions.iter().map(|p| [p[0] / dmin, p[1] / dmin]).collect();
        Ok(Self::from_positions(LatticeKind::Explicit, scaled))
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn distance(&self) -> &DMatrix<f64> {
        &self.distance
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.distance[(i, j)]
    }

    /// Index of the site closest to the centroid (lowest index on ties).
    pub fn central_site(&self) -> usize {
        let n = self.n() as f64;
        let cx = self.positions.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = self.positions.iter().map(|p| p[1]).sum::<f64>() / n;
        let mut best = 0;
        let mut best_r = f64::INFINITY;
        for (i, p) in self.positions.iter().enumerate() {
            let r = euclid(*p, [cx, cy]);
            if r < best_r - 1e-9 {
                best = i;
                best_r = r;
            }
        }
        best
    }

    /// Keeps the `n` sites nearest to the central site, ties broken by index.
    /// Surviving sites keep their relative order.
    pub fn truncate_radial(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n() {
            return Err(Error::InvalidSize(format!(
                "cannot truncate {} sites to {n}",
                self.n()
            )));
        }
        let c = self.central_site();
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (self.d(c, a), self.d(c, b));
            if (ra - rb).abs() < 1e-9 {
                a.cmp(&b)
            } else {
                ra.partial_cmp(&rb).unwrap()
            }
        });
        let mut keep: Vec<usize> = order[..n].to_vec();
        keep.sort_unstable();
        let positions = keep.iter().map(|&i| self.positions[i]).collect();
        let distance = DMatrix::from_fn(n, n, |a, b| self.distance[(keep[a], keep[b])]);
        Ok(LatticeGeometry {
            kind: self.kind,
            positions,
            distance,
        })
    }

    /// Applies a permutation: new site `k` is old site `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let positions = perm.iter().map(|&i| self.positions[i]).collect();
        Self::from_positions(self.kind, positions)
    }
}

/// Linear chain with unit spacing, positions (i, 0).
pub fn build_chain(n: usize) -> Result<LatticeGeometry> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("chain needs N >= 2, got {n}")));
    }
    let positions = (0..n).map(|i| [i as f64, 0.0]).collect();
    Ok(LatticeGeometry::from_positions(LatticeKind::Chain, positions))
}

/// Hexagonal patch of the unit triangular lattice centred on a vertex.
/// Sites are ordered shell by shell, counter-clockwise from the +x axis.
pub fn build_triangular(shells: usize) -> LatticeGeometry {
    let s = shells as i64;
    let mut sites: Vec<(i64, f64, [f64; 2])> = Vec::new();
    for a in -s..=s {
        for b in -s..=s {
            let shell = a.abs().max(b.abs()).max((a + b).abs());
            if shell > s {
                continue;
            }
            let x = a as f64 + 0.5 * b as f64;
            let y = 0.5 * 3f64.sqrt() * b as f64;
            let mut ang = y.atan2(x);
            if ang < -1e-12 {
                ang += 2.0 * std::f64::consts::PI;
            }
            sites.push((shell, ang.max(0.0), [x, y]));
        }
    }
    sites.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.partial_cmp(&q.1).unwrap()));
    let positions = sites.into_iter().map(|s| s.2).collect();
    LatticeGeometry::from_positions(LatticeKind::Triangular, positions)
}

/// f(d) = e^{-mu d} (1 + d)^{-eta}, with a bosonic normalisation prefactor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub mu: f64,
    pub eta: f64,
    pub alpha: f64,
}

impl DecayEnvelope {
    pub fn new(mu: f64, eta: f64, alpha: f64) -> Result<Self> {
        if !(mu >= 0.0) || !(eta > 0.0) || !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "envelope needs mu >= 0, eta > 0, alpha > 0 (got {mu}, {eta}, {alpha})"
            )));
        }
        Ok(DecayEnvelope { mu, eta, alpha })
    }

    /// Pure power law (1 + d)^{-eta}.
    pub fn power_law(eta: f64) -> Self {
        DecayEnvelope {
            mu: 0.0,
            eta,
            alpha: 1.0,
        }
    }

    pub fn f(&self, d: f64) -> f64 {
        (-self.mu * d - self.eta * d.ln_1p()).exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct A0 {
    pub a0: f64,
    /// Maximising pair (i < k).
    pub argmax: (usize, usize),
}

fn convolution(geom: &LatticeGeometry, env: &DecayEnvelope) -> (DMatrix<f64>, DMatrix<f64>) {
    let f = geom.distance.map(|d| env.f(d));
    let s = &f * &f;
    (f, s)
}

/// a0 = max over pairs i != k of f(d_ik)^{-1} sum_j f(d_ij) f(d_jk), the sum
/// running over every site including i and k.
pub fn compute_a0(geom: &LatticeGeometry, env: &DecayEnvelope) -> Result<A0> {
    let n = geom.n();
    if n < 2 {
        return Err(Error::InvalidSize(format!("a0 needs N >= 2, got {n}")));
    }
    let (f, s) = convolution(geom, env);
    // Row-wise maxima reduced in a fixed order, so the result does not depend
    // on how rayon schedules the rows.
    let rows: Vec<(f64, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, i, i);
            for k in i + 1..n {
                let r = s[(i, k)] / f[(i, k)];
                if r > best.0 {
                    best = (r, i, k);
                }
            }
            best
        })
        .collect();
    let best = rows
        .into_iter()
        .fold((f64::NEG_INFINITY, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(A0 {
        a0: best.0,
        argmax: (best.1, best.2),
    })
}

/// Exhaustive re-check of sum_j f_ij f_jk <= a0 f_ik for every pair i != k.
/// Returns the worst pair if the inequality fails beyond rounding.
pub fn verify_a0(geom: &LatticeGeometry, env: &DecayEnvelope, a0: f64) -> std::result::Result<(), (usize, usize, f64)> {
    let (f, s) = convolution(geom, env);
    let n = geom.n();
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let excess = s[(i, k)] - a0 * f[(i, k)];
            if excess > 1e-12 * a0 * f[(i, k)] && worst.is_none_or(|w| excess > w.2) {
                worst = Some((i, k, excess));
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

#[derive(Clone, Debug, Serialize)]
pub struct A0Convergence {
    pub a0: f64,
    pub argmax: (usize, usize),
    pub patch_size: usize,
    pub converged: bool,
    /// (patch size, a0) for every patch evaluated.
    pub history: Vec<(usize, f64)>,
}

/// Evaluates a0 on growing patches (doubling the linear size) until two
/// successive values differ by less than `tol` or the next patch would exceed
/// `max_sites`.
pub fn converge_a0(kind: LatticeKind, env: &DecayEnvelope, tol: f64, max_sites: usize) -> Result<A0Convergence> {
    let patch = |size: usize| -> Result<LatticeGeometry> {
        match kind {
            LatticeKind::Chain => build_chain(size),
            LatticeKind::Triangular => Ok(build_triangular(size)),
            LatticeKind::Explicit => Err(Error::Unsupported("patch growth needs a Bravais lattice".into())),
        }
    };
    let sites = |size: usize| match kind {
        LatticeKind::Triangular => 1 + 3 * size * (size + 1),
        _ => size,
    };
    let mut size = if kind == LatticeKind::Chain { 8 } else { 1 };
    let mut history = Vec::new();
    let mut last: Option<A0> = None;
    loop {
        let geom = patch(size)?;
        let cur = compute_a0(&geom, env)?;
        history.push((geom.n(), cur.a0));
        if let Some(prev) = last {
            if (cur.a0 - prev.a0).abs() < tol {
                return Ok(A0Convergence {
                    a0: cur.a0,
                    argmax: cur.argmax,
                    patch_size: geom.n(),
                    converged: true,
                    history,
                });
            }
        }
        last = Some(cur);
        size *= 2;
        if sites(size) > max_sites {
            let cur = last.unwrap();
            let patch_size = history.last().unwrap().0;
            return Ok(A0Convergence {
                a0: cur.a0,
                argmax: cur.argmax,
                patch_size,
                converged: false,
                history,
            });
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct A0Limit {
    pub a0: f64,
    /// Separation vector of the maximising pair, or `None` when the supremum
    /// is the far-separation limit 2 * sum_j f(|j|).
    pub attained_at: Option<[f64; 2]>,
    /// The far-separation limit 2 * sum_j f(|j|).
    pub far_field: f64,
}

/// a0 on the infinite Bravais lattice for a pure power law (mu = 0).
///
/// By translation invariance a0 = sup over lattice vectors r != 0 of
/// g(r) = sum_j f(|j|) f(|r - j|) / f(|r|). Separations up to `r_max` are
/// scanned explicitly; as |r| grows g(r) tends to 2 sum_j f(|j|), which is
/// included as a candidate. Lattice sums are cut at radius `r_sum` with a
/// continuum tail.
pub fn lattice_a0_limit(kind: LatticeKind, env: &DecayEnvelope, r_max: f64, r_sum: f64) -> Result<A0Limit> {
    if env.mu != 0.0 {
        return Err(Error::Unsupported("infinite-lattice a0 is implemented for mu = 0".into()));
    }
    let dim = kind
        .dimension()
        .ok_or_else(|| Error::Unsupported("infinite-lattice a0 needs a Bravais lattice".into()))?;
    let eta = env.eta;
    if eta <= dim as f64 {
        return Err(Error::InvalidParameter(format!("lattice sum diverges for eta = {eta} in D = {dim}")));
    }
    let vectors = |radius: f64| -> Vec<[f64; 2]> {
        let m = radius.ceil() as i64 + 1;
        let mut v = Vec::new();
        match kind {
            LatticeKind::Chain => {
                for a in -m..=m {
                    if (a as f64).abs() <= radius {
                        v.push([a as f64, 0.0]);
                    }
                }
            }
            _ => {
                let mb = (2.0 * radius / 3f64.sqrt()).ceil() as i64 + 1;
                for b in -mb..=mb {
                    for a in -(m + mb)..=(m + mb) {
                        let p = [a as f64 + 0.5 * b as f64, 0.5 * 3f64.sqrt() * b as f64];
                        if p[0].hypot(p[1]) <= radius {
                            v.push(p);
                        }
                    }
                }
            }
        }
        v
    };
    // Continuum tail of sum_{|j| > R} (1 + |j|)^{-p}.
    let tail = |p: f64| -> f64 {
        let r = r_sum;
        match dim {
            1 => 2.0 * (1.0 + r).powf(1.0 - p) / (p - 1.0),
            _ => {
                let density = 2.0 / 3f64.sqrt();
                let u = 1.0 + r;
                density * 2.0 * std::f64::consts::PI * (u.powf(2.0 - p) / (p - 2.0) - u.powf(1.0 - p) / (p - 1.0))
            }
        }
    };
    let js = vectors(r_sum);
    let fj: Vec<f64> = js.iter().map(|j| env.f(j[0].hypot(j[1]))).collect();
    let far_field = 2.0 * (fj.iter().sum::<f64>() + tail(eta));
    // Scan one symmetry wedge of separations: r > 0 on the chain, polar angle
    // in [0, pi/6] on the triangular lattice.
    let rs: Vec<[f64; 2]> = vectors(r_max)
        .into_iter()
        .filter(|r| {
            let len = r[0].hypot(r[1]);
            if len == 0.0 {
                return false;
            }
            match dim {
                1 => r[0] > 0.0,
                _ => r[1] >= -1e-12 && r[1] <= r[0] * (std::f64::consts::PI / 6.0).tan() + 1e-12,
            }
        })
        .collect();
    let values: Vec<f64> = rs
        .par_iter()
        .map(|r| {
            let fr = env.f(r[0].hypot(r[1]));
            let mut acc = 0.0;
            for (j, f1) in js.iter().zip(&fj) {
                acc += f1 * env.f((r[0] - j[0]).hypot(r[1] - j[1]));
            }
            // Far from both ends |r - j| ~ |j|, so the tail is ~ sum f(|j|)^2.
            (acc + tail(2.0 * eta)) / fr
        })
        .collect();
    let mut best = (far_field, None);
    for (r, v) in rs.iter().zip(values) {
        if v > best.0 {
            best = (v, Some(*r));
        }
    }
    Ok(A0Limit {
        a0: best.0,
        attained_at: best.1,
        far_field,
    })
}

/// Riemann zeta function for real s > 1 (Euler-Maclaurin summation).
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta needs s > 1");
    const N: usize = 12;
    // B_{2k} / (2k)!
    const B: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
        -691.0 / 1307674368000.0,
        1.0 / 74724249600.0,
    ];
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // Rising factorial s (s+1) ... (s+2k-2) times N^{-s-2k+1}.
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (k, b) in B.iter().enumerate() {
        sum += b * rising * power;
        let m = 2.0 * k as f64;
        rising *= (s + m + 1.0) * (s + m + 2.0);
        power /= n * n;
    }
    sum
}

/// Which zeta argument the graph-distance estimate uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZetaConvention {
    /// zeta(eta + D - 1): reproduces the printed 38.5 (D = 1) and 103.9 (D = 2).
    #[default]
    Printed,
    /// zeta(1 - D + eta) exactly as the general formula is written.
    AsWritten,
}

/// Graph-distance estimate a0~ = c_D 2^{eta+1} zeta(.), with c_1 = 2, c_2 = 6.
pub fn zeta_estimate_a0(dimension: u32, eta: f64, convention: ZetaConvention) -> Result<f64> {
    let c = match dimension {
        1 => 2.0,
        2 => 6.0,
        d => return Err(Error::InvalidParameter(format!("dimension must be 1 or 2, got {d}"))),
    };
    let d = dimension as f64;
    let arg = match convention {
        ZetaConvention::Printed => eta + d - 1.0,
        ZetaConvention::AsWritten => 1.0 - d + eta,
    };
    if !(arg > 1.0) {
        return Err(Error::DivergentEstimate(arg));
    }
    Ok(c * 2f64.powf(eta + 1.0) * zeta(arg))
}
