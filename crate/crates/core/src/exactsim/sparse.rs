//! Sums of fixed sparse operators sharing one CSR pattern, so that
//! H(t) = sum_k c_k(t) O_k is rebuilt by a single pass over the values.

use nalgebra::{Complex, DMatrix};

pub type C64 = Complex<f64>;

/// Target value of ||tau H||_1 per Taylor substep.
const TAYLOR_SUBSTEP_NORM: f64 = 2.0;
const TAYLOR_MAX_TERMS: usize = 80;
/// Relative size of the last Taylor term kept.
const TAYLOR_TERM_TOL: f64 = 1e-17;

#[derive(Clone, Debug)]
pub struct OperatorSum {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    /// One value array per term, aligned with the shared pattern.
    values: Vec<Vec<C64>>,
}

impl OperatorSum {
    /// Builds the union pattern of all terms; duplicate entries are summed.
    pub fn from_terms(dim: usize, terms: Vec<Vec<(usize, usize, C64)>>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for term in &terms {
            for &(r, c, _) in term {
                rows[r].push(c);
            }
        }
        let mut indptr = Vec::with_capacity(dim + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            indptr.push(indices.len());
        }
        let values = terms
            .into_iter()
            .map(|term| {
                let mut v = vec![C64::new(0.0, 0.0); indices.len()];
                for (r, c, x) in term {
                    let row = &indices[indptr[r]..indptr[r + 1]];
                    let pos = row.binary_search(&c).expect("entry in union pattern");
                    v[indptr[r] + pos] += x;
                }
                v
            })
            .collect();
        OperatorSum {
            dim,
            indptr,
            indices,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_terms(&self) -> usize {
        self.values.len()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Values of sum_k coeffs[k] O_k on the shared pattern.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.indices.len()];
        for (vals, &c) in self.values.iter().zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(vals) {
                *o += v * c;
            }
        }
        out
    }

    /// Values of a single term.
    pub fn term(&self, k: usize) -> &[C64] {
        &self.values[k]
    }

    /// Induced 1-norm (max column sum); equals the row-sum norm for Hermitian input.
    pub fn one_norm(&self, vals: &[C64]) -> f64 {
        let mut col = vec![0.0; self.dim];
        for r in 0..self.dim {
            for idx in self.indptr[r]..self.indptr[r + 1] {
                col[self.indices[idx]] += vals[idx].norm();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    /// y = A x for a row-major block of `k` vectors (entry (r, v) at r*k + v).
    pub fn matvec_block(&self, vals: &[C64], x: &[C64], y: &mut [C64], k: usize) {
        for r in 0..self.dim {
            let yr = &mut y[r * k..(r + 1) * k];
            yr.iter_mut().for_each(|e| *e = C64::new(0.0, 0.0));
            for idx in self.indptr[r]..self.indptr[r + 1] {
                let a = vals[idx];
                let c = self.indices[idx];
                let xc = &x[c * k..(c + 1) * k];
                for (e, xv) in yr.iter_mut().zip(xc) {
                    *e += a * xv;
                }
            }
        }
    }

    pub fn to_dense(&self, vals: &[C64]) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for idx in self.indptr[r]..self.indptr[r + 1] {
                m[(r, self.indices[idx])] += vals[idx];
            }
        }
        m
    }

    /// x <- exp(-i tau A) x by a truncated Taylor series on substeps with
    /// ||tau A||_1 <= 2, summed until the next term is below machine precision.
    pub fn expmv_block(&self, vals: &[C64], tau: f64, x: &mut [C64], k: usize) {
        if tau == 0.0 || x.is_empty() {
            return;
        }
        let norm = self.one_norm(vals) * tau.abs();
        let substeps = ((norm / TAYLOR_SUBSTEP_NORM).ceil() as usize).max(1);
        let h = tau / substeps as f64;
        let factor = C64::new(0.0, -h);
        let mut term = vec![C64::new(0.0, 0.0); x.len()];
        let mut next = vec![C64::new(0.0, 0.0); x.len()];
        for _ in 0..substeps {
            term.copy_from_slice(x);
            let scale = max_abs(x).max(f64::MIN_POSITIVE);
            let stop = (TAYLOR_TERM_TOL * scale).powi(2);
            for m in 1..=TAYLOR_MAX_TERMS {
                self.matvec_block(vals, &term, &mut next, k);
                let f = factor / m as f64;
                let mut biggest = 0.0_f64;
                for ((t, n), xi) in term.iter_mut().zip(&next).zip(x.iter_mut()) {
                    *t = n * f;
                    *xi += *t;
                    biggest = biggest.max(t.norm_sqr());
                }
                if biggest <= stop {
                    break;
                }
            }
        }
    }
}

pub fn max_abs(x: &[C64]) -> f64 {
    x.iter().fold(0.0, |a, v| a.max(v.norm()))
}
