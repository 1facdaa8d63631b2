//! Small dense linear-algebra helpers shared by the physics modules.

use nalgebra::{Complex, DMatrix, DVector, Matrix2};

/// Largest singular value of a real 2x2 matrix, in closed form.
pub fn spectral_norm2(m: &Matrix2<f64>) -> f64 {
    let s = m.iter().map(|v| v * v).sum::<f64>();
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (s * s - 4.0 * det * det).max(0.0).sqrt();
    (0.5 * (s + disc)).max(0.0).sqrt()
}

/// Symmetric eigendecomposition with eigenvalues in ascending order and a
/// deterministic sign per eigenvector (largest-magnitude component positive,
/// first index wins on ties).
pub fn sym_eigen_sorted(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for r in 0..n {
            if col[r].abs() > col[pivot].abs() + 1e-12 {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(c, &(col * sign));
    }
    (values, vectors)
}

/// Spectral norm of a real symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Spectral norm of a real matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    spectral_norm_sym(&gram).sqrt()
}

/// Spectral norm of a complex matrix, via the Gram matrix of its columns.
/// Cheap when the matrix is tall and thin.
pub fn complex_spectral_norm(m: &DMatrix<Complex<f64>>) -> f64 {
    let gram = m.adjoint() * m;
    let vals = gram.symmetric_eigenvalues();
    vals.iter().fold(0.0_f64, |a, v| a.max(*v)).max(0.0).sqrt()
}

/// Block-diagonal symplectic form with N copies of J = [[0, -1], [1, 0]],
/// acting on the ordering (x1, p1, x2, p2, ...).
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(2 * i, 2 * i + 1)] = -1.0;
        j[(2 * i + 1, 2 * i)] = 1.0;
    }
    j
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
