//! Small dense complex linear-algebra helpers shared across modules.

use nalgebra::SymmetricEigen;

use crate::{CMat, CVec, C64};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order; eigenvector columns follow the same order.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let h = hermitize(m);
    let eig = SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// (M + Mᴴ)/2
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Orthonormal basis (as columns) of the span of `vectors`, built by modified
/// Gram-Schmidt with one re-orthogonalisation pass. Directions whose residual
/// norm falls below `rel_tol` times the input norm are treated as dependent.
pub fn orthonormal_basis(vectors: &[CVec], rel_tol: f64) -> CMat {
    let dim = vectors.first().map_or(0, |v| v.len());
    let mut basis: Vec<CVec> = Vec::new();
    for v in vectors {
        let scale = v.norm();
        if scale == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&r);
                r -= b * c;
            }
        }
        let nr = r.norm();
        if nr > rel_tol * scale {
            basis.push(r / C64::new(nr, 0.0));
        }
    }
    let mut out = CMat::zeros(dim, basis.len());
    for (k, b) in basis.iter().enumerate() {
        out.set_column(k, b);
    }
    out
}

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// e^{jθ}
pub fn cis(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// Real part of tr(A B) without forming the product.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}
