//! Cluster-indicator subproblem: spectral initialization and the generalized
//! power iteration for trace minimization on the Stiefel manifold.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::graphs::Laplacian;

/// `n × h` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub DMatrix<f64>);

impl Embedding {
    pub fn h(&self) -> usize {
        self.0.ncols()
    }

    /// `‖FᵀF − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        let h = self.h();
        (self.0.transpose() * &self.0 - DMatrix::identity(h, h)).norm()
    }
}

/// Flips each column so its first nonzero entry is positive.
fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let scale = col.amax();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-12 * scale) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Eigenvectors of a symmetric matrix for its `h` smallest eigenvalues,
/// ascending, with the sign convention of [`fix_signs`].
pub fn bottom_eigenvectors(a: &DMatrix<f64>, h: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if h == 0 || h > n {
        return Err(Error::InvalidParameter(format!("h must lie in [1, {n}], got {h}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen(format!("no convergence on {n}x{n} matrix (norm {:e})", a.norm())))?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let mut out = DMatrix::from_fn(n, h, |r, c| eig.eigenvectors[(r, idx[c])]);
    fix_signs(&mut out);
    Ok(out)
}

pub fn spectral_init(l: &Laplacian, h: usize) -> Result<Embedding> {
    bottom_eigenvectors(&l.0, h).map(Embedding)
}

/// `Tr(FᵀAF) − 2·Tr(FᵀB)`.
pub fn trace_objective(a: &DMatrix<f64>, b: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    let af = a * f;
    f.dot(&af) - 2.0 * f.dot(b)
}

/// Orthonormal polar factor `UVᵀ` of `m`, the maximizer of `Tr(QᵀM)` over
/// `QᵀQ = I`.
pub fn polar_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("SVD did not converge".into()))?;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    Ok(u * v_t)
}

/// Outcome of [`gpi_solve`].
#[derive(Debug, Clone)]
pub struct GpiResult {
    pub embedding: Embedding,
    pub iterations: usize,
    /// Objective after each iterate, starting with the value at `F0`.
    pub objective_trace: Vec<f64>,
}

/// Minimizes `Tr(FᵀAF − 2FᵀB)` subject to `FᵀF = I` by generalized power
/// iteration on the shifted matrix `cI − A`, where `c` is one more than the
/// largest absolute row sum of `A`.
pub fn gpi_solve(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f0: &Embedding,
    max_iter: usize,
    tol: f64,
) -> Result<GpiResult> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || f0.0.nrows() != n || b.ncols() != f0.h() {
        return Err(Error::InvalidParameter("gpi_solve: incompatible shapes".into()));
    }
    let asym = (a - a.transpose()).amax();
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    let shift = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let mut shifted = -a;
    for i in 0..n {
        shifted[(i, i)] += shift;
    }

    let mut f = f0.0.clone();
    let mut obj = trace_objective(a, b, &f);
    if !obj.is_finite() {
        return Err(Error::NonFinite("GPI objective".into()));
    }
    let mut trace = vec![obj];
    let mut iterations = 0;
    for _ in 0..max_iter {
        let m = &shifted * &f + b;
        let next = polar_factor(&m)?;
        let next_obj = trace_objective(a, b, &next);
        iterations += 1;
        // the ascent is monotone in exact arithmetic; never accept a round-off
        // increase
        if next_obj > obj {
            break;
        }
        let rel = (obj - next_obj).abs() / obj.abs().max(1e-12);
        f = next;
        obj = next_obj;
        trace.push(obj);
        if rel < tol {
            break;
        }
    }
    Ok(GpiResult {
        embedding: Embedding(f),
        iterations,
        objective_trace: trace,
    })
}
