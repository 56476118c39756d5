//! Stiefel-manifold helpers for weights with orthonormal columns (`WᵀW = I`).

use nalgebra::DMatrix;

/// Q factor of the thin QR decomposition with the signs fixed so that `R` has a
/// non-negative diagonal, which makes the factor unique.
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = a.shape();
    assert!(p <= n, "orthonormalize: {n}x{p} has more columns than rows");
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// Projection of a Euclidean gradient onto the tangent space at `w`:
/// `G − W·sym(WᵀG)`.
pub fn project_tangent(w: &DMatrix<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
    let wtg = w.transpose() * grad;
    let sym = (&wtg + wtg.transpose()) * 0.5;
    grad - w * sym
}

/// QR retraction of `w − step·ξ`.
pub fn retract(w: &DMatrix<f64>, tangent: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
    orthonormalize(&(w - tangent * step))
}

/// `‖WᵀW − I‖_F`.
pub fn drift(w: &DMatrix<f64>) -> f64 {
    let p = w.ncols();
    (w.transpose() * w - DMatrix::identity(p, p)).norm()
}
