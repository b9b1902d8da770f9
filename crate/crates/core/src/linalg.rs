//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Normal equations whose equilibrated condition number exceeds this are
/// treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Condition number of `a` after symmetric diagonal scaling to unit diagonal.
///
/// The scaling removes the effect of mixing metres, metres per second and
/// radians in one system, so the estimate reflects genuine rank loss.
pub fn equilibrated_condition(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return f64::INFINITY;
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if !(min > 0.0) {
        return f64::INFINITY;
    }
    max / min
}

/// Solve the symmetric positive-definite system `a x = b`, refusing
/// ill-conditioned matrices.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let condition = equilibrated_condition(a);
    if condition > MAX_CONDITION {
        return Err(Error::RankDeficient { condition });
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { condition })?;
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::NonFinite("linear solve"))
    }
}

/// Inverse of a symmetric positive-definite matrix, refusing ill-conditioned input.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = equilibrated_condition(a);
    if condition > MAX_CONDITION {
        return Err(Error::RankDeficient { condition });
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { condition })?;
    Ok(symmetrize(chol.inverse()))
}

pub fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

/// How residuals are weighted in a least-squares solve.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Ordinary least squares.
    Identity,
    /// `W = M^-1` for a symmetric positive-definite `M` (a residual covariance).
    InverseOf(&'a DMatrix<f64>),
    /// An explicit weighting matrix.
    Matrix(&'a DMatrix<f64>),
    /// `W = (e e^T + eps I)^-1`, applied in closed form via Sherman-Morrison.
    RankOneRidge { e: &'a DVector<f64>, eps: f64 },
}

/// Form `(G^T W G, G^T W h)`.
pub fn weighted_normal_equations(
    h: &DVector<f64>,
    g: &DMatrix<f64>,
    weighting: Weighting<'_>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if g.nrows() != h.len() {
        return Err(Error::dim("weighted least squares", g.nrows(), h.len()));
    }
    let k = h.len();
    match weighting {
        Weighting::Identity => Ok((g.tr_mul(g), g.tr_mul(h))),
        Weighting::Matrix(w) => {
            if w.nrows() != k || w.ncols() != k {
                return Err(Error::dim("weighting matrix", k, w.nrows()));
            }
            let wg = w * g;
            Ok((g.tr_mul(&wg), wg.tr_mul(h)))
        }
        Weighting::InverseOf(m) => {
            if m.nrows() != k || m.ncols() != k {
                return Err(Error::dim("residual covariance", k, m.nrows()));
            }
            let chol = m
                .clone()
                .cholesky()
                .ok_or(Error::NotPositiveDefinite("residual covariance"))?;
            let l = chol.l();
            let gw = l
                .solve_lower_triangular(g)
                .ok_or(Error::NotPositiveDefinite("residual covariance"))?;
            let hw = l
                .solve_lower_triangular(h)
                .ok_or(Error::NotPositiveDefinite("residual covariance"))?;
            Ok((gw.tr_mul(&gw), gw.tr_mul(&hw)))
        }
        Weighting::RankOneRidge { e, eps } => {
            if e.len() != k {
                return Err(Error::dim("learned residual", k, e.len()));
            }
            if !(eps > 0.0) {
                return Err(Error::InvalidConfig(format!("ridge eps must be > 0, got {eps}")));
            }
            // (e e^T + eps I)^-1 = (I - e e^T / (eps + e^T e)) / eps
            let denom = eps + e.dot(e);
            let gte = g.tr_mul(e);
            let hte = h.dot(e);
            let normal = (g.tr_mul(g) - &gte * gte.transpose() / denom) / eps;
            let rhs = (g.tr_mul(h) - &gte * (hte / denom)) / eps;
            Ok((normal, rhs))
        }
    }
}

/// Weighted least-squares estimate `x = (G^T W G)^-1 G^T W h`.
pub fn weighted_least_squares(
    h: &DVector<f64>,
    g: &DMatrix<f64>,
    weighting: Weighting<'_>,
) -> Result<DVector<f64>> {
    let (normal, rhs) = weighted_normal_equations(h, g, weighting)?;
    solve_spd(&normal, &rhs)
}
