//! Ordinary least squares via the normal equations.

use nalgebra::{DMatrix, DVector};

/// Solves `min ||[X 1] beta - y||^2` and returns `beta` with the intercept
/// in the last slot. Well-conditioned systems go through Cholesky; singular
/// ones fall back to a minimum-norm SVD solution, and as a last resort a
/// tiny ridge (1e-10) is added to the normal matrix.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, OlsError> {
    let n = rows.len();
    if n == 0 || n != y.len() {
        return Err(OlsError::ShapeMismatch { rows: n, targets: y.len() });
    }
    let d = rows[0].len() + 1; // + intercept

    // Accumulate X'X and X'y directly; avoids materializing the n x d design.
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    let mut xi = vec![0.0; d];
    for (row, &target) in rows.iter().zip(y) {
        if row.len() != d - 1 {
            return Err(OlsError::ShapeMismatch { rows: row.len(), targets: d - 1 });
        }
        xi[..d - 1].copy_from_slice(row);
        xi[d - 1] = 1.0;
        for i in 0..d {
            xty[i] += xi[i] * target;
            for j in i..d {
                xtx[(i, j)] += xi[i] * xi[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            xtx[(i, j)] = xtx[(j, i)];
        }
    }

    solve_normal_equations(xtx, xty)
}

pub(crate) fn solve_normal_equations(
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
) -> Result<Vec<f64>, OlsError> {
    let d = xty.len();
    if let Some(chol) = xtx.clone().cholesky() {
        let beta = chol.solve(&xty);
        if beta.iter().all(|v| v.is_finite()) {
            return Ok(beta.iter().copied().collect());
        }
    }
    // Minimum-norm solution of the singular system.
    let svd = xtx.clone().svd(true, true);
    if let Ok(pinv) = svd.pseudo_inverse(1e-12) {
        let beta = &pinv * &xty;
        if beta.iter().all(|v| v.is_finite()) {
            return Ok(beta.iter().copied().collect());
        }
    }
    // Ridge fallback.
    let mut ridged = xtx;
    for i in 0..d {
        ridged[(i, i)] += 1e-10;
    }
    match ridged.cholesky() {
        Some(chol) => {
            let beta = chol.solve(&xty);
            if beta.iter().all(|v| v.is_finite()) {
                Ok(beta.iter().copied().collect())
            } else {
                Err(OlsError::SingularDesign)
            }
        }
        None => Err(OlsError::SingularDesign),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OlsError {
    #[error("design matrix is singular beyond the ridge fallback")]
    SingularDesign,
    #[error("design shape mismatch ({rows} vs {targets})")]
    ShapeMismatch { rows: usize, targets: usize },
}
