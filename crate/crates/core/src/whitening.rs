//! Conversion of a colored-noise likelihood `N(y; A x, Γ)` into an equivalent
//! white one `N(y₂; A₂ x, γ⁻¹ I)` with `‖A₂‖²_F = N`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{check_len, Error, Result};
use crate::linalg::{frobenius_sq, sym_eigen, symmetrize};

#[derive(Debug, Clone)]
pub struct WhitenedModel {
    pub y2k: Array1<f64>,
    pub a2k: Array2<f64>,
    /// Precision of the equivalent white noise.
    pub gamma_w2k: f64,
}

/// Symmetric inverse square root `S^(-1/2)` of a symmetric positive definite matrix.
pub fn inv_sqrt(s: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    inv_sqrt_floored(s, 0.0)
}

/// As [`inv_sqrt`], for a matrix known to satisfy `S ⪰ floor·I`: eigenvalues
/// that rounding pushed below `floor` are raised back to it.
pub fn inv_sqrt_floored(s: ArrayView2<'_, f64>, floor: f64) -> Result<Array2<f64>> {
    let (mut values, vectors) = sym_eigen(s)?;
    let n = values.len();
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    let norm = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    values.mapv_inplace(|v| v.max(floor));
    let min_eig = values[0];
    if !(min_eig > 0.0 && (floor > 0.0 || min_eig > f64::EPSILON * norm)) {
        return Err(Error::SingularCovariance { min_eig, norm });
    }
    let mut scaled = vectors.clone();
    for (mut col, &lambda) in scaled.columns_mut().into_iter().zip(values.iter()) {
        col.mapv_inplace(|v| v / lambda.sqrt());
    }
    let mut root = scaled.dot(&vectors.t());
    symmetrize(&mut root);
    Ok(root)
}

/// Whitens `(y, A)` against the noise covariance `gamma2k` and renormalizes
/// so that the whitened matrix has `‖A₂‖²_F = N`.
pub fn whiten(y: ArrayView1<'_, f64>, a: ArrayView2<'_, f64>, gamma2k: ArrayView2<'_, f64>) -> Result<WhitenedModel> {
    whiten_floored(y, a, gamma2k, 0.0)
}

/// As [`whiten`] for a covariance bounded below by `floor·I`, such as one
/// that includes white noise of variance `floor`.
pub fn whiten_floored(
    y: ArrayView1<'_, f64>,
    a: ArrayView2<'_, f64>,
    gamma2k: ArrayView2<'_, f64>,
    floor: f64,
) -> Result<WhitenedModel> {
    let (m, n) = a.dim();
    check_len("measurement vector", m, y.len())?;
    check_len("covariance rows", m, gamma2k.nrows())?;
    check_len("covariance columns", m, gamma2k.ncols())?;
    let root = inv_sqrt_floored(gamma2k, floor)?;
    let mut a2k = root.dot(&a);
    let gamma_w2k = frobenius_sq(a2k.view()) / n as f64;
    if !(gamma_w2k > 0.0 && gamma_w2k.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "whitened sensing matrix has degenerate energy {gamma_w2k}"
        )));
    }
    let scale = 1.0 / gamma_w2k.sqrt();
    a2k.mapv_inplace(|v| v * scale);
    let y2k = root.dot(&y) * scale;
    Ok(WhitenedModel { y2k, a2k, gamma_w2k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_diagonal() {
        let r = inv_sqrt(Array2::<f64>::eye(3).view()).unwrap();
        for (a, b) in r.iter().zip(Array2::<f64>::eye(3).iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let r = inv_sqrt(array![[4.0, 0.0], [0.0, 9.0]].view()).unwrap();
        assert!((r[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((r[[1, 1]] - 1.0 / 3.0).abs() < 1e-15);
        assert!(r[[0, 1]].abs() < 1e-15);
    }

    #[test]
    fn singular_is_rejected() {
        let s = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(inv_sqrt(s.view()), Err(Error::SingularCovariance { .. })));
        let s = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(inv_sqrt(s.view()).is_err());
    }

    #[test]
    fn floor_rescues_huge_low_rank_covariances() {
        // 1e-3 I plus a rank-one term of size 1e17: rounding swamps the floor.
        let u = array![0.6, 0.8, 0.0];
        let mut s = Array2::<f64>::eye(3) * 1e-3;
        for i in 0..3 {
            for j in 0..3 {
                s[[i, j]] += 1e17 * u[i] * u[j];
            }
        }
        assert!(inv_sqrt(s.view()).is_err());
        let r = inv_sqrt_floored(s.view(), 1e-3).unwrap();
        // The complement of u keeps its exact scale 1e-3.
        let v = array![0.8, -0.6, 0.0];
        let rv = r.dot(&v);
        for (p, q) in rv.iter().zip(v.iter()) {
            assert!((p - q / 1e-3f64.sqrt()).abs() < 1e-6 * 1e-3f64.sqrt().recip());
        }
        let well = array![[2.0, 0.5], [0.5, 1.0]];
        let (a, b) = (inv_sqrt(well.view()).unwrap(), inv_sqrt_floored(well.view(), 0.1).unwrap());
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() < 1e-15));
    }

    #[test]
    fn white_noise_is_left_alone() {
        let a = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let y = array![0.3, -0.7];
        let w = whiten(y.view(), a.view(), (Array2::eye(2) * 0.01).view()).unwrap();
        assert!((w.gamma_w2k - 100.0).abs() < 1e-10);
        for (p, q) in w.a2k.iter().zip(a.iter()) {
            assert!((p - q).abs() < 1e-14);
        }
        for (p, q) in w.y2k.iter().zip(y.iter()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let a = Array2::<f64>::eye(2);
        assert!(whiten(array![1.0].view(), a.view(), Array2::<f64>::eye(2).view()).is_err());
        assert!(whiten(array![1.0, 2.0].view(), a.view(), Array2::<f64>::eye(3).view()).is_err());
    }
}
