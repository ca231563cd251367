//! Perturbed linear observation model `y = (A + Σ e_i E_i) x + w`.

mod circulant;
mod perturbation;

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};

pub use circulant::make_circulant;
pub use perturbation::{CirculantPerturbation, GenericBasis, MatrixRestricted, PerturbationModel};
pub(crate) use perturbation::variance_from_precision;

use crate::error::{check_len, Error, Result};
use crate::linalg::frobenius_sq;

/// Relative tolerance on `‖A‖²_F = N`.
pub const FROBENIUS_TOLERANCE: f64 = 1e-6;

/// Measurements, nominal sensing matrix, and the statistics of the noise
/// and of the perturbation coefficients.
#[derive(Debug, Clone)]
pub struct Problem {
    y: Array1<f64>,
    a: Array2<f64>,
    gamma_w: f64,
    gamma_e: f64,
    perturbation: Arc<PerturbationModel>,
}

impl Problem {
    /// Validates shapes, precisions and the `‖A‖²_F = N` normalization.
    ///
    /// `gamma_e = f64::INFINITY` means the perturbation has zero variance.
    pub fn new(
        y: Array1<f64>,
        a: Array2<f64>,
        gamma_w: f64,
        gamma_e: f64,
        perturbation: Arc<PerturbationModel>,
    ) -> Result<Self> {
        let n = a.ncols();
        let fro = frobenius_sq(a.view());
        if (fro - n as f64).abs() > FROBENIUS_TOLERANCE * n as f64 {
            return Err(Error::InvalidParameter(format!(
                "sensing matrix must satisfy ‖A‖²_F = N = {n}, found {fro}"
            )));
        }
        Self::build(y, a, gamma_w, gamma_e, perturbation)
    }

    /// A problem whose matrix is exact (no perturbation), without the
    /// Frobenius normalization check. Used for oracle runs on the realized
    /// matrix `A + Σ e_i E_i`.
    pub fn exact(y: Array1<f64>, a: Array2<f64>, gamma_w: f64) -> Result<Self> {
        let (m, n) = a.dim();
        Self::build(y, a, gamma_w, f64::INFINITY, Arc::new(PerturbationModel::none(m, n)))
    }

    fn build(
        y: Array1<f64>,
        a: Array2<f64>,
        gamma_w: f64,
        gamma_e: f64,
        perturbation: Arc<PerturbationModel>,
    ) -> Result<Self> {
        let (m, n) = a.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter("sensing matrix must be non-empty".into()));
        }
        check_len("measurement vector", m, y.len())?;
        check_len("perturbation rows", m, perturbation.rows())?;
        check_len("perturbation columns", n, perturbation.cols())?;
        if !(gamma_w > 0.0 && gamma_w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_w must be positive and finite, got {gamma_w}"
            )));
        }
        if !(gamma_e > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma_e must be positive, got {gamma_e}")));
        }
        Ok(Self {
            y,
            a,
            gamma_w,
            gamma_e,
            perturbation,
        })
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn gamma_w(&self) -> f64 {
        self.gamma_w
    }

    pub fn gamma_e(&self) -> f64 {
        self.gamma_e
    }

    pub fn perturbation(&self) -> &PerturbationModel {
        &self.perturbation
    }

    pub fn perturbation_handle(&self) -> Arc<PerturbationModel> {
        Arc::clone(&self.perturbation)
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// True when the perturbation contributes nothing to the noise covariance.
    pub fn perturbation_disabled(&self) -> bool {
        self.gamma_e.is_infinite() || self.perturbation.count() == 0
    }

    /// The oracle view of this problem: same measurements, sensing matrix
    /// `A + Σ e_i E_i`, perturbation removed.
    pub fn realized(&self, e: ArrayView1<'_, f64>) -> Result<Problem> {
        let mut a = self.perturbation.matrix(e)?;
        a += &self.a;
        Problem::exact(self.y.clone(), a, self.gamma_w)
    }
}

/// Rescales `a` in place so that `‖a‖²_F` equals its column count.
pub fn normalize_frobenius(a: &mut Array2<f64>) {
    let fro = frobenius_sq(a.view());
    if fro > 0.0 {
        let scale = (a.ncols() as f64 / fro).sqrt();
        a.mapv_inplace(|v| v * scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_unnormalized_matrix() {
        let a = array![[1.0, 0.0], [0.0, 2.0]];
        let p = Arc::new(PerturbationModel::Iid { rows: 2, cols: 2 });
        assert!(Problem::new(array![0.0, 0.0], a, 1.0, 1.0, p).is_err());
    }

    #[test]
    fn rejects_bad_shapes_and_precisions() {
        let a = Array2::eye(2);
        let p = Arc::new(PerturbationModel::Iid { rows: 2, cols: 2 });
        assert!(Problem::new(array![0.0], a.clone(), 1.0, 1.0, p.clone()).is_err());
        assert!(Problem::new(array![0.0, 0.0], a.clone(), 0.0, 1.0, p.clone()).is_err());
        assert!(Problem::new(array![0.0, 0.0], a.clone(), 1.0, -1.0, p.clone()).is_err());
        assert!(Problem::new(array![0.0, 0.0], a, 1.0, 1.0, p).is_ok());
    }

    #[test]
    fn realized_adds_perturbation() {
        let a = Array2::eye(2);
        let p = Arc::new(PerturbationModel::Iid { rows: 2, cols: 2 });
        let problem = Problem::new(array![1.0, 1.0], a, 1.0, 1.0, p).unwrap();
        let oracle = problem.realized(array![0.5, 0.0, 0.0, -0.5].view()).unwrap();
        assert_eq!(oracle.a(), &array![[1.5, 0.0], [0.0, 0.5]]);
        assert!(oracle.perturbation_disabled());
    }

    #[test]
    fn normalization() {
        let mut a = array![[3.0, 4.0], [0.0, 0.0]];
        normalize_frobenius(&mut a);
        assert!((frobenius_sq(a.view()) - 2.0).abs() < 1e-14);
    }
}
