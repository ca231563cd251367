//! Linear MMSE stage of VAMP.
//!
//! All routes compute the same quantities for the model
//! `y ~ N(A x, noise)`, `x ~ N(r₂, γ₂⁻¹ I)`:
//! the posterior mean and `η₂ = N / Tr[posterior covariance]`.
//! When `M < N` the `M×M` form obtained from the matrix inversion lemma is
//! used, otherwise the `N×N` posterior precision is factored directly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{InverseC, SolveC};

use crate::error::{check_len, Error, Result};
use crate::linalg::{add_to_diagonal, cholesky, gram_cols, gram_rows, sym_eigen, trace_of_product_sym};

#[derive(Debug, Clone)]
pub struct LmmseOutput {
    pub xhat: Array1<f64>,
    pub eta: f64,
}

fn check_precisions(noise: f64, gamma2: f64) -> Result<()> {
    if noise > 0.0 && noise.is_finite() && gamma2 > 0.0 && gamma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "LMMSE precisions must be positive and finite (noise = {noise}, gamma2 = {gamma2})"
        )))
    }
}

fn finish(xhat: Array1<f64>, trace: f64, n: usize) -> Result<LmmseOutput> {
    if !(trace > 0.0 && trace.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!(
            "posterior covariance trace is {trace}"
        )));
    }
    Ok(LmmseOutput {
        xhat,
        eta: n as f64 / trace,
    })
}

/// `x̂ = (γ_w AᵀA + γ₂ I)⁻¹ (γ_w Aᵀ y + γ₂ r₂)`, `η⁻¹ = Tr[(γ_w AᵀA + γ₂ I)⁻¹] / N`.
pub fn lmmse(
    a: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    gamma_w: f64,
    r2: ArrayView1<'_, f64>,
    gamma2: f64,
) -> Result<LmmseOutput> {
    let (m, n) = a.dim();
    check_len("measurement vector", m, y.len())?;
    check_len("prior mean", n, r2.len())?;
    check_precisions(gamma_w, gamma2)?;
    if m < n {
        // S = (γ₂/γ_w) I + A Aᵀ;  x̂ = r + Aᵀ S⁻¹ (y - A r);
        // Tr = (N - M)/γ₂ + Tr[S⁻¹]/γ_w.
        let mut s = gram_rows(a);
        add_to_diagonal(&mut s, gamma2 / gamma_w);
        let factor = cholesky(s, "LMMSE measurement-space system")?;
        let resid = &y - &a.dot(&r2);
        let z = factor.solvec(&resid).map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
        let xhat = &r2 + &a.t().dot(&z);
        let inv = factor.invc().map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
        let trace = (n - m) as f64 / gamma2 + inv.diag().sum() / gamma_w;
        finish(xhat, trace, n)
    } else {
        let mut p = gram_cols(a) * gamma_w;
        add_to_diagonal(&mut p, gamma2);
        let rhs = a.t().dot(&y) * gamma_w + &r2 * gamma2;
        posterior_from_precision(p, &rhs, n)
    }
}

fn posterior_from_precision(p: Array2<f64>, rhs: &Array1<f64>, n: usize) -> Result<LmmseOutput> {
    let factor = cholesky(p, "LMMSE posterior precision")?;
    let xhat = factor.solvec(rhs).map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
    let inv = factor.invc().map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
    finish(xhat, inv.diag().sum(), n)
}

/// LMMSE under colored noise `N(0, Γ)` without forming `Γ^(-1/2)`.
///
/// Gives the same result as whitening with any square root of `Γ` and then
/// calling [`lmmse`]; `aat` must be `A Aᵀ` when `M < N`.
pub fn colored_lmmse(
    a: ArrayView2<'_, f64>,
    aat: Option<&Array2<f64>>,
    y: ArrayView1<'_, f64>,
    covariance: &Array2<f64>,
    r2: ArrayView1<'_, f64>,
    gamma2: f64,
) -> Result<LmmseOutput> {
    let (m, n) = a.dim();
    check_len("measurement vector", m, y.len())?;
    check_len("prior mean", n, r2.len())?;
    check_len("covariance size", m, covariance.nrows())?;
    check_precisions(1.0, gamma2)?;
    if m < n {
        // S = γ₂ Γ + A Aᵀ;  x̂ = r + Aᵀ S⁻¹ (y - A r);
        // Tr = (N - M)/γ₂ + Tr[S⁻¹ Γ].
        let aat = aat.ok_or_else(|| Error::InvalidParameter("colored LMMSE needs A Aᵀ when M < N".into()))?;
        check_len("A Aᵀ size", m, aat.nrows())?;
        let mut s = covariance * gamma2;
        s += aat;
        let factor = cholesky(s, "colored LMMSE measurement-space system")?;
        let resid = &y - &a.dot(&r2);
        let z = factor.solvec(&resid).map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
        let xhat = &r2 + &a.t().dot(&z);
        let inv = factor.invc().map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
        let trace = (n - m) as f64 / gamma2 + trace_of_product_sym(inv.view(), covariance.view());
        finish(xhat, trace, n)
    } else {
        let cov_factor = cholesky(covariance.clone(), "noise covariance")?;
        let cov_inv = cov_factor.invc().map_err(|e| Error::NotPositiveDefinite(e.to_string()))?;
        let b = cov_inv.dot(&a);
        let mut p = a.t().dot(&b);
        crate::linalg::symmetrize(&mut p);
        add_to_diagonal(&mut p, gamma2);
        let rhs = b.t().dot(&y) + &r2 * gamma2;
        posterior_from_precision(p, &rhs, n)
    }
}

/// LMMSE with white noise and a fixed matrix, factored once.
///
/// For `M < N` this diagonalizes `A Aᵀ = U Λ Uᵀ`, otherwise `AᵀA = V Λ Vᵀ`;
/// each call is then `O(MN)` for any noise precision and `(r₂, γ₂)`.
#[derive(Debug, Clone)]
pub struct SpectralLmmse {
    wide: bool,
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<f64>,
    aty: Array1<f64>,
}

impl SpectralLmmse {
    pub fn new(a: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Self> {
        let (m, n) = a.dim();
        check_len("measurement vector", m, y.len())?;
        let wide = m < n;
        let gram = if wide { gram_rows(a) } else { gram_cols(a) };
        let (values, vectors) = sym_eigen(gram.view())?;
        Ok(Self {
            wide,
            eigenvalues: values.mapv(|v| v.max(0.0)),
            eigenvectors: vectors,
            aty: a.t().dot(&y),
        })
    }

    pub fn estimate(
        &self,
        a: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        gamma_w: f64,
        r2: ArrayView1<'_, f64>,
        gamma2: f64,
    ) -> Result<LmmseOutput> {
        check_precisions(gamma_w, gamma2)?;
        let (m, n) = a.dim();
        check_len("prior mean", n, r2.len())?;
        let u = &self.eigenvectors;
        if self.wide {
            let c = gamma2 / gamma_w;
            let resid = &y - &a.dot(&r2);
            let mut coeffs = u.t().dot(&resid);
            coeffs.zip_mut_with(&self.eigenvalues, |z, &l| *z /= c + l);
            let xhat = &r2 + &a.t().dot(&u.dot(&coeffs));
            let trace = (n - m) as f64 / gamma2
                + self.eigenvalues.iter().map(|&l| 1.0 / (gamma_w * l + gamma2)).sum::<f64>();
            finish(xhat, trace, n)
        } else {
            let rhs = &self.aty * gamma_w + &r2 * gamma2;
            let mut coeffs = u.t().dot(&rhs);
            coeffs.zip_mut_with(&self.eigenvalues, |z, &l| *z /= gamma_w * l + gamma2);
            let xhat = u.dot(&coeffs);
            let trace = self.eigenvalues.iter().map(|&l| 1.0 / (gamma_w * l + gamma2)).sum::<f64>();
            finish(xhat, trace, n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed, 0);
        Array2::from_shape_simple_fn((m, n), || rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn orthonormal_columns_closed_form() {
        // Columns of a 3×2 matrix with AᵀA = I.
        let s = 1.0 / 2f64.sqrt();
        let a = array![[s, 0.0], [s, 0.0], [0.0, 1.0]];
        let y = array![1.0, 2.0, -1.0];
        let r = array![0.5, 0.25];
        let out = lmmse(a.view(), y.view(), 3.0, r.view(), 2.0).unwrap();
        let aty = a.t().dot(&y);
        for i in 0..2 {
            let expected = (3.0 * aty[i] + 2.0 * r[i]) / 5.0;
            assert!((out.xhat[i] - expected).abs() < 1e-14);
        }
        assert!((out.eta - 5.0).abs() < 1e-12);
    }

    #[test]
    fn routes_agree_wide_and_tall() {
        for &(m, n) in &[(5usize, 9usize), (9, 5), (6, 6)] {
            let a = random_matrix(m, n, 7 + m as u64);
            let y = random_matrix(m, 1, 8).column(0).to_owned();
            let r = random_matrix(n, 1, 9).column(0).to_owned();
            let direct = lmmse(a.view(), y.view(), 4.0, r.view(), 0.7).unwrap();
            let spectral = SpectralLmmse::new(a.view(), y.view())
                .unwrap()
                .estimate(a.view(), y.view(), 4.0, r.view(), 0.7)
                .unwrap();
            let cov = Array2::eye(m) * 0.25;
            let aat = gram_rows(a.view());
            let colored = colored_lmmse(a.view(), Some(&aat), y.view(), &cov, r.view(), 0.7).unwrap();
            for other in [&spectral, &colored] {
                for (p, q) in direct.xhat.iter().zip(other.xhat.iter()) {
                    assert!((p - q).abs() < 1e-10, "{m}x{n}: {p} vs {q}");
                }
                assert!((direct.eta - other.eta).abs() < 1e-10 * direct.eta);
            }
        }
    }

    #[test]
    fn rejects_bad_precision() {
        let a = Array2::<f64>::eye(2);
        let v = array![1.0, 1.0];
        assert!(lmmse(a.view(), v.view(), 0.0, v.view(), 1.0).is_err());
        assert!(lmmse(a.view(), v.view(), 1.0, v.view(), -1.0).is_err());
    }
}
