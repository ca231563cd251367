//! Bernoulli-Gaussian MMSE denoising and Gaussian message division.
//!
//! For a pseudo-measurement `r = x + N(0, γ⁻¹)` and the prior
//! `p(x) = (1-ρ) δ(x) + ρ N(x; μ, σ²)` the posterior is again a spike plus a
//! Gaussian slab:
//!
//! ```text
//! v   = 1 / (γ + 1/σ²)
//! m   = v (γ r + μ/σ²)
//! π   = ρ N(r; μ, σ² + γ⁻¹) / [ρ N(r; μ, σ² + γ⁻¹) + (1-ρ) N(r; 0, γ⁻¹)]
//! E[x]   = π m
//! Var[x] = π v + π (1-π) m²
//! ```
//!
//! The slab weight `π` is evaluated from log-densities so that very large
//! `|r|` does not underflow both mixture terms.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{check_len, Error, Result};

/// Cap on the returned posterior precision when the posterior collapses.
pub const ETA_MAX: f64 = 1e12;

/// Default floor for extrinsic precisions.
pub const GAMMA_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliGaussianPrior {
    rho: f64,
    mu_x: f64,
    sigma_x2: f64,
}

impl BernoulliGaussianPrior {
    pub fn new(rho: f64, mu_x: f64, sigma_x2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!("rho must lie in [0, 1], got {rho}")));
        }
        if !(sigma_x2 > 0.0 && sigma_x2.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_x2 must be positive and finite, got {sigma_x2}"
            )));
        }
        if !mu_x.is_finite() {
            return Err(Error::InvalidParameter(format!("mu_x must be finite, got {mu_x}")));
        }
        Ok(Self { rho, mu_x, sigma_x2 })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mu_x(&self) -> f64 {
        self.mu_x
    }

    pub fn sigma_x2(&self) -> f64 {
        self.sigma_x2
    }

    /// Posterior mean and variance of one component given `r` observed with
    /// precision `gamma`.
    pub fn posterior_moments(&self, r: f64, gamma: f64) -> (f64, f64) {
        let slab_precision = 1.0 / self.sigma_x2;
        let v = 1.0 / (gamma + slab_precision);
        let m = v * (gamma * r + self.mu_x * slab_precision);
        let pi = self.slab_weight(r, gamma);
        let mean = pi * m;
        let var = pi * v + pi * (1.0 - pi) * m * m;
        (mean, var)
    }

    /// Posterior probability that the component is drawn from the slab.
    pub fn slab_weight(&self, r: f64, gamma: f64) -> f64 {
        if self.rho <= 0.0 {
            return 0.0;
        }
        if self.rho >= 1.0 {
            return 1.0;
        }
        let log_slab = log_normal_pdf(r, self.mu_x, self.sigma_x2 + 1.0 / gamma);
        let log_spike = log_normal_pdf(r, 0.0, 1.0 / gamma);
        let log_odds = self.rho.ln() - (-self.rho).ln_1p() + log_slab - log_spike;
        logistic(log_odds)
    }
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub xhat: Array1<f64>,
    /// Inverse of the average posterior variance.
    pub eta: f64,
    /// Set when the average posterior variance vanished and `eta` was capped.
    pub degenerate: bool,
}

/// Componentwise posterior means and the averaged posterior precision.
pub fn denoise(prior: &BernoulliGaussianPrior, r: ArrayView1<'_, f64>, gamma: f64) -> Result<DenoiseOutput> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "denoiser input precision must be positive, got {gamma}"
        )));
    }
    let n = r.len();
    let mut xhat = Array1::zeros(n);
    let mut var_sum = 0.0;
    Zip::from(&mut xhat).and(r).for_each(|x, &ri| {
        let (mean, var) = prior.posterior_moments(ri, gamma);
        *x = mean;
        var_sum += var;
    });
    let mut eta = n as f64 / var_sum;
    let degenerate = !(eta.is_finite() && eta <= ETA_MAX);
    if degenerate {
        log::warn!("posterior variance vanished (rho = {}); capping precision at {ETA_MAX:e}", prior.rho);
        eta = ETA_MAX;
    }
    Ok(DenoiseOutput { xhat, eta, degenerate })
}

/// An extrinsic message `N(x; r, γ⁻¹ I)`.
#[derive(Debug, Clone)]
pub struct Extrinsic {
    pub r: Array1<f64>,
    pub gamma: f64,
    /// True when `eta - gamma` fell below the floor and was clamped.
    pub clamped: bool,
}

/// Divides the belief `N(xhat, η⁻¹ I)` by the incoming message `N(r, γ⁻¹ I)`.
pub fn extrinsic(
    xhat: ArrayView1<'_, f64>,
    eta: f64,
    r: ArrayView1<'_, f64>,
    gamma: f64,
    gamma_min: f64,
) -> Result<Extrinsic> {
    check_len("extrinsic input", xhat.len(), r.len())?;
    if !(eta > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "extrinsic precisions must be positive (eta = {eta}, gamma = {gamma})"
        )));
    }
    let raw = eta - gamma;
    let (gamma_new, clamped) = if raw < gamma_min { (gamma_min, true) } else { (raw, false) };
    let mut r_new = Array1::zeros(r.len());
    Zip::from(&mut r_new)
        .and(xhat)
        .and(r)
        .for_each(|out, &x, &ri| *out = (eta * x - gamma * ri) / gamma_new);
    Ok(Extrinsic {
        r: r_new,
        gamma: gamma_new,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gaussian_conjugate_case() {
        let prior = BernoulliGaussianPrior::new(1.0, 0.0, 1.0).unwrap();
        let out = denoise(&prior, array![1.0].view(), 1.0).unwrap();
        assert!((out.xhat[0] - 0.5).abs() < 1e-15);
        assert!((out.eta - 2.0).abs() < 1e-12);
        assert!(!out.degenerate);
    }

    #[test]
    fn symmetric_posterior_at_zero() {
        let prior = BernoulliGaussianPrior::new(0.5, 0.0, 1.0).unwrap();
        let out = denoise(&prior, array![0.0].view(), 3.0).unwrap();
        assert_eq!(out.xhat[0], 0.0);
        // Closed-form slab weight at r = 0: ρ N(0; 0, σ²+1/γ) / (ρ N(0;0,σ²+1/γ) + (1-ρ) N(0;0,1/γ)).
        let a = (1.0 / (1.0 + 1.0 / 3.0f64)).sqrt();
        let b = 3.0f64.sqrt();
        let expected = a / (a + b);
        assert!((prior.slab_weight(0.0, 3.0) - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_activity_is_degenerate() {
        let prior = BernoulliGaussianPrior::new(0.0, 0.0, 1.0).unwrap();
        let out = denoise(&prior, array![1.0, -3.0].view(), 2.0).unwrap();
        assert_eq!(out.xhat, array![0.0, 0.0]);
        assert_eq!(out.eta, ETA_MAX);
        assert!(out.degenerate);
    }

    #[test]
    fn huge_inputs_do_not_underflow() {
        let prior = BernoulliGaussianPrior::new(0.2, 0.0, 1.0).unwrap();
        let out = denoise(&prior, array![60.0, -1e3].view(), 50.0).unwrap();
        assert!(out.xhat.iter().all(|v| v.is_finite()));
        assert!((out.xhat[0] - 60.0 * 50.0 / 51.0).abs() < 1e-9);
        assert!(out.eta.is_finite());
    }

    #[test]
    fn prior_validation() {
        assert!(BernoulliGaussianPrior::new(1.5, 0.0, 1.0).is_err());
        assert!(BernoulliGaussianPrior::new(0.5, 0.0, 0.0).is_err());
        assert!(BernoulliGaussianPrior::new(0.5, f64::NAN, 1.0).is_err());
        assert!(denoise(&BernoulliGaussianPrior::new(0.5, 0.0, 1.0).unwrap(), array![1.0].view(), 0.0).is_err());
    }

    #[test]
    fn extrinsic_substitution() {
        let out = extrinsic(array![1.0].view(), 2.0, array![0.0].view(), 1.0, GAMMA_MIN).unwrap();
        assert_eq!(out.gamma, 1.0);
        assert_eq!(out.r, array![2.0]);
        assert!(!out.clamped);
    }

    #[test]
    fn extrinsic_symmetric_division() {
        let r = array![0.3, -1.2, 4.0];
        let out = extrinsic(r.view(), 5.0, r.view(), 2.5, GAMMA_MIN).unwrap();
        assert_eq!(out.gamma, 2.5);
        for (a, b) in out.r.iter().zip(r.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn extrinsic_clamps() {
        let out = extrinsic(array![1.0].view(), 1.0, array![0.5].view(), 2.0, GAMMA_MIN).unwrap();
        assert!(out.clamped);
        assert_eq!(out.gamma, GAMMA_MIN);
        assert!((out.r[0] - (1.0 - 1.0) / GAMMA_MIN).abs() < 1e-6);
    }
}
