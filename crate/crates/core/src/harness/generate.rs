//! Synthetic signals, sensing matrices and SNR-calibrated noise draws.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::BernoulliGaussianPrior;
use crate::error::{check_len, Error, Result};
use crate::linalg::norm_sq;
use crate::model::{normalize_frobenius, PerturbationModel};
use crate::rng::seeded;

/// Random-stream identifiers; one per random ingredient of a trial.
pub(crate) mod stream {
    pub const SIGNAL: u64 = 1;
    pub const MATRIX: u64 = 2;
    pub const BASIS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PERTURBATION: u64 = 5;
    pub const COMPRESSION: u64 = 6;
    pub const WEIGHTS: u64 = 7;
}

/// `γ_e` reported when the perturbation is switched off.
pub const DISABLED_GAMMA_E: f64 = 1e12;

/// Each entry is zero with probability `1 - ρ`, otherwise `N(μ_x, σ_x²)`.
pub fn gen_signal(prior: &BernoulliGaussianPrior, n: usize, seed: u64) -> Array1<f64> {
    let mut rng = seeded(seed, stream::SIGNAL);
    let sd = prior.sigma_x2().sqrt();
    (0..n)
        .map(|_| {
            let active = rng.random::<f64>() < prior.rho();
            let z: f64 = rng.sample(StandardNormal);
            if active {
                prior.mu_x() + sd * z
            } else {
                0.0
            }
        })
        .collect()
}

/// I.i.d. Gaussian `M×N` matrix rescaled to `‖A‖²_F = N`.
pub fn gen_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed, stream::MATRIX);
    let sd = (1.0 / m as f64).sqrt();
    let mut a = Array2::from_shape_simple_fn((m, n), || sd * rng.sample::<f64, _>(StandardNormal));
    normalize_frobenius(&mut a);
    a
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub w: Array1<f64>,
    pub e: Array1<f64>,
    pub gamma_w: f64,
    pub gamma_e: f64,
    pub snr_w_db: f64,
    /// `+∞` when the perturbation is disabled.
    pub snr_e_db: f64,
}

fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Draws `w` and `e` and rescales both realizations so that
/// `10 log₁₀(‖Ax‖²/‖w‖²) = snr_w_db` and
/// `10 log₁₀(‖Ax‖²/‖Σ e_i E_i x‖²) = snr_e_db` hold exactly.
///
/// Both ratios put the clean signal energy on top, so a larger SNR_e means a
/// smaller perturbation. `snr_e_db = +∞` switches the perturbation off
/// (`e = 0`, `γ_e = DISABLED_GAMMA_E`). The reported precisions are the
/// realization-matched `γ_w = M/‖w‖²` and `γ_e = q/‖e‖²`.
pub fn calibrate(
    a: ArrayView2<'_, f64>,
    x: ArrayView1<'_, f64>,
    perturbation: &PerturbationModel,
    snr_w_db: f64,
    snr_e_db: f64,
    seed: u64,
) -> Result<Calibration> {
    let (m, n) = a.dim();
    check_len("signal length", n, x.len())?;
    let signal_energy = norm_sq(a.dot(&x).view());
    if !(signal_energy > 0.0) {
        return Err(Error::InvalidParameter(
            "calibration needs a signal with ‖A x‖ > 0".into(),
        ));
    }
    if !snr_w_db.is_finite() {
        return Err(Error::InvalidParameter(format!("snr_w_db must be finite, got {snr_w_db}")));
    }

    let mut rng = seeded(seed, stream::NOISE);
    let mut w: Array1<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise_energy = signal_energy / db_to_ratio(snr_w_db);
    let scale = (noise_energy / norm_sq(w.view())).sqrt();
    w.mapv_inplace(|v| v * scale);
    let w_energy = norm_sq(w.view());
    let gamma_w = m as f64 / w_energy;
    let realized_w = 10.0 * (signal_energy / w_energy).log10();

    if snr_e_db == f64::INFINITY {
        return Ok(Calibration {
            w,
            e: Array1::zeros(perturbation.count()),
            gamma_w,
            gamma_e: DISABLED_GAMMA_E,
            snr_w_db: realized_w,
            snr_e_db: f64::INFINITY,
        });
    }
    if !snr_e_db.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid snr_e_db {snr_e_db}")));
    }
    let q = perturbation.count();
    if q == 0 {
        return Err(Error::InvalidParameter(
            "cannot calibrate a perturbation with an empty basis".into(),
        ));
    }

    const MAX_ATTEMPTS: u64 = 16;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeded(seed.wrapping_add(attempt), stream::PERTURBATION);
        let e0: Array1<f64> = (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let pert_energy = norm_sq(perturbation.apply(e0.view(), x)?.view());
        if !(pert_energy > 0.0) {
            continue;
        }
        let target = signal_energy / db_to_ratio(snr_e_db);
        let e = e0 * (target / pert_energy).sqrt();
        let realized_e = 10.0 * (signal_energy / norm_sq(perturbation.apply(e.view(), x)?.view())).log10();
        let gamma_e = q as f64 / norm_sq(e.view());
        return Ok(Calibration {
            w,
            e,
            gamma_w,
            gamma_e,
            snr_w_db: realized_w,
            snr_e_db: realized_e,
        });
    }
    Err(Error::InvalidParameter(
        "perturbation has zero energy on this signal for every draw".into(),
    ))
}
