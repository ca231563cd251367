use ndarray::ArrayView1;

/// Reported in place of `-∞` when the estimate is exact.
pub const NMSE_FLOOR_DB: f64 = -400.0;
/// Reported in place of `+∞` when the estimate is exact.
pub const PSNR_CAP_DB: f64 = 400.0;

fn error_energy(truth: ArrayView1<'_, f64>, estimate: ArrayView1<'_, f64>) -> f64 {
    truth
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `10 log₁₀(‖x - x̂‖² / ‖x‖²)`, floored at [`NMSE_FLOOR_DB`].
///
/// A zero `truth` has no meaningful NMSE; it maps to the floor when the
/// estimate is also zero and to [`PSNR_CAP_DB`] otherwise.
pub fn nmse_db(truth: ArrayView1<'_, f64>, estimate: ArrayView1<'_, f64>) -> f64 {
    let err = error_energy(truth, estimate);
    let energy = truth.dot(&truth);
    if energy == 0.0 {
        return if err == 0.0 { NMSE_FLOOR_DB } else { PSNR_CAP_DB };
    }
    if err == 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * (err / energy).log10()).max(NMSE_FLOOR_DB)
}

/// `10 log₁₀(peak² N / ‖x - x̂‖²)` with `peak = max |x_i|`, capped at [`PSNR_CAP_DB`].
pub fn psnr_db(truth: ArrayView1<'_, f64>, estimate: ArrayView1<'_, f64>) -> f64 {
    let err = error_energy(truth, estimate);
    if err == 0.0 {
        return PSNR_CAP_DB;
    }
    let peak = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (10.0 * (peak * peak * truth.len() as f64 / err).log10()).min(PSNR_CAP_DB)
}
