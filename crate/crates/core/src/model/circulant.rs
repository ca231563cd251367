//! Circulant matrices and the FFT identities used to apply them.
//!
//! Convention: `make_circulant(a)[j][k] = a[(k - j) mod n]`, so the first
//! row is `a` and each following row is the previous one rotated right by
//! one position.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub fn make_circulant(first_row: ArrayView1<'_, f64>) -> Array2<f64> {
    let n = first_row.len();
    Array2::from_shape_fn((n, n), |(j, k)| first_row[(k + n - j) % n])
}

/// Forward/inverse transforms of one length, planned once.
#[derive(Clone)]
pub(crate) struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub(crate) fn forward(&self, x: ArrayView1<'_, f64>) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the normalized inverse transform.
    pub(crate) fn inverse_real(&self, mut buf: Vec<Complex64>) -> Array1<f64> {
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// `|X_k|²`, the eigenvalues of the cyclic autocorrelation matrix of `x`.
    pub(crate) fn power_spectrum(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        self.forward(x).iter().map(|c| c.norm_sqr()).collect()
    }

    /// `circulant(e) · x`, i.e. `Σ_s e_s x[(j + s) mod n]`.
    pub(crate) fn circulant_times(&self, e: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let fe = self.forward(e);
        let fx = self.forward(x);
        let prod = fe.iter().zip(&fx).map(|(a, b)| a.conj() * b).collect();
        self.inverse_real(prod)
    }

    /// Each row of `rows` right-multiplied by `circulant(first_row)`.
    pub(crate) fn rows_times_circulant(&self, rows: ArrayView2<'_, f64>, first_row: ArrayView1<'_, f64>) -> Array2<f64> {
        let fc = self.forward(first_row);
        self.filter_rows(rows, |k| fc[k])
    }

    /// Each row filtered by a real, conjugate-symmetric spectrum. For a
    /// symmetric circulant `G` with eigenvalues `spectrum`, this is `rows · G`.
    pub(crate) fn rows_times_symmetric(&self, rows: ArrayView2<'_, f64>, spectrum: &[f64]) -> Array2<f64> {
        self.filter_rows(rows, |k| Complex64::new(spectrum[k], 0.0))
    }

    fn filter_rows(&self, rows: ArrayView2<'_, f64>, gain: impl Fn(usize) -> Complex64) -> Array2<f64> {
        assert_eq!(rows.ncols(), self.n);
        let mut out = Array2::zeros(rows.dim());
        let gains: Vec<Complex64> = (0..self.n).map(gain).collect();
        Zip::from(out.rows_mut()).and(rows.rows()).for_each(|mut dst, src| {
            let mut buf = self.forward(src);
            for (b, g) in buf.iter_mut().zip(&gains) {
                *b *= g;
            }
            dst.assign(&self.inverse_real(buf));
        });
        out
    }

    /// The symmetric circulant matrix whose eigenvalues are `spectrum`.
    pub(crate) fn symmetric_circulant(&self, spectrum: &[f64]) -> Array2<f64> {
        let buf = spectrum.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        let first_row = self.inverse_real(buf);
        make_circulant(first_row.view())
    }
}
