//! Structured perturbation families `Σ e_i E_i`.

use std::sync::OnceLock;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::circulant::{make_circulant, Spectral};
use crate::error::{check_len, Error, Result};
use crate::linalg::{add_to_diagonal, gram_cols, gram_rows, norm_sq, syrk_rows_into};
use crate::rng::seeded;

/// Explicitly stored basis matrices, stacked vertically: rows
/// `i*M .. (i+1)*M` hold `E_i`.
#[derive(Debug, Clone)]
pub struct GenericBasis {
    rows: usize,
    cols: usize,
    stacked: Array2<f64>,
    gram: OnceLock<Array2<f64>>,
}

impl GenericBasis {
    pub fn new(rows: usize, cols: usize, matrices: &[Array2<f64>]) -> Result<Self> {
        let mut stacked = Array2::zeros((rows * matrices.len(), cols));
        for (i, e) in matrices.iter().enumerate() {
            if e.dim() != (rows, cols) {
                return Err(Error::InvalidParameter(format!(
                    "basis element {i} has shape {:?}, expected ({rows}, {cols})",
                    e.dim()
                )));
            }
            stacked.slice_mut(s![i * rows..(i + 1) * rows, ..]).assign(e);
        }
        Ok(Self::from_stacked(rows, stacked))
    }

    fn from_stacked(rows: usize, stacked: Array2<f64>) -> Self {
        let cols = stacked.ncols();
        Self {
            rows,
            cols,
            stacked,
            gram: OnceLock::new(),
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self::from_stacked(rows, Array2::zeros((0, cols)))
    }

    /// `count` basis matrices with i.i.d. N(0, 1/cols) entries.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, count: usize, rng: &mut R) -> Self {
        let sd = (1.0 / cols as f64).sqrt();
        let stacked = Array2::from_shape_simple_fn((rows * count, cols), || {
            sd * rng.sample::<f64, _>(StandardNormal)
        });
        Self::from_stacked(rows, stacked)
    }

    pub fn count(&self) -> usize {
        self.stacked.nrows().checked_div(self.rows).unwrap_or(0)
    }

    pub fn element(&self, i: usize) -> ArrayView2<'_, f64> {
        self.stacked.slice(s![i * self.rows..(i + 1) * self.rows, ..])
    }

    /// Row `i` is `E_i x`.
    fn projections(&self, x: ArrayView1<'_, f64>) -> Array2<f64> {
        let flat = self.stacked.dot(&x);
        flat.into_shape_with_order((self.count(), self.rows))
            .expect("stacked basis shape")
    }

    /// Column `b` stacks `E_i x_b` for every `i`, where `x_b` is column `b`
    /// of `xs`.
    fn projections_many(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        self.stacked.dot(&xs)
    }

    fn gram(&self) -> &Array2<f64> {
        self.gram.get_or_init(|| {
            let mut acc = Array2::zeros((self.rows, self.rows));
            for i in 0..self.count() {
                syrk_rows_into(1.0, self.element(i), 1.0, &mut acc);
            }
            acc
        })
    }
}

/// Shift basis `E_s = Φ·S_s`, `s = 0..n`, where `S_s` is the cyclic shift
/// with ones at `(j, (j + s) mod n)` and `Φ` an optional compression.
#[derive(Debug, Clone)]
pub struct CirculantPerturbation {
    n: usize,
    compression: Option<Array2<f64>>,
    spectral: Spectral,
    phi_gram: OnceLock<Array2<f64>>,
}

impl CirculantPerturbation {
    pub fn new(n: usize, compression: Option<Array2<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("circulant length must be positive".into()));
        }
        if let Some(phi) = &compression {
            check_len("compression matrix columns", n, phi.ncols())?;
            if phi.nrows() == 0 || phi.nrows() > n {
                return Err(Error::InvalidParameter(format!(
                    "compression matrix must have 1..={n} rows, found {}",
                    phi.nrows()
                )));
            }
        }
        Ok(Self {
            n,
            compression,
            spectral: Spectral::new(n),
            phi_gram: OnceLock::new(),
        })
    }

    pub fn compression(&self) -> Option<&Array2<f64>> {
        self.compression.as_ref()
    }

    fn rows(&self) -> usize {
        self.compression.as_ref().map_or(self.n, |p| p.nrows())
    }

    /// `Φ C Φᵀ` for the symmetric circulant `C` with eigenvalues `spectrum`.
    fn compressed_circulant(&self, spectrum: &[f64]) -> Array2<f64> {
        match &self.compression {
            None => self.spectral.symmetric_circulant(spectrum),
            Some(phi) => {
                let root: Vec<f64> = spectrum.iter().map(|v| v.max(0.0).sqrt()).collect();
                let filtered = self.spectral.rows_times_symmetric(phi.view(), &root);
                gram_rows(filtered.view())
            }
        }
    }

    fn compress(&self, v: Array1<f64>) -> Array1<f64> {
        match &self.compression {
            None => v,
            Some(phi) => phi.dot(&v),
        }
    }

    /// `Φ · circulant(first_row)` without forming the circulant.
    pub fn compressed_times_circulant(&self, first_row: ArrayView1<'_, f64>) -> Array2<f64> {
        match &self.compression {
            None => make_circulant(first_row),
            Some(phi) => self.spectral.rows_times_circulant(phi.view(), first_row),
        }
    }

    fn phi_gram(&self) -> &Array2<f64> {
        self.phi_gram.get_or_init(|| match &self.compression {
            None => Array2::eye(self.n),
            Some(phi) => gram_rows(phi.view()),
        })
    }
}

/// `E_{ij} = D u_i v_jᵀ C` for `D: M×m`, `C: n×N`, indexed `i*n + j`.
#[derive(Debug, Clone)]
pub struct MatrixRestricted {
    left: Array2<f64>,
    right: Array2<f64>,
    left_gram: Array2<f64>,
    right_frobenius_sq: f64,
}

impl MatrixRestricted {
    pub fn new(left: Array2<f64>, right: Array2<f64>) -> Result<Self> {
        if left.ncols() == 0 || right.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "restricted perturbation needs non-empty inner dimensions".into(),
            ));
        }
        let left_gram = gram_rows(left.view());
        let right_frobenius_sq = right.iter().map(|v| v * v).sum();
        Ok(Self {
            left,
            right,
            left_gram,
            right_frobenius_sq,
        })
    }

    pub fn left(&self) -> &Array2<f64> {
        &self.left
    }

    pub fn right(&self) -> &Array2<f64> {
        &self.right
    }

    fn inner_shape(&self) -> (usize, usize) {
        (self.left.ncols(), self.right.nrows())
    }
}

/// The family `{E_i}` describing how the sensing matrix may be perturbed.
#[derive(Debug, Clone)]
pub enum PerturbationModel {
    GenericBasis(GenericBasis),
    /// Every entry perturbed independently; `E_ij` is the `(i, j)` indicator
    /// and `e` is read row-major.
    Iid { rows: usize, cols: usize },
    Circulant(CirculantPerturbation),
    MatrixRestricted(MatrixRestricted),
}

pub(crate) fn variance_from_precision(precision: f64, name: &str) -> Result<f64> {
    if precision > 0.0 {
        Ok(1.0 / precision)
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be a positive precision, got {precision}"
        )))
    }
}

impl PerturbationModel {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self::GenericBasis(GenericBasis::empty(rows, cols))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::GenericBasis(_) => "generic",
            Self::Iid { .. } => "iid",
            Self::Circulant(_) => "circulant",
            Self::MatrixRestricted(_) => "restricted",
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Self::GenericBasis(b) => b.rows,
            Self::Iid { rows, .. } => *rows,
            Self::Circulant(c) => c.rows(),
            Self::MatrixRestricted(r) => r.left.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::GenericBasis(b) => b.cols,
            Self::Iid { cols, .. } => *cols,
            Self::Circulant(c) => c.n,
            Self::MatrixRestricted(r) => r.right.ncols(),
        }
    }

    /// Number of basis elements `q`.
    pub fn count(&self) -> usize {
        match self {
            Self::GenericBasis(b) => b.count(),
            Self::Iid { rows, cols } => rows * cols,
            Self::Circulant(c) => c.n,
            Self::MatrixRestricted(r) => {
                let (m, n) = r.inner_shape();
                m * n
            }
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self, Self::Iid { .. })
    }

    /// `Σ_i E_i x xᵀ E_iᵀ`.
    pub fn perturbation_gram(&self, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        check_len("signal length", self.cols(), x.len())?;
        Ok(match self {
            Self::GenericBasis(b) => gram_cols(b.projections(x).view()),
            Self::Iid { rows, .. } => Array2::eye(*rows) * norm_sq(x),
            Self::Circulant(c) => c.compressed_circulant(&c.spectral.power_spectrum(x)),
            Self::MatrixRestricted(r) => {
                let cx = r.right.dot(&x);
                &r.left_gram * norm_sq(cx.view())
            }
        })
    }

    /// `Σ_i E_i E_iᵀ`.
    pub fn basis_gram(&self) -> Array2<f64> {
        match self {
            Self::GenericBasis(b) => b.gram().clone(),
            Self::Iid { rows, cols } => Array2::eye(*rows) * *cols as f64,
            Self::Circulant(c) => c.phi_gram() * c.n as f64,
            Self::MatrixRestricted(r) => &r.left_gram * r.right_frobenius_sq,
        }
    }

    /// `Σ_i E_i (r rᵀ + γ₂⁻¹ I) E_iᵀ`.
    pub fn expected_gram(&self, r: ArrayView1<'_, f64>, gamma2: f64) -> Result<Array2<f64>> {
        check_len("signal length", self.cols(), r.len())?;
        let v2 = variance_from_precision(gamma2, "gamma2")?;
        Ok(match self {
            Self::GenericBasis(b) => {
                let mut g = gram_cols(b.projections(r).view());
                if v2 > 0.0 && b.count() > 0 {
                    g.scaled_add(v2, b.gram());
                }
                g
            }
            Self::Iid { rows, cols } => Array2::eye(*rows) * (norm_sq(r) + *cols as f64 * v2),
            Self::Circulant(c) => {
                let shift = c.n as f64 * v2;
                let spectrum: Vec<f64> = c
                    .spectral
                    .power_spectrum(r)
                    .into_iter()
                    .map(|p| p + shift)
                    .collect();
                c.compressed_circulant(&spectrum)
            }
            Self::MatrixRestricted(m) => {
                let cr = m.right.dot(&r);
                &m.left_gram * (norm_sq(cr.view()) + m.right_frobenius_sq * v2)
            }
        })
    }

    /// [`expected_gram`](Self::expected_gram) for several `(r, γ₂)` pairs.
    /// A stored basis is read once for the whole batch, which dominates the
    /// cost at large `q`.
    pub fn expected_grams(&self, requests: &[(ArrayView1<'_, f64>, f64)]) -> Result<Vec<Array2<f64>>> {
        match self {
            Self::GenericBasis(b) if requests.len() > 1 && b.count() > 0 => {
                let mut xs = Array2::zeros((self.cols(), requests.len()));
                let mut variances = Vec::with_capacity(requests.len());
                for (j, (r, gamma2)) in requests.iter().enumerate() {
                    check_len("signal length", self.cols(), r.len())?;
                    variances.push(variance_from_precision(*gamma2, "gamma2")?);
                    xs.column_mut(j).assign(r);
                }
                let flat = b.projections_many(xs.view());
                let shape = (b.count(), b.rows);
                Ok(variances
                    .into_iter()
                    .enumerate()
                    .map(|(j, v2)| {
                        let p = flat.column(j).to_shape(shape).expect("stacked basis shape").to_owned();
                        let mut g = gram_cols(p.view());
                        if v2 > 0.0 {
                            g.scaled_add(v2, b.gram());
                        }
                        g
                    })
                    .collect())
            }
            _ => requests.iter().map(|(r, g)| self.expected_gram(*r, *g)).collect(),
        }
    }

    /// Noise covariance of the equivalent model: `γ_e⁻¹ Σ E_i x xᵀ E_iᵀ + γ_w⁻¹ I`.
    /// `gamma_e = ∞` disables the perturbation term.
    pub fn covariance(&self, gamma_e: f64, gamma_w: f64, x: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        let ve = variance_from_precision(gamma_e, "gamma_e")?;
        let vw = variance_from_precision(gamma_w, "gamma_w")?;
        let mut gamma = self.perturbation_gram(x)? * ve;
        add_to_diagonal(&mut gamma, vw);
        Ok(gamma)
    }

    /// Expectation of [`covariance`](Self::covariance) over `x ~ N(r, γ₂⁻¹ I)`.
    pub fn expected_covariance(
        &self,
        gamma_e: f64,
        gamma_w: f64,
        r: ArrayView1<'_, f64>,
        gamma2: f64,
    ) -> Result<Array2<f64>> {
        let ve = variance_from_precision(gamma_e, "gamma_e")?;
        let vw = variance_from_precision(gamma_w, "gamma_w")?;
        let mut gamma = if ve > 0.0 {
            self.expected_gram(r, gamma2)? * ve
        } else {
            check_len("signal length", self.cols(), r.len())?;
            variance_from_precision(gamma2, "gamma2")?;
            Array2::zeros((self.rows(), self.rows()))
        };
        add_to_diagonal(&mut gamma, vw);
        Ok(gamma)
    }

    /// `(Σ_i e_i E_i) x`.
    pub fn apply(&self, e: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("perturbation coefficients", self.count(), e.len())?;
        check_len("signal length", self.cols(), x.len())?;
        Ok(match self {
            Self::GenericBasis(b) => {
                if b.count() == 0 {
                    Array1::zeros(b.rows)
                } else {
                    b.projections(x).t().dot(&e)
                }
            }
            Self::Iid { rows, cols } => {
                let mat = e.to_shape((*rows, *cols)).expect("coefficient shape");
                mat.dot(&x)
            }
            Self::Circulant(c) => c.compress(c.spectral.circulant_times(e, x)),
            Self::MatrixRestricted(r) => {
                let (m, n) = r.inner_shape();
                let inner = e.to_shape((m, n)).expect("coefficient shape");
                r.left.dot(&inner.dot(&r.right.dot(&x)))
            }
        })
    }

    /// `Σ_i e_i E_i` as a dense matrix.
    pub fn matrix(&self, e: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        check_len("perturbation coefficients", self.count(), e.len())?;
        Ok(match self {
            Self::GenericBasis(b) => {
                let mut acc = Array2::zeros((b.rows, b.cols));
                for (i, &ei) in e.iter().enumerate() {
                    if ei != 0.0 {
                        acc.scaled_add(ei, &b.element(i));
                    }
                }
                acc
            }
            Self::Iid { rows, cols } => e.to_shape((*rows, *cols)).expect("coefficient shape").to_owned(),
            Self::Circulant(c) => c.compressed_times_circulant(e),
            Self::MatrixRestricted(r) => {
                let (m, n) = r.inner_shape();
                let inner = e.to_shape((m, n)).expect("coefficient shape");
                r.left.dot(&inner.dot(&r.right))
            }
        })
    }

    /// `q` i.i.d. draws from N(0, γ_e⁻¹), deterministic in `seed`.
    pub fn sample(&self, gamma_e: f64, seed: u64) -> Result<Array1<f64>> {
        let sd = variance_from_precision(gamma_e, "gamma_e")?.sqrt();
        let mut rng = seeded(seed, 0);
        Ok((0..self.count())
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    /// Materializes every basis matrix. Only sensible at small sizes.
    pub fn expand(&self) -> GenericBasis {
        let (rows, cols, q) = (self.rows(), self.cols(), self.count());
        if let Self::GenericBasis(b) = self {
            return b.clone();
        }
        let mut stacked = Array2::zeros((rows * q, cols));
        let mut unit = Array1::zeros(q);
        for i in 0..q {
            unit[i] = 1.0;
            let e_i = self.matrix(unit.view()).expect("unit coefficient vector");
            stacked.slice_mut(s![i * rows..(i + 1) * rows, ..]).assign(&e_i);
            unit[i] = 0.0;
        }
        GenericBasis::from_stacked(rows, stacked)
    }
}
