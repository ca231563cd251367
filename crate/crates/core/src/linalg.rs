//! Dense kernels used across the crate.
//!
//! Everything here operates on standard-layout (row-major) `ndarray`
//! matrices. Cholesky factorizations come from `ndarray-linalg`; the
//! symmetric eigensolver calls LAPACK `dsyevd` directly because the
//! divide-and-conquer driver is several times faster than `dsyev` at the
//! sizes the whitening step sees, and the Gram products use BLAS `dsyrk`.

use std::os::raw::{c_char, c_int};

use cblas_sys::{cblas_dsyrk, CBLAS_LAYOUT, CBLAS_TRANSPOSE, CBLAS_UPLO};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ShapeBuilder};
use ndarray_linalg::{CholeskyFactorized, FactorizeCInto, UPLO};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition. Eigenvalues ascend; eigenvectors are the
/// columns of the returned matrix.
pub fn sym_eigen(a: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            what: "sym_eigen (square)",
            expected: n,
            found: a.ncols(),
        });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // Row-major storage of a symmetric matrix is also its column-major storage.
    let mut work_a: Vec<f64> = a.as_standard_layout().iter().copied().collect();
    let mut w = vec![0.0; n];
    let nn = n as c_int;
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let mut info: c_int = 0;
    let mut lwork_q = [0.0f64];
    let mut liwork_q = [0 as c_int];
    let query: c_int = -1;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            work_a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            lwork_q.as_mut_ptr(),
            &query,
            liwork_q.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack {
            routine: "dsyevd",
            info,
        });
    }
    let lwork = lwork_q[0] as c_int;
    let liwork = liwork_q[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            work_a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Lapack {
            routine: "dsyevd",
            info,
        });
    }
    let vectors = Array2::from_shape_vec((n, n).f(), work_a)
        .expect("shape matches buffer")
        .as_standard_layout()
        .into_owned();
    Ok((Array1::from(w), vectors))
}

/// `alpha * B Bᵀ + beta * C`, written into `c` (full symmetric result).
pub fn syrk_rows_into(alpha: f64, b: ArrayView2<'_, f64>, beta: f64, c: &mut Array2<f64>) {
    let (n, k) = b.dim();
    assert_eq!(c.dim(), (n, n), "syrk output shape");
    if n == 0 {
        return;
    }
    if k == 0 {
        c.mapv_inplace(|v| beta * v);
        return;
    }
    let b = b.as_standard_layout();
    assert!(c.is_standard_layout());
    unsafe {
        cblas_dsyrk(
            CBLAS_LAYOUT::CblasRowMajor,
            CBLAS_UPLO::CblasLower,
            CBLAS_TRANSPOSE::CblasNoTrans,
            n as c_int,
            k as c_int,
            alpha,
            b.as_ptr(),
            k as c_int,
            beta,
            c.as_mut_ptr(),
            n as c_int,
        );
    }
    mirror_lower(c);
}

/// `B Bᵀ`.
pub fn gram_rows(b: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = b.nrows();
    let mut c = Array2::zeros((n, n));
    syrk_rows_into(1.0, b, 0.0, &mut c);
    c
}

/// `Bᵀ B`.
pub fn gram_cols(b: ArrayView2<'_, f64>) -> Array2<f64> {
    gram_rows(b.t())
}

fn mirror_lower(c: &mut Array2<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            c[[i, j]] = c[[j, i]];
        }
    }
}

/// Replaces `a` by `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

pub fn add_to_diagonal(a: &mut Array2<f64>, value: f64) {
    a.diag_mut().mapv_inplace(|d| d + value);
}

pub fn frobenius_sq(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn norm_sq(x: ArrayView1<'_, f64>) -> f64 {
    x.dot(&x)
}

/// Sum of the elementwise product of two symmetric matrices, i.e. `Tr[A B]`.
pub fn trace_of_product_sym(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn cholesky(a: Array2<f64>, context: &str) -> Result<CholeskyFactorized<ndarray::OwnedRepr<f64>>> {
    a.factorizec_into(UPLO::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("{context}: {e}")))
}

pub fn is_all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
