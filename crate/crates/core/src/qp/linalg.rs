//! Dense symmetric factorization helpers.

use nalgebra::{DMatrix, DVector};

const BLOCK: usize = 64;

/// Lower Cholesky factor `L` with `A = L Lᵀ`, computed in place over the
/// lower triangle of `a`. Returns `None` if a pivot is not positive.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> Option<()> {
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let kb = BLOCK.min(n - k);
        factor_diagonal(a, k, kb)?;
        let rest = n - k - kb;
        if rest > 0 {
            // L21 = A21 L11⁻ᵀ, row by row
            for i in k + kb..n {
                for j in k..k + kb {
                    let mut s = a[(i, j)];
                    for p in k..j {
                        s -= a[(i, p)] * a[(j, p)];
                    }
                    a[(i, j)] = s / a[(j, j)];
                }
            }
            let l21 = a.view((k + kb, k), (rest, kb)).clone_owned();
            let l21t = l21.transpose();
            let mut a22 = a.view_mut((k + kb, k + kb), (rest, rest));
            a22.gemm(-1.0, &l21, &l21t, 1.0);
        }
        k += kb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(())
}

fn factor_diagonal(a: &mut DMatrix<f64>, k: usize, kb: usize) -> Option<()> {
    for j in k..k + kb {
        let mut d = a[(j, j)];
        for p in k..j {
            d -= a[(j, p)] * a[(j, p)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..k + kb {
            let mut s = a[(i, j)];
            for p in k..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / d;
        }
    }
    Some(())
}

/// Solves `L Lᵀ x = b` in place.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[(i, p)] * b[p];
        }
        b[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= l[(p, i)] * b[p];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Factor of `a + δI` for the smallest `δ` in an increasing ladder that
/// makes the matrix numerically positive definite.
pub fn regularized_cholesky(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(1.0, f64::max);
    let mut delta = 0.0;
    for _ in 0..12 {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += delta;
        }
        if cholesky_in_place(&mut m).is_some() {
            return Some((m, delta));
        }
        delta = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
    }
    None
}

/// Whether a symmetric matrix is positive semidefinite up to a relative
/// shift of `1e-8`.
pub fn is_psd(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 {
        return true;
    }
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(1.0, f64::max);
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += 1e-8 * scale;
    }
    cholesky_in_place(&mut m).is_some()
}
