//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Every rank and null-space decision goes through [`RANK_TOL`]: a singular
//! value counts as zero when it is below `RANK_TOL * sigma_max`.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value threshold for rank and null-space decisions.
pub const RANK_TOL: f64 = 1e-10;

fn padded_svd(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    // Pad with zero rows so V^T is square even for wide inputs.
    let (rows, cols) = a.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    (svd.singular_values, u, v_t)
}

fn sigma_cut(sv: &DVector<f64>) -> f64 {
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    RANK_TOL * smax
}

/// Numerical rank under [`RANK_TOL`].
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= RANK_TOL * smax).count()
}

/// Orthonormal basis of the null space of `a`, one basis vector per column.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols();
    if a.nrows() == 0 || cols == 0 {
        return DMatrix::identity(cols, cols);
    }
    let (sv, _, v_t) = padded_svd(a);
    let cut = sigma_cut(&sv);
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let null_rows: Vec<usize> = (0..v_t.nrows())
        .filter(|&i| smax == 0.0 || sv[i] < cut)
        .collect();
    let mut basis = DMatrix::zeros(cols, null_rows.len());
    for (k, &i) in null_rows.iter().enumerate() {
        basis.set_column(k, &v_t.row(i).transpose());
    }
    basis
}

/// Minimum-norm least-squares solution of `a x = b` via truncated SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let cols = a.ncols();
    if cols == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(cols);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let cut = sigma_cut(&svd.singular_values);
    let mut x = DVector::zeros(cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > 0.0 && s >= cut {
            let coef = u.column(i).dot(b) / s;
            x += v_t.row(i).transpose() * coef;
        }
    }
    x
}

/// Largest singular value of `a` by power iteration on `a^T a`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start with all components present.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..1000 {
        let w = a.transpose() * (a * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm.sqrt();
        v = w / norm;
        if (next - est).abs() <= 1e-13 * next {
            est = next;
            break;
        }
        est = next;
    }
    est
}

pub fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `a` restricted to the given columns.
pub fn select_columns(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, k| a[(i, cols[k])])
}

/// `a` restricted to the given rows and columns.
pub fn submatrix(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, k| a[(rows[i], cols[k])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_full_rank_square_is_empty() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        assert_eq!(null_space(&a).ncols(), 0);
    }

    #[test]
    fn least_squares_consistent_system() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x0 = DVector::from_vec(vec![0.5, -2.0]);
        let b = &a * &x0;
        assert!((least_squares(&a, &b) - x0).norm() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let svd_max = a.clone().singular_values().max();
        assert!((spectral_norm(&a) - svd_max).abs() < 1e-9);
    }

    #[test]
    fn rank_detects_dependent_rows() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        assert_eq!(rank(&a), 2);
    }
}
