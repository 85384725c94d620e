//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector};

/// Singular value decomposition with singular values sorted in descending
/// order. Returns `(U, sigma, V)` with `a = U diag(sigma) V^T`; `V` is square
/// (`ncols x ncols`) so the right null space is always available.
pub fn svd_full(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (r, c) = a.shape();
    // Pad wide matrices with zero rows so that V comes back square.
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |row, k| u[(row, order[k])]);
    let v_sorted = DMatrix::from_fn(vt.ncols(), order.len(), |row, k| vt[(order[k], row)]);
    let u_sorted = u_sorted.rows(0, r.min(u_sorted.nrows())).into_owned();
    (u_sorted, sigma, v_sorted)
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values strictly above `threshold`.
pub fn rank_above(sigma: &[f64], threshold: f64) -> usize {
    sigma.iter().filter(|&&s| s > threshold).count()
}

/// Orthonormal basis (as columns) of the right null space of `a`, using the
/// given absolute singular-value threshold. Columns are sign-fixed.
pub fn null_space(a: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let (_, sigma, v) = svd_full(a);
    let rank = rank_above(&sigma, threshold);
    let c = a.ncols();
    let mut basis = v.columns(rank, c - rank).into_owned();
    for mut col in basis.column_iter_mut() {
        let fixed = sign_fixed(&col.clone_owned());
        col.copy_from(&fixed);
    }
    basis
}

/// Orthonormal basis (columns) of the column range of `a` at the threshold.
pub fn range_basis(a: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let (u, sigma, _) = svd_full(a);
    let rank = rank_above(&sigma, threshold);
    u.columns(0, rank).into_owned()
}

/// Flip the sign so that the first component that is not negligible is positive.
pub fn sign_fixed(v: &DVector<f64>) -> DVector<f64> {
    let scale = v.amax();
    if scale == 0.0 {
        return v.clone();
    }
    match v.iter().find(|x| x.abs() > 1e-12 * scale) {
        Some(x) if *x < 0.0 => -v,
        _ => v.clone(),
    }
}

/// Central finite-difference step relative to the coordinate magnitude.
pub fn fd_step(x: f64, rel: f64, floor: f64) -> f64 {
    (rel * x.abs()).max(floor)
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.5]);
        let n = null_space(&a, 1e-12);
        assert_eq!(n.ncols(), 1);
        assert!((&a * &n).amax() < 1e-14);
        assert!(n.column(0).iter().find(|x| x.abs() > 1e-12).unwrap() > &0.0);
    }

    #[test]
    fn svd_full_is_sorted_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 2, &[0.1, 0.0, 0.0, 3.0, 1.0, 1.0]);
        let (u, s, v) = svd_full(&a);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let rebuilt = &u * DMatrix::from_diagonal(&DVector::from_vec(s.clone())) * v.transpose();
        assert!((rebuilt - a).amax() < 1e-12);
    }
}
