//! Minimum-norm least squares via column-pivoted QR.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    pub rank: usize,
}

/// Relative tolerance on the pivoted diagonal of R below which a column is
/// treated as dependent.
pub fn rank_tolerance(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Solve `min ||A x - b||` and, among minimizers, return the one of least
/// norm. Rank deficiency is resolved by a second QR on the leading rows of R.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LstsqSolution {
    lstsq_rcond(a, b, None)
}

/// As [`lstsq`], with an explicit relative rank cutoff `rcond` applied to
/// the pivoted diagonal of R.
pub fn lstsq_rcond(a: &DMatrix<f64>, b: &DVector<f64>, rcond: Option<f64>) -> LstsqSolution {
    let (m, n) = a.shape();
    assert_eq!(m, b.len(), "lstsq: row count mismatch");
    if n == 0 {
        return LstsqSolution {
            x: DVector::zeros(0),
            rank: 0,
        };
    }
    let qr = a.clone().col_piv_qr();
    let r_full = qr.r();
    let q = qr.q();
    let k = r_full.nrows();
    let r00 = if k > 0 { r_full[(0, 0)].abs() } else { 0.0 };
    let tol = rcond.unwrap_or_else(|| rank_tolerance(m, n)) * r00;
    let rank = (0..k).take_while(|&i| r00 > 0.0 && r_full[(i, i)].abs() > tol).count();

    let mut y = DVector::zeros(n);
    if rank > 0 {
        let c = (q.transpose() * b).rows(0, rank).into_owned();
        let r1 = r_full.rows(0, rank).into_owned();
        if rank == n {
            let sol = r1
                .solve_upper_triangular(&c)
                .expect("leading block has nonzero diagonal");
            y.copy_from(&sol);
        } else {
            // R1 y = c with R1 wide: y = Q2 w where R1^T = Q2 R2, R2^T w = c.
            let qr2 = r1.transpose().qr();
            let r2 = qr2.r();
            let w = r2
                .transpose()
                .solve_lower_triangular(&c)
                .expect("rank-revealed block is nonsingular");
            y = qr2.q() * w;
        }
    }
    qr.p().inv_permute_rows(&mut y);
    LstsqSolution { x: y, rank }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let svd = a.clone().svd(true, true);
        let pinv = svd.pseudo_inverse(1e-10).unwrap();
        pinv * b
    }

    #[test]
    fn full_rank_matches_normal_equations() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.9, 5.1, 7.0]);
        let s = lstsq(&a, &b);
        assert_eq!(s.rank, 2);
        let ata = a.transpose() * &a;
        let expected = ata.lu().solve(&(a.transpose() * &b)).unwrap();
        assert_relative_eq!(s.x, expected, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_splits_weight() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0, 3.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 5.0, 6.0]);
        let s = lstsq(&a, &b);
        assert_eq!(s.rank, 2);
        assert_relative_eq!(s.x, pinv_solve(&a, &b), epsilon = 1e-10);
        assert_relative_eq!(s.x[0], s.x[1], epsilon = 1e-12);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let a = DMatrix::zeros(5, 3);
        let b = DVector::from_element(5, 1.0);
        let s = lstsq(&a, &b);
        assert_eq!(s.rank, 0);
        assert_eq!(s.x, DVector::zeros(3));
    }

    #[test]
    fn underdetermined_is_min_norm() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![3.0, 1.0]);
        let s = lstsq(&a, &b);
        assert_relative_eq!(s.x, pinv_solve(&a, &b), epsilon = 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn matches_svd_pseudoinverse(
                rows in 3usize..12,
                cols in 1usize..6,
                dup in any::<bool>(),
                seed in proptest::collection::vec(-3.0f64..3.0, 80),
                rhs in proptest::collection::vec(-3.0f64..3.0, 12),
            ) {
                let mut a = DMatrix::from_fn(rows, cols, |i, j| seed[(i * cols + j) % seed.len()] + (i * j) as f64 * 0.01);
                if dup && cols > 1 {
                    let c0 = a.column(0).into_owned();
                    a.set_column(cols - 1, &(c0 * 2.0));
                }
                let b = DVector::from_fn(rows, |i, _| rhs[i]);
                let s = lstsq(&a, &b);
                let oracle = pinv_solve(&a, &b);
                let scale = 1.0 + oracle.norm();
                prop_assert!((s.x - oracle).norm() / scale < 1e-8);
            }
        }
    }
}
