//! Dense linear algebra used by the collaboration pipelines.
//!
//! Everything here is a pure function of its inputs and is bitwise
//! deterministic.

mod matrix;
mod svd;

pub use matrix::DenseMatrix;
pub use svd::{truncated_svd, TruncatedSvdResult};

use crate::error::{ensure, Result};

/// Singular values at or below this fraction of the largest one are treated
/// as zero by [`solve_least_squares`].
pub const PINV_RCOND: f64 = 1e-12;

/// Minimum-norm least-squares solution of `A X = B`, i.e. `X = A† B`.
pub fn solve_least_squares(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    ensure!(
        a.rows() == b.rows(),
        "solve_least_squares: A has {} rows but B has {}",
        a.rows(),
        b.rows()
    );
    let svd = svd::thin_svd(a);
    let sigma_max = svd.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = PINV_RCOND * sigma_max;

    // X = V Σ⁺ Uᵀ B
    let mut ut_b = svd.u.t_matmul(b);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        ut_b.row_mut(j).iter_mut().for_each(|x| *x *= inv);
    }
    Ok(svd.v.matmul(&ut_b))
}

/// Moore-Penrose pseudoinverse, with the same cutoff as [`solve_least_squares`].
pub fn pseudoinverse(a: &DenseMatrix) -> DenseMatrix {
    solve_least_squares(a, &DenseMatrix::identity(a.rows())).expect("square identity rhs")
}

/// Subtracts the per-column mean. Returns the centered matrix and the means.
pub fn center_columns(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    ensure!(a.rows() >= 1, "center_columns: matrix has no rows");
    let mean = a.column_means();
    Ok((a.sub_row_vector(&mean), mean))
}
