//! Thin singular value decomposition.
//!
//! Tall inputs are first reduced with a Householder QR, then the square
//! triangular factor is diagonalized by one-sided (Hestenes) Jacobi
//! rotations. Wide inputs are handled through their transpose. Jacobi is
//! slower than Golub-Kahan but gives small singular values to high relative
//! accuracy, which matters because the DC alignment chains an SVD, a
//! pseudoinverse and another SVD.

use super::DenseMatrix;
use crate::error::{ensure, Result};

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 100;
/// Entries below this magnitude are skipped when choosing the sign of a
/// right singular vector.
const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvdResult {
    /// `n × k`, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-negative, non-increasing.
    pub singular_values: Vec<f64>,
    /// `m × k`, orthonormal columns.
    pub v: DenseMatrix,
}

impl TruncatedSvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `u · diag(σ) · vᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.singular_values) {
                *x *= s;
            }
        }
        us.matmul(&self.v.transpose())
    }
}

/// Top-`k` singular triplets of `a`.
///
/// Columns of `v` are signed so that their first entry with magnitude above
/// 1e-12 is positive, and `u` is flipped along with them.
pub fn truncated_svd(a: &DenseMatrix, k: usize) -> Result<TruncatedSvdResult> {
    let p = a.rows().min(a.cols());
    ensure!(
        k >= 1 && k <= p,
        "truncated_svd: k={} must lie in 1..={} for a {}x{} matrix",
        k,
        p,
        a.rows(),
        a.cols()
    );
    ensure!(a.is_finite(), "truncated_svd: input has non-finite entries");
    let full = thin_svd(a);
    Ok(TruncatedSvdResult {
        u: full.u.select_columns(0..k),
        singular_values: full.singular_values[..k].to_vec(),
        v: full.v.select_columns(0..k),
    })
}

/// Full thin SVD with `min(rows, cols)` triplets. Empty inputs give empty factors.
pub(crate) fn thin_svd(a: &DenseMatrix) -> TruncatedSvdResult {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return TruncatedSvdResult {
            u: DenseMatrix::zeros(n, 0),
            singular_values: Vec::new(),
            v: DenseMatrix::zeros(m, 0),
        };
    }
    let (mut u, s, mut v) = if n >= m {
        tall_svd(a)
    } else {
        let (u, s, v) = tall_svd(&a.transpose());
        (v, s, u)
    };
    for j in 0..s.len() {
        let flip = (0..v.rows())
            .map(|i| v[(i, j)])
            .find(|x| x.abs() > SIGN_EPS)
            .is_some_and(|x| x < 0.0);
        if flip {
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
    TruncatedSvdResult {
        u,
        singular_values: s,
        v,
    }
}

/// SVD of an `n × m` matrix with `n ≥ m`, returned as `(u: n×m, σ, v: m×m)`.
fn tall_svd(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let (n, m) = a.shape();
    let (reflectors, r) = householder_qr(a);

    // one-sided Jacobi on the columns of R
    let mut w: Vec<Vec<f64>> = (0..m).map(|j| r.column(j)).collect();
    let mut vc: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..m {
            for q in (p + 1)..m {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut vc, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    // stable sort keeps ties in column order, which keeps the result deterministic
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);

    // left vectors in the m-dimensional R space, completed to an orthonormal set
    let mut ur: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (rank, &j) in order.iter().enumerate() {
        let usable = sigma[rank] > 0.0 && sigma[rank] > sigma_max * f64::EPSILON;
        let mut col = if usable {
            w[j].iter().map(|x| x / sigma[rank]).collect()
        } else {
            vec![0.0; m]
        };
        orthogonalize(&mut col, &ur);
        let norm = dot(&col, &col).sqrt();
        if usable && norm > 0.5 {
            col.iter_mut().for_each(|x| *x /= norm);
        } else {
            col = completion_vector(&ur, m);
        }
        ur.push(col);
    }

    let mut u = DenseMatrix::zeros(n, m);
    for (j, col) in ur.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            u[(i, j)] = x;
        }
    }
    apply_reflectors(&reflectors, &mut u);

    let mut v = DenseMatrix::zeros(m, m);
    for (jj, &j) in order.iter().enumerate() {
        for i in 0..m {
            v[(i, jj)] = vc[j][i];
        }
    }
    (u, sigma, v)
}

/// Householder reflector acting on rows `start..n`.
struct Reflector {
    start: usize,
    v: Vec<f64>,
}

/// Returns the reflectors and the `m × m` upper-triangular factor.
fn householder_qr(a: &DenseMatrix) -> (Vec<Reflector>, DenseMatrix) {
    let (n, m) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..m).map(|j| a.column(j)).collect();
    let mut reflectors = Vec::with_capacity(m);
    for k in 0..m {
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            reflectors.push(Reflector {
                start: k,
                v: Vec::new(),
            });
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm == 0.0 {
            reflectors.push(Reflector {
                start: k,
                v: Vec::new(),
            });
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vnorm);
        for col in cols.iter_mut().skip(k) {
            reflect(&v, &mut col[k..]);
        }
        reflectors.push(Reflector { start: k, v });
    }
    let mut r = DenseMatrix::zeros(m, m);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..=j.min(n - 1) {
            r[(i, j)] = col[i];
        }
    }
    (reflectors, r)
}

/// Overwrites `target` (whose top `m` rows hold a matrix in R-space, rest
/// zero) with `Q · target`.
fn apply_reflectors(reflectors: &[Reflector], target: &mut DenseMatrix) {
    let cols = target.cols();
    for refl in reflectors.iter().rev() {
        if refl.v.is_empty() {
            continue;
        }
        for j in 0..cols {
            let mut d = 0.0;
            for (t, &vi) in refl.v.iter().enumerate() {
                d += vi * target[(refl.start + t, j)];
            }
            if d == 0.0 {
                continue;
            }
            for (t, &vi) in refl.v.iter().enumerate() {
                target[(refl.start + t, j)] -= 2.0 * d * vi;
            }
        }
    }
}

#[inline]
fn reflect(v: &[f64], x: &mut [f64]) {
    let d = 2.0 * dot(v, x);
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= d * vi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Two passes of modified Gram-Schmidt against `basis`.
fn orthogonalize(col: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let d = dot(col, b);
            for (x, y) in col.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
    }
}

/// Standard basis vector with the largest component orthogonal to `basis`,
/// normalized. Some `e_j` always keeps at least `sqrt((dim - len) / dim)`.
fn completion_vector(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    assert!(basis.len() < dim, "basis of size {} already spans R^{}", basis.len(), dim);
    let mut best = (0.0, Vec::new());
    for e in 0..dim {
        let mut col = vec![0.0; dim];
        col[e] = 1.0;
        orthogonalize(&mut col, basis);
        let norm = dot(&col, &col).sqrt();
        if norm > best.0 {
            best = (norm, col);
        }
    }
    let (norm, mut col) = best;
    col.iter_mut().for_each(|x| *x /= norm);
    col
}
