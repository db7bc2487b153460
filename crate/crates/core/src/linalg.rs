//! Dense symmetric eigendecomposition (cyclic Jacobi) and summation helpers.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a real symmetric matrix.
///
/// `values[i]` is paired with the unit-norm column `vectors.column(i)`;
/// pairs are sorted by ascending eigenvalue. Ties keep the order in which
/// the Jacobi iteration produced them, which is deterministic for a fixed
/// input matrix.
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Rotations are applied in row-cyclic sweeps until the off-diagonal mass
/// drops below a tolerance relative to the Frobenius norm of the input.
/// Foolproof on symmetric input and cubic in the matrix size, which is
/// acceptable at the few-hundred-node scale this crate targets.
pub fn sym_eigen(matrix: &Array2<f64>) -> Result<SymEigen> {
    let n = check_square(matrix)?;
    check_symmetric(matrix)?;

    if n == 0 {
        return Ok(SymEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }

    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);

    let scale: f64 = matrix.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-14 * scale;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = off_diagonal_abs_sum(&a);
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                let (c, s) = rotation(a[[p, p]], a[[q, q]], apq);
                apply_rotation(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if !converged && off_diagonal_abs_sum(&a) > tol {
        return Err(Error::EigenNoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].partial_cmp(&a[[j, j]]).unwrap());

    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[[src, src]];
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymEigen { values, vectors })
}

fn rotation(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let theta = 0.5 * (aqq - app) / apq;
    let t = if theta.abs() > 1e150 {
        // numerically the limit 1 / (2 theta)
        0.5 / theta
    } else {
        let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
        sign / (theta.abs() + (1.0 + theta * theta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, t * c)
}

fn apply_rotation(a: &mut Array2<f64>, v: &mut Array2<f64>, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[[k, p]];
        let akq = a[[k, q]];
        a[[k, p]] = c * akp - s * akq;
        a[[k, q]] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[[p, k]];
        let aqk = a[[q, k]];
        a[[p, k]] = c * apk - s * aqk;
        a[[q, k]] = s * apk + c * aqk;
    }
    for k in 0..n {
        let vkp = v[[k, p]];
        let vkq = v[[k, q]];
        v[[k, p]] = c * vkp - s * vkq;
        v[[k, q]] = s * vkp + c * vkq;
    }
}

fn off_diagonal_abs_sum(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n - 1 {
        for j in i + 1..n {
            sum += a[[i, j]].abs();
        }
    }
    sum
}

pub(crate) fn check_square(m: &Array2<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub(crate) fn check_symmetric(m: &Array2<f64>) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let d = (m[[i, j]] - m[[j, i]]).abs();
            let scale = m[[i, j]].abs().max(m[[j, i]].abs()).max(1.0);
            if d > 1e-9 * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    m[[i, j]],
                    m[[j, i]]
                )));
            }
        }
    }
    Ok(())
}

/// Pairwise (cascade) sum; error grows with log(n) instead of n.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Pairwise sum over a (possibly strided) ndarray view.
pub fn pairwise_sum_view(xs: ArrayView1<'_, f64>) -> f64 {
    let n = xs.len();
    match n {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        _ => {
            let (a, b) = xs.split_at(ndarray::Axis(0), n / 2);
            pairwise_sum_view(a) + pairwise_sum_view(b)
        }
    }
}
