//! Small dense linear-algebra kernels used by the filters and optimizers.
//!
//! Problem sizes here are tiny (factor dimension ~5, asset universe ~25), so
//! hand-rolled Cholesky/triangular kernels on `ndarray` types are simpler and
//! more portable than linking a LAPACK backend.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Fails when a pivot is nonpositive, which is how SPD is checked throughout.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotSpd(format!("matrix is {}x{}", n, a.ncols())));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotSpd(format!("pivot {s:.3e} at index {i}")));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// True when `a` is symmetric (to `tol`) and admits a Cholesky factorization.
pub fn is_spd(a: &Array2<f64>, tol: f64) -> bool {
    let n = a.nrows();
    if a.ncols() != n {
        return false;
    }
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > tol {
                return false;
            }
        }
    }
    cholesky(a).is_ok()
}

/// Solves L x = b with L lower triangular.
pub fn solve_lower(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves Lᵀ x = b with L lower triangular.
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves A x = b for SPD A via Cholesky.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a)?;
    let y = solve_lower(&l, b);
    Ok(solve_lower_transpose(&l, &y))
}

/// Inverse of an SPD matrix via Cholesky column solves.
pub fn inv_spd(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let y = solve_lower(&l, &e);
        let x = solve_lower_transpose(&l, &y);
        inv.column_mut(j).assign(&x);
    }
    // Symmetrize against roundoff drift.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    Ok(inv)
}

/// Largest eigenvalue of an SPD matrix by power iteration.
///
/// Deterministic start vector; 200 iterations are plenty at these sizes.
pub fn largest_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return lambda;
        }
        let next = &w / norm;
        let new_lambda = next.dot(&a.dot(&next));
        if (new_lambda - lambda).abs() <= 1e-14 * new_lambda.abs().max(1.0) {
            return new_lambda;
        }
        lambda = new_lambda;
        v = next;
    }
    lambda
}

/// Euclidean projection of `v` onto the scaled simplex {x >= 0, sum(x) = total}.
pub fn project_simplex(v: &Array1<f64>, total: f64) -> Array1<f64> {
    let n = v.len();
    debug_assert!(total >= 0.0);
    if n == 0 {
        return v.clone();
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cssv = 0.0;
    let mut rho = 0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cssv += uk;
        let t = (cssv - total) / (k + 1) as f64;
        if uk - t > 0.0 {
            rho = k + 1;
            theta = t;
        }
    }
    debug_assert!(rho > 0);
    v.mapv(|x| (x - theta).max(0.0))
}
