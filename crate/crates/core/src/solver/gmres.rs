//! Full (restart-free) GMRES with matrix-free operators.

use crate::error::SolverError;

/// Matrix-free linear operator.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Outcome of a solve. The residual is relative to the initial-guess
/// residual, matching the solver's stopping rule.
#[derive(Clone, Debug)]
pub struct GmresReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `A x = b` starting from `x0`, stopping when the residual has
/// dropped by `tol` relative to the initial-guess residual.
///
/// Arnoldi with modified Gram-Schmidt and Givens rotations; no restarts.
/// An exact (breakdown) Krylov space returns early with the converged
/// solution.
pub fn gmres(
    op: &dyn LinearOperator,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, GmresReport), SolverError> {
    let n = op.dim();
    if b.len() != n || x0.len() != n {
        return Err(SolverError::DimensionMismatch { op: n, rhs: b.len() });
    }
    let mut ax = vec![0.0; n];
    op.apply(x0, &mut ax);
    let mut r0 = vec![0.0; n];
    for i in 0..n {
        r0[i] = b[i] - ax[i];
    }
    let beta = norm(&r0);
    if beta == 0.0 {
        return Ok((
            x0.to_vec(),
            GmresReport { iterations: 0, residual: 0.0, converged: true },
        ));
    }

    let m = max_iter.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    basis.push(r0.iter().map(|v| v / beta).collect());
    let mut h = vec![vec![0.0f64; m]; m + 1];
    let mut cs = vec![0.0f64; m];
    let mut sn = vec![0.0f64; m];
    let mut g = vec![0.0f64; m + 1];
    g[0] = beta;

    let mut k_done = 0;
    let mut rel = 1.0;
    let mut converged = false;
    let mut w = vec![0.0; n];
    for k in 0..m {
        op.apply(&basis[k], &mut w);
        for j in 0..=k {
            let hjk = dot(&w, &basis[j]);
            h[j][k] = hjk;
            for i in 0..n {
                w[i] -= hjk * basis[j][i];
            }
        }
        let hk1 = norm(&w);
        h[k + 1][k] = hk1;
        // Apply the accumulated rotations to the new column.
        for j in 0..k {
            let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
            h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
            h[j][k] = t;
        }
        let denom = (h[k][k] * h[k][k] + hk1 * hk1).sqrt();
        if denom == 0.0 {
            k_done = k;
            break;
        }
        cs[k] = h[k][k] / denom;
        sn[k] = hk1 / denom;
        h[k][k] = denom;
        g[k + 1] = -sn[k] * g[k];
        g[k] *= cs[k];
        k_done = k + 1;
        rel = g[k + 1].abs() / beta;
        if rel <= tol {
            converged = true;
            break;
        }
        if hk1 == 0.0 {
            // Exact Krylov space: the least-squares solution is exact.
            converged = true;
            rel = 0.0;
            break;
        }
        if k + 1 < m + 1 {
            basis.push(w.iter().map(|v| v / hk1).collect());
        }
    }

    // Back-substitute the triangular system for the Krylov coefficients.
    let mut y = vec![0.0f64; k_done];
    for i in (0..k_done).rev() {
        let mut s = g[i];
        for j in (i + 1)..k_done {
            s -= h[i][j] * y[j];
        }
        y[i] = s / h[i][i];
    }
    let mut x = x0.to_vec();
    for (j, yj) in y.iter().enumerate() {
        for i in 0..n {
            x[i] += yj * basis[j][i];
        }
    }
    Ok((x, GmresReport { iterations: k_done, residual: rel, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(Vec<Vec<f64>>);
    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for (i, row) in self.0.iter().enumerate() {
                y[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = Dense(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let b = vec![3.0, -1.0, 2.0];
        let (x, rep) = gmres(&a, &b, &[0.0; 3], 1e-12, 10).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_system_is_exact_within_dimension() {
        let d = [2.0, 3.0, 5.0, 7.0, 11.0];
        let mut rows = vec![vec![0.0; 5]; 5];
        for i in 0..5 {
            rows[i][i] = d[i];
        }
        let a = Dense(rows);
        let b = vec![2.0, 6.0, 15.0, 28.0, 55.0];
        let (x, rep) = gmres(&a, &b, &[0.0; 5], 1e-14, 5).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 5);
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - (i + 1) as f64).abs() < 1e-10, "{x:?}");
        }
    }

    #[test]
    fn zero_initial_residual_returns_immediately() {
        let a = Dense(vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        let (x, rep) = gmres(&a, &[2.0, 4.0], &[1.0, 2.0], 1e-12, 10).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn nonconvergence_is_reported() {
        // An ill-conditioned system with a tight budget.
        let mut rows = vec![vec![0.0; 40]; 40];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0 + i as f64 * 1e-3;
            if i + 1 < 40 {
                row[i + 1] = 0.999;
            }
        }
        let a = Dense(rows);
        let b = vec![1.0; 40];
        let (_, rep) = gmres(&a, &b, &vec![0.0; 40], 1e-14, 3).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(rep.residual > 1e-14);
    }
}
