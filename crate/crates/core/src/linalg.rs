//! Small dense-free solvers used by the implicit steps and the Poisson solve.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("zero pivot at row {0} in tridiagonal solve")]
    ZeroPivot(usize),
    #[error("conjugate gradient stalled at relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Thomas algorithm for `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
///
/// `sub[0]` and `sup[n-1]` are ignored. No pivoting; callers pass diagonally
/// dominant systems.
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
    let n = diag.len();
    debug_assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    if diag[0] == 0.0 {
        return Err(SolveError::ZeroPivot(0));
    }
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - sub[i] * c[i - 1];
        if den == 0.0 {
            return Err(SolveError::ZeroPivot(i));
        }
        c[i] = if i + 1 < n { sup[i] / den } else { 0.0 };
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Solves `vol_i (1 + decay) x_i - coeff * sum_faces T (x_nb - x_i) = vol_i f_i`
/// along one line of cells, where `trans[k]` couples cells `k` and `k + 1`.
pub fn implicit_line(
    vols: &[f64],
    trans: &[f64],
    coeff: f64,
    decay: f64,
    f: &[f64],
) -> Result<Vec<f64>, SolveError> {
    let n = vols.len();
    debug_assert_eq!(trans.len() + 1, n);
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut diag: Vec<f64> = vols.iter().map(|v| v * (1.0 + decay)).collect();
    for (k, &t) in trans.iter().enumerate() {
        let a = coeff * t;
        diag[k] += a;
        diag[k + 1] += a;
        sup[k] = -a;
        sub[k + 1] = -a;
    }
    let rhs: Vec<f64> = vols.iter().zip(f).map(|(v, x)| v * x).collect();
    thomas(&sub, &diag, &sup, &rhs)
}

/// Neumann Poisson problem `sum_faces T (x_nb - x_i) = b_i` on a line of
/// cells; `b` must sum to zero. Returns a solution with `x[0] = 0`.
pub fn neumann_poisson_line(trans: &[f64], b: &[f64]) -> Result<Vec<f64>, SolveError> {
    let n = b.len();
    debug_assert_eq!(trans.len() + 1, n);
    // Pin x[0] = 0 by replacing the first row; the remaining rows form a
    // nonsingular system since one end is now Dirichlet.
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for (k, &t) in trans.iter().enumerate() {
        diag[k] -= t;
        diag[k + 1] -= t;
        sup[k] = t;
        sub[k + 1] = t;
    }
    let mut rhs = b.to_vec();
    diag[0] = 1.0;
    sup[0] = 0.0;
    rhs[0] = 0.0;
    thomas(&sub, &diag, &sup, &rhs)
}

/// Conjugate gradient for a symmetric positive semidefinite operator whose
/// kernel is the constants. Iterates are kept in the zero-sum subspace.
pub fn projected_cg(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    let n = b.len();
    let project = |x: &mut [f64]| {
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut r = b.to_vec();
    project(&mut r);
    let b_norm = dot(&r, &r).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= rel_tol * b_norm {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SolveError::NotConverged {
                iterations: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project(&mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rr.sqrt() <= rel_tol * b_norm {
        return Ok(x);
    }
    Err(SolveError::NotConverged {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}
