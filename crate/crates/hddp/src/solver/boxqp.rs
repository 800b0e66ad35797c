//! Projected-Newton solver for the box-constrained quadratic subproblem
//! `min ½ xᵀHx + qᵀx  s.t.  lower ≤ x ≤ upper` of the backward pass.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone)]
pub struct BoxQpResult {
    pub x: DVector<f64>,
    /// Per-coordinate free (true) / clamped (false) split at the solution.
    pub free: Vec<bool>,
    /// Cholesky factor of the free-block Hessian, in free-index order.
    pub free_hessian: Option<Cholesky<f64, Dyn>>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BoxQpError {
    #[error("free-block Hessian is not positive definite")]
    NotPositiveDefinite,
}

pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_TOL: f64 = 1e-9;

fn objective(h: &DMatrix<f64>, q: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * (x.transpose() * h * x)[(0, 0)] + q.dot(x)
}

fn clamp(x: &mut DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].max(lower[i]).min(upper[i]);
    }
}

/// Solves the box QP by projected Newton with Cholesky factorizations on the
/// free block. `x0` is clamped into the box and used as the starting point.
pub fn solve_boxqp(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    x0: &DVector<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<BoxQpResult, BoxQpError> {
    let n = q.len();
    debug_assert!(h.nrows() == n && h.ncols() == n);
    debug_assert!(lower.len() == n && upper.len() == n);
    let mut x = x0.clone();
    clamp(&mut x, lower, upper);
    let mut free = vec![true; n];
    let mut factor = None;
    let mut value = objective(h, q, &x);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let g = q + h * &x;
        for i in 0..n {
            free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));
        }
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let g_inf = idx.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if g_inf < tol || idx.is_empty() {
            converged = true;
            // Refresh the factor for the final free set so gain computation
            // sees a consistent split.
            factor = if idx.is_empty() {
                None
            } else {
                Some(
                    Cholesky::new(h.select_rows(&idx).select_columns(&idx))
                        .ok_or(BoxQpError::NotPositiveDefinite)?,
                )
            };
            break;
        }
        let hff = h.select_rows(&idx).select_columns(&idx);
        let chol = Cholesky::new(hff).ok_or(BoxQpError::NotPositiveDefinite)?;
        let gf = DVector::from_iterator(idx.len(), idx.iter().map(|&i| g[i]));
        let step_f = -chol.solve(&gf);
        factor = Some(chol);
        let mut step = DVector::zeros(n);
        for (kf, &i) in idx.iter().enumerate() {
            step[i] = step_f[kf];
        }
        // Backtracking over the projected step, accepting simple decrease.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut cand = &x + alpha * &step;
            clamp(&mut cand, lower, upper);
            let cand_value = objective(h, q, &cand);
            if cand_value < value - 1e-16 {
                x = cand;
                value = cand_value;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    Ok(BoxQpResult {
        x,
        free,
        free_hessian: factor,
        iterations,
        converged,
    })
}
