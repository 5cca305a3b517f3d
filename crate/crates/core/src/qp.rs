//! Dense convex quadratic programs
//!
//! ```text
//! minimize    ½ xᵀ H x + cᵀ x
//! subject to  G x ≥ b
//! ```
//!
//! with `H` symmetric positive definite, solved by the dual active-set method
//! of Goldfarb and Idnani. The problem is first reduced to a unit Hessian
//! through the Cholesky factor of `H`; active-set Gram systems are solved by
//! LU factorization on every iteration, which is cheap at the sizes used here
//! (a handful of variables and a few dozen rows).

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Constraint violations below this count as satisfied.
pub const FEAS_TOL: f64 = 1e-10;

const MAX_ITER_FACTOR: usize = 20;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible (row {0} cannot be satisfied)")]
    Infeasible(usize),
    #[error("active-set iteration limit reached")]
    NonConvergence,
    #[error("dimension mismatch")]
    Dimension,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `G`; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Solves the problem above. `g` has one row per constraint.
pub fn solve(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    let m = g.nrows();
    if h.ncols() != n || c.len() != n || g.ncols() != n || b.len() != m {
        return Err(QpError::Dimension);
    }
    let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();
    // x = L⁻ᵀ y − H⁻¹ c turns the objective into ½‖y‖² + const.
    let x_shift = chol.solve(c);
    let l_t = l.transpose();
    let l_inv_t = l_t
        .clone()
        .try_inverse()
        .ok_or(QpError::NotPositiveDefinite)?;
    // Rows become nᵢ = L⁻¹ gᵢ and right sides bᵢ + gᵢ·H⁻¹c.
    let normals = g * &l_inv_t;
    let rhs = b + g * &x_shift;
    let (y, lambda, iterations) = unit_hessian(&normals, &rhs)?;
    let x = &l_inv_t * y - x_shift;
    let objective = 0.5 * (x.transpose() * h * &x)[(0, 0)] + c.dot(&x);
    Ok(QpSolution {
        x,
        multipliers: lambda,
        objective,
        iterations,
    })
}

/// Minimizes ½‖y‖² subject to `N y ≥ r`.
fn unit_hessian(
    normals: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, usize), QpError> {
    let n = normals.ncols();
    let m = normals.nrows();
    let mut y = DVector::zeros(n);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda_active: Vec<f64> = Vec::new();
    let row = |i: usize| normals.row(i).transpose();
    let slack = |y: &DVector<f64>, i: usize| normals.row(i).dot(&y.transpose()) - rhs[i];
    let scale: Vec<f64> = (0..m).map(|i| normals.row(i).norm().max(1e-300)).collect();
    let max_iter = MAX_ITER_FACTOR * (m + n + 1);
    let mut iterations = 0;

    loop {
        // Most violated row, measured in distance units.
        let mut p = None;
        let mut worst = -FEAS_TOL;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&y, i) / scale[i];
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else { break };
        let np = row(p);
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::NonConvergence);
            }
            // r = (AᵀA)⁻¹ Aᵀ nₚ and z = nₚ − A r, the component of nₚ
            // orthogonal to the active normals.
            let (z, r) = if active.is_empty() {
                (np.clone(), DVector::zeros(0))
            } else {
                let a = DMatrix::from_columns(&active.iter().map(|&i| row(i)).collect::<Vec<_>>());
                let gram = a.transpose() * &a;
                let r = gram
                    .lu()
                    .solve(&(a.transpose() * &np))
                    .ok_or(QpError::NonConvergence)?;
                (&np - &a * &r, r)
            };
            // Largest dual step keeping active multipliers nonnegative.
            let mut t_dual = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 1e-14 {
                    let t = lambda_active[j] / rj;
                    if t < t_dual {
                        t_dual = t;
                        drop = Some(j);
                    }
                }
            }
            let zz = z.dot(&np);
            let t_primal = if z.norm() > 1e-12 * np.norm() && zz > 0.0 {
                -slack(&y, p) / zz
            } else {
                f64::INFINITY
            };
            let t = t_dual.min(t_primal);
            if !t.is_finite() {
                return Err(QpError::Infeasible(p));
            }
            if t_primal.is_finite() {
                y += t * &z;
            }
            for (j, &rj) in r.iter().enumerate() {
                lambda_active[j] -= t * rj;
            }
            lambda_p += t;
            if t_primal <= t_dual {
                active.push(p);
                lambda_active.push(lambda_p);
                break;
            }
            let j = drop.expect("finite dual step has a blocking row");
            active.remove(j);
            lambda_active.remove(j);
        }
    }

    let mut lambda = DVector::zeros(m);
    for (&i, &l) in active.iter().zip(&lambda_active) {
        lambda[i] = l.max(0.0);
    }
    Ok((y, lambda, iterations))
}

/// Largest violation of the first-order optimality conditions: stationarity,
/// primal feasibility, dual feasibility and complementary slackness.
pub fn kkt_residual(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> f64 {
    let stationarity = (h * x + c - g.transpose() * lambda).amax();
    let slack = g * x - b;
    let mut worst = stationarity;
    for i in 0..slack.len() {
        worst = worst
            .max(-slack[i])
            .max(-lambda[i])
            .max((lambda[i] * slack[i]).abs());
    }
    worst
}
