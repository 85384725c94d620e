//! Damped Gauss-Newton for square or rectangular residual systems with
//! possibly rank-deficient Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone)]
pub(crate) struct NewtonSettings {
    pub max_iter: usize,
    /// Converged when `‖r‖_∞ ≤ tol`.
    pub tol: f64,
    /// Step length cap relative to `max(1, ‖z‖)`.
    pub max_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub z: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Pseudo-inverse Gauss-Newton direction, discarding singular values below
/// `1e-12 σ_1`.
fn gauss_newton_direction(jac: &DMatrix<f64>, r: &DVector<f64>) -> DVector<f64> {
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    match svd.solve(r, 1e-12 * smax.max(f64::MIN_POSITIVE)) {
        Ok(d) => -d,
        Err(_) => DVector::zeros(jac.ncols()),
    }
}

fn levenberg_direction(jac: &DMatrix<f64>, r: &DVector<f64>, mu: f64) -> DVector<f64> {
    let jt = jac.transpose();
    let mut normal = &jt * jac;
    for i in 0..normal.nrows() {
        normal[(i, i)] += mu;
    }
    match normal.cholesky() {
        Some(ch) => -ch.solve(&(jt * r)),
        None => DVector::zeros(jac.ncols()),
    }
}

/// `eval` returns the residual and Jacobian, `residual` only the residual.
/// Evaluation errors at trial points count as rejected steps.
pub(crate) fn damped_newton(
    z0: DVector<f64>,
    settings: &NewtonSettings,
    mut eval: impl FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
    mut residual: impl FnMut(&DVector<f64>) -> Result<DVector<f64>>,
) -> Result<NewtonOutcome> {
    let mut z = z0;
    let (mut r, mut jac) = eval(&z)?;
    let mut norm = r.norm();
    let mut history = vec![norm];
    for iter in 0..settings.max_iter {
        // Give up on seeds that stall: less than a halving over six iterations.
        if iter >= 6 && norm > 0.5 * history[iter - 6] {
            break;
        }
        if r.amax() <= settings.tol {
            return Ok(NewtonOutcome {
                z,
                residual: r.amax(),
                iterations: iter,
                converged: true,
            });
        }
        let cap = settings.max_step * z.norm().max(1.0);
        let mut accepted = None;
        let mut d = gauss_newton_direction(&jac, &r);
        // Armijo backtracking on ‖r‖, then Levenberg-Marquardt directions.
        'search: for attempt in 0..4 {
            if attempt > 0 {
                let scale = (jac.transpose() * &jac).diagonal().amax().max(1e-12);
                d = levenberg_direction(&jac, &r, scale * 10f64.powi(2 * attempt - 5));
            }
            if d.norm() > cap {
                d *= cap / d.norm();
            }
            let mut alpha = 1.0;
            for _ in 0..if attempt == 0 { 20 } else { 6 } {
                let trial = &z + &d * alpha;
                if let Ok(rt) = residual(&trial) {
                    let nt = rt.norm();
                    if nt.is_finite() && nt <= (1.0 - 1e-4 * alpha) * norm {
                        accepted = Some(trial);
                        break 'search;
                    }
                }
                alpha *= 0.5;
            }
        }
        match accepted {
            Some(next) => {
                z = next;
                (r, jac) = eval(&z)?;
                norm = r.norm();
                history.push(norm);
            }
            None => {
                return Ok(NewtonOutcome {
                    z,
                    residual: r.amax(),
                    iterations: iter + 1,
                    converged: r.amax() <= settings.tol,
                });
            }
        }
    }
    Ok(NewtonOutcome {
        z,
        residual: r.amax(),
        iterations: history.len() - 1,
        converged: r.amax() <= settings.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn solves_nonlinear_system() {
        let f = |z: &DVector<f64>| dvector![z[0] * z[0] + z[1] * z[1] - 4.0, z[0] - z[1]];
        let j = |z: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[2.0 * z[0], 2.0 * z[1], 1.0, -1.0]);
        let s = NewtonSettings {
            max_iter: 50,
            tol: 1e-13,
            max_step: 10.0,
        };
        let out = damped_newton(dvector![3.0, 0.5], &s, |z| Ok((f(z), j(z))), |z| Ok(f(z))).unwrap();
        assert!(out.converged);
        assert!((out.z[0] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_jacobian_still_converges() {
        // A circle of solutions: r = |z|² - 1.
        let f = |z: &DVector<f64>| dvector![z.norm_squared() - 1.0];
        let j = |z: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[2.0 * z[0], 2.0 * z[1]]);
        let s = NewtonSettings {
            max_iter: 50,
            tol: 1e-13,
            max_step: 10.0,
        };
        let out = damped_newton(dvector![0.2, 0.1], &s, |z| Ok((f(z), j(z))), |z| Ok(f(z))).unwrap();
        assert!(out.converged);
    }
}
