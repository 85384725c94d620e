//! Direct minimization of the discretized action over piecewise-constant
//! horizontal controls, subject to the endpoint constraint. Used as an
//! independent oracle for the shooting solvers.
//!
//! The constraint is handled by an augmented Lagrangian; each inner step is
//! Gauss-Newton on the augmented function with the exact derivative of the
//! discrete endpoint map, solved through the Woodbury identity.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::submanifold::SubmanifoldSpec;
use crate::endpoint::{uniform_grid, ControlCurve};
use crate::error::{Error, Result};
use crate::model::ChartModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectOptions {
    /// Number of control intervals `N`.
    pub intervals: usize,
    /// RK4 substeps per interval.
    pub substeps: usize,
    /// Multistart count (the first start is deterministic).
    pub starts: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Endpoint constraint tolerance (max norm).
    pub tol: f64,
    /// Highest Fourier mode in random initial controls.
    pub harmonics: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        DirectOptions {
            intervals: 256,
            substeps: 2,
            starts: 6,
            seed: 0,
            max_outer: 40,
            max_inner: 25,
            tol: 1e-10,
            harmonics: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirectResult {
    pub controls: ControlCurve,
    pub action: f64,
    pub length: f64,
    pub endpoint_residual: f64,
    pub converged: bool,
    /// `-Φ_bᵀ ν` from the constraint multiplier: the covector a normal
    /// geodesic through this minimizer would start with.
    pub p0_estimate: DVector<f64>,
}

/// `(∂q_end/∂q_start, ∂q_end/∂u)` over one interval.
type Sensitivity = (DMatrix<f64>, DMatrix<f64>);

struct Problem<'a> {
    model: &'a ChartModel,
    target: &'a DVector<f64>,
    start_set: Option<&'a SubmanifoldSpec>,
    span: (f64, f64),
    intervals: usize,
    substeps: usize,
}

/// Discrete endpoint and its derivatives.
struct Forward {
    end: DVector<f64>,
    /// `∂q_N/∂u_j`, one `n × m` block per interval.
    du: Vec<DMatrix<f64>>,
    /// `∂q_N/∂q_0`.
    dq0: DMatrix<f64>,
}

impl Problem<'_> {
    fn dt(&self) -> f64 {
        (self.span.1 - self.span.0) / self.intervals as f64
    }

    fn step_rhs(&self, u: &[f64], y: &[f64], dy: &mut [f64], sensitivities: bool) {
        let (n, m) = (self.model.dim(), self.model.rank());
        let q = &y[..n];
        let f = self.model.frame_at(q);
        for j in 0..n {
            dy[j] = (0..m).map(|i| f[(j, i)] * u[i]).sum();
        }
        if !sensitivities {
            return;
        }
        let jac = self.model.jacobians_at(q);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..m {
            if u[i] != 0.0 {
                a += &jac[i] * u[i];
            }
        }
        let t = DMatrix::from_column_slice(n, n, &y[n..n + n * n]);
        let b = DMatrix::from_column_slice(n, m, &y[n + n * n..]);
        let dt = &a * t;
        let db = &a * b + f.columns(0, m);
        dy[n..n + n * n].copy_from_slice(dt.as_slice());
        dy[n + n * n..].copy_from_slice(db.as_slice());
    }

    /// One interval: returns the new state and, optionally, `(T_j, B_j)`.
    fn interval(&self, q: &[f64], u: &[f64], sensitivities: bool) -> Result<(Vec<f64>, Option<Sensitivity>)> {
        let (n, m) = (self.model.dim(), self.model.rank());
        let size = if sensitivities { n + n * n + n * m } else { n };
        let mut y = vec![0.0; size];
        y[..n].copy_from_slice(q);
        if sensitivities {
            for i in 0..n {
                y[n + i * n + i] = 1.0;
            }
        }
        let h = self.dt() / self.substeps as f64;
        let mut k = [vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]];
        let mut tmp = vec![0.0; size];
        for _ in 0..self.substeps {
            self.step_rhs(u, &y, &mut k[0], sensitivities);
            for i in 0..size {
                tmp[i] = y[i] + 0.5 * h * k[0][i];
            }
            self.step_rhs(u, &tmp, &mut k[1], sensitivities);
            for i in 0..size {
                tmp[i] = y[i] + 0.5 * h * k[1][i];
            }
            self.step_rhs(u, &tmp, &mut k[2], sensitivities);
            for i in 0..size {
                tmp[i] = y[i] + h * k[2][i];
            }
            self.step_rhs(u, &tmp, &mut k[3], sensitivities);
            for i in 0..size {
                y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            if !self.model.contains(&y[..n]) {
                return Err(Error::OutOfChart {
                    point: y[..n].to_vec(),
                    time: None,
                    partial: None,
                });
            }
        }
        let sens = sensitivities.then(|| {
            (
                DMatrix::from_column_slice(n, n, &y[n..n + n * n]),
                DMatrix::from_column_slice(n, m, &y[n + n * n..]),
            )
        });
        y.truncate(n);
        Ok((y, sens))
    }

    fn endpoint(&self, q0: &[f64], u: &[DVector<f64>]) -> Result<DVector<f64>> {
        let mut q = q0.to_vec();
        for uj in u {
            q = self.interval(&q, uj.as_slice(), false)?.0;
        }
        Ok(DVector::from_vec(q))
    }

    fn forward(&self, q0: &[f64], u: &[DVector<f64>]) -> Result<Forward> {
        let n = self.model.dim();
        let mut q = q0.to_vec();
        let mut ts = Vec::with_capacity(u.len());
        let mut bs = Vec::with_capacity(u.len());
        for uj in u {
            let (next, sens) = self.interval(&q, uj.as_slice(), true)?;
            let (t, b) = sens.expect("requested sensitivities");
            ts.push(t);
            bs.push(b);
            q = next;
        }
        // Accumulate transition products from the end backwards.
        let mut prod = DMatrix::identity(n, n);
        let mut du = vec![DMatrix::zeros(0, 0); u.len()];
        for j in (0..u.len()).rev() {
            du[j] = &prod * &bs[j];
            prod = &prod * &ts[j];
        }
        Ok(Forward {
            end: DVector::from_vec(q),
            du,
            dq0: prod,
        })
    }

    fn constraint(&self, q0: &DVector<f64>, end: &DVector<f64>) -> DVector<f64> {
        let mut c: Vec<f64> = (end - self.target).iter().copied().collect();
        if let Some(set) = self.start_set {
            c.extend(set.value(q0.as_slice()).iter());
        }
        DVector::from_vec(c)
    }

    fn energy(&self, u: &[DVector<f64>]) -> f64 {
        0.5 * self.dt() * u.iter().map(|v| v.norm_squared()).sum::<f64>()
    }
}

/// State of one augmented-Lagrangian run.
struct Iterate {
    q0: DVector<f64>,
    u: Vec<DVector<f64>>,
}

struct Candidate {
    q0: DVector<f64>,
    u: Vec<DVector<f64>>,
    action: f64,
    residual: f64,
    converged: bool,
    p0: DVector<f64>,
}

fn solve(problem: &Problem<'_>, init: Iterate, opts: &DirectOptions) -> Result<Candidate> {
    let (n, m) = (problem.model.dim(), problem.model.rank());
    let nu_len = n + problem.start_set.map_or(0, |s| s.codim());
    let free = problem.start_set.is_some();
    let dt = problem.dt();
    let rho = dt;
    let mut x = init;
    let mut nu = DVector::zeros(nu_len);
    let mut mu = 10.0;
    let mut prev_violation = f64::INFINITY;
    let mut fwd = problem.forward(x.q0.as_slice(), &x.u)?;
    let mut c = problem.constraint(&x.q0, &fwd.end);
    let mut converged = false;
    let mut stationarity = f64::INFINITY;

    for _ in 0..opts.max_outer {
        for _ in 0..opts.max_inner {
            // Constraint Jacobian columns: controls, then the free start point.
            let cols = m * x.u.len() + if free { n } else { 0 };
            let mut jac = DMatrix::zeros(nu_len, cols);
            for (j, block) in fwd.du.iter().enumerate() {
                jac.view_mut((0, j * m), (n, m)).copy_from(block);
            }
            let mut diag = DVector::from_element(cols, dt);
            if let Some(set) = problem.start_set {
                let off = m * x.u.len();
                jac.view_mut((0, off), (n, n)).copy_from(&fwd.dq0);
                jac.view_mut((n, off), (nu_len - n, n)).copy_from(&set.jacobian(x.q0.as_slice()));
                diag.rows_mut(off, n).fill(rho);
            }
            let mut grad = jac.transpose() * (&nu + &c * mu);
            for (j, uj) in x.u.iter().enumerate() {
                for i in 0..m {
                    grad[j * m + i] += dt * uj[i];
                }
            }
            let gnorm = grad.amax();
            stationarity = gnorm / dt;
            // Woodbury: (D + μJᵀJ)⁻¹ = D⁻¹ - D⁻¹Jᵀ(I/μ + J D⁻¹ Jᵀ)⁻¹ J D⁻¹.
            let dinv = diag.map(|v| 1.0 / v);
            let dg = grad.component_mul(&dinv);
            let jd = DMatrix::from_fn(nu_len, cols, |r, k| jac[(r, k)] * dinv[k]);
            let mut small = &jd * jac.transpose();
            for i in 0..nu_len {
                small[(i, i)] += 1.0 / mu;
            }
            let Some(chol) = small.cholesky() else {
                break;
            };
            let corr = jd.transpose() * chol.solve(&(&jac * &dg));
            let step = -(dg - corr);

            let merit = |e: f64, c: &DVector<f64>| e + nu.dot(c) + 0.5 * mu * c.norm_squared();
            let current = merit(problem.energy(&x.u), &c);
            let slope = grad.dot(&step);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let u_trial: Vec<DVector<f64>> = x.u.iter().enumerate().map(|(j, uj)| uj + step.rows(j * m, m) * alpha).collect();
                let q_trial = if free { &x.q0 + step.rows(m * x.u.len(), n) * alpha } else { x.q0.clone() };
                if let Ok(end) = problem.endpoint(q_trial.as_slice(), &u_trial) {
                    let c_trial = problem.constraint(&q_trial, &end);
                    let prox = if free { 0.5 * rho * (&q_trial - &x.q0).norm_squared() } else { 0.0 };
                    let value = merit(problem.energy(&u_trial), &c_trial) + prox;
                    if value <= current + 1e-4 * alpha * slope {
                        x = Iterate { q0: q_trial, u: u_trial };
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            fwd = problem.forward(x.q0.as_slice(), &x.u)?;
            c = problem.constraint(&x.q0, &fwd.end);
            if gnorm < 1e-13 || (alpha == 1.0 && step.amax() < 1e-13) {
                break;
            }
        }
        let violation = c.amax();
        nu += &c * mu;
        if violation <= opts.tol && stationarity <= 1e-6 {
            converged = true;
            break;
        }
        if violation > 0.25 * prev_violation {
            mu = (mu * 10.0).min(1e12);
        }
        prev_violation = violation;
    }
    let residual = (&fwd.end - problem.target).amax().max(c.amax());
    let p0 = -(fwd.dq0.transpose() * nu.rows(0, n));
    Ok(Candidate {
        action: problem.energy(&x.u),
        q0: x.q0,
        u: x.u,
        residual,
        converged,
        p0,
    })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let v: f64 = rng.random::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Start 0 is the constant control best matching the displacement; the
/// rest are random low-frequency Fourier series.
fn initial_controls(model: &ChartModel, q0: &DVector<f64>, q1: &DVector<f64>, span: (f64, f64), opts: &DirectOptions) -> Vec<Vec<DVector<f64>>> {
    let m = model.rank();
    let n_int = opts.intervals;
    let duration = span.1 - span.0;
    let mut out = Vec::with_capacity(opts.starts);
    let horizontal = model.horizontal_at(q0.as_slice());
    let straight = horizontal
        .pseudo_inverse(1e-12)
        .map(|pinv| pinv * (q1 - q0) / duration)
        .unwrap_or_else(|_| DVector::zeros(m));
    out.push(vec![straight; n_int]);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let grid = uniform_grid((0.0, 1.0), n_int);
    for _ in 1..opts.starts {
        let coeffs: Vec<(f64, f64)> = (0..m * (opts.harmonics + 1)).map(|_| (gaussian(&mut rng), gaussian(&mut rng))).collect();
        let controls = grid
            .windows(2)
            .map(|w| {
                let s = 0.5 * (w[0] + w[1]);
                DVector::from_fn(m, |i, _| {
                    (0..=opts.harmonics)
                        .map(|k| {
                            let (a, b) = coeffs[i * (opts.harmonics + 1) + k];
                            let phase = 2.0 * std::f64::consts::PI * k as f64 * s;
                            (a * phase.cos() + b * phase.sin()) / (k as f64 + 1.0)
                        })
                        .sum::<f64>()
                        / duration
                })
            })
            .collect();
        out.push(controls);
    }
    out
}

fn run(problem: &Problem<'_>, q_init: &DVector<f64>, opts: &DirectOptions) -> Result<DirectResult> {
    let starts = initial_controls(problem.model, q_init, problem.target, problem.span, opts);
    let candidates: Vec<Option<Candidate>> = starts
        .into_par_iter()
        .map(|u| solve(problem, Iterate { q0: q_init.clone(), u }, opts).ok())
        .collect();
    let best = candidates
        .into_iter()
        .flatten()
        .min_by(|a, b| {
            // Converged candidates first, then by action.
            b.converged.cmp(&a.converged).then(if a.converged {
                a.action.total_cmp(&b.action)
            } else {
                a.residual.total_cmp(&b.residual)
            })
        })
        .ok_or(Error::NoConvergence { residual: f64::INFINITY })?;
    let n = problem.model.dim();
    let m = problem.model.rank();
    let h: Vec<DVector<f64>> = best.u.iter().map(|v| DVector::from_fn(n, |i, _| if i < m { v[i] } else { 0.0 })).collect();
    let controls = ControlCurve::uniform(best.q0.clone(), problem.span, h)?.with_substeps(problem.substeps);
    let length = problem.dt() * best.u.iter().map(|v| v.norm()).sum::<f64>();
    Ok(DirectResult {
        controls,
        action: best.action,
        length,
        endpoint_residual: best.residual,
        converged: best.converged,
        p0_estimate: best.p0,
    })
}

/// Minimizes `½ Σ |u_j|² Δt` over horizontal piecewise-constant controls
/// steering `q0` to `q1` on `span`.
pub fn direct_minimize(model: &ChartModel, q0: &DVector<f64>, q1: &DVector<f64>, span: (f64, f64), opts: &DirectOptions) -> Result<DirectResult> {
    model.check_domain(q0.as_slice())?;
    model.check_domain(q1.as_slice())?;
    if !(span.1 > span.0) || opts.intervals == 0 {
        return Err(Error::invalid("need b > a and at least one interval"));
    }
    let problem = Problem {
        model,
        target: q1,
        start_set: None,
        span,
        intervals: opts.intervals,
        substeps: opts.substeps.max(1),
    };
    if (q1 - q0).amax() == 0.0 {
        let h = vec![DVector::zeros(model.dim()); opts.intervals];
        return Ok(DirectResult {
            controls: ControlCurve::uniform(q0.clone(), span, h)?.with_substeps(problem.substeps),
            action: 0.0,
            length: 0.0,
            endpoint_residual: 0.0,
            converged: true,
            p0_estimate: DVector::zeros(model.dim()),
        });
    }
    run(&problem, q0, opts)
}

/// As [`direct_minimize`] with the start point free on `start`.
pub fn direct_minimize_from_set(
    model: &ChartModel,
    start: &SubmanifoldSpec,
    q1: &DVector<f64>,
    span: (f64, f64),
    opts: &DirectOptions,
) -> Result<DirectResult> {
    if let SubmanifoldSpec::Point(q0) = start {
        return direct_minimize(model, q0, q1, span, opts);
    }
    model.check_domain(q1.as_slice())?;
    let problem = Problem {
        model,
        target: q1,
        start_set: Some(start),
        span,
        intervals: opts.intervals,
        substeps: opts.substeps.max(1),
    };
    run(&problem, start.anchor(), opts)
}
