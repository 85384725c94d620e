//! Geodesic boundary-value problems, the action and length functionals,
//! Lagrange multipliers, a direct-minimization oracle and ball sampling.

mod ball;
mod direct;
mod newton;
mod shooting;
mod submanifold;

pub use ball::{ball_sample, BallPoint, BallSample};
pub use direct::{direct_minimize, direct_minimize_from_set, DirectOptions, DirectResult};
pub use shooting::{shoot_point_to_point, shoot_to_submanifolds, ShootOptions};
pub use submanifold::{AffineMap, ExprMap, LevelSet, LevelSetMap, SubmanifoldSpec, TransversalityCertificate};

use nalgebra::DVector;
use serde::Serialize;

use crate::endpoint::{curve_to_controls, ControlCurve};
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::model::ChartModel;

/// Complement coefficients above this count as a non-horizontal control curve.
pub const HORIZONTAL_TOL: f64 = 1e-8;
/// Looser bound for curves recovered from sampled nodes by differencing.
pub const SAMPLED_HORIZONTAL_TOL: f64 = 1e-5;

/// Anything with a horizontal speed profile.
pub trait HorizontalCurve {
    /// `(Δt_j, |γ̇|_j)` per interval, speeds taken in the orthonormal frame.
    /// For sampled curves each interval carries the speeds at both ends.
    fn speed_profile(&self, model: &ChartModel) -> Result<Vec<(f64, f64, f64)>>;
}

impl HorizontalCurve for ControlCurve {
    fn speed_profile(&self, model: &ChartModel) -> Result<Vec<(f64, f64, f64)>> {
        let m = model.rank();
        let magnitude = self.complement_magnitude(m);
        if magnitude > HORIZONTAL_TOL {
            return Err(Error::NonHorizontal { magnitude });
        }
        Ok(self.horizontal_speeds(m).into_iter().enumerate().map(|(j, s)| (self.dt(j), s, s)).collect())
    }
}

impl HorizontalCurve for Trajectory {
    fn speed_profile(&self, model: &ChartModel) -> Result<Vec<(f64, f64, f64)>> {
        match &self.p {
            Some(p) => {
                // Normal geodesic: |γ̇|² = Σ (p·X_i)² = 2H at each node.
                let speeds: Vec<f64> = self
                    .q
                    .iter()
                    .zip(p)
                    .map(|(q, p)| (2.0 * crate::flow::energy(model, q.as_slice(), p.as_slice())).sqrt())
                    .collect();
                Ok((0..self.len() - 1)
                    .map(|j| (self.grid[j + 1] - self.grid[j], speeds[j], speeds[j + 1]))
                    .collect())
            }
            None => {
                let c = curve_to_controls(model, self)?;
                let magnitude = c.complement_magnitude(model.rank());
                if magnitude > SAMPLED_HORIZONTAL_TOL {
                    return Err(Error::NonHorizontal { magnitude });
                }
                Ok(c.horizontal_speeds(model.rank())
                    .into_iter()
                    .enumerate()
                    .map(|(j, s)| (c.dt(j), s, s))
                    .collect())
            }
        }
    }
}

/// `½ ∫ |γ̇|² dt`, trapezoidal in the squared speed.
pub fn action(model: &ChartModel, curve: &impl HorizontalCurve) -> Result<f64> {
    Ok(curve.speed_profile(model)?.iter().map(|(dt, a, b)| 0.25 * dt * (a * a + b * b)).sum())
}

/// `∫ |γ̇| dt`, trapezoidal in the speed.
pub fn length(model: &ChartModel, curve: &impl HorizontalCurve) -> Result<f64> {
    Ok(curve.speed_profile(model)?.iter().map(|(dt, a, b)| 0.5 * dt * (a + b)).sum())
}

/// Lagrange multiplier along a lifted curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierPath {
    pub values: Vec<DVector<f64>>,
    /// Largest `|λ_{j+1} - λ_j| / Δt`.
    pub max_rate: f64,
}

/// Per node, solves `p(X_{m+l}) + Σ_j λ_j θ_j(X_{m+l}) = 0` with `θ` the
/// annihilator coframe.
pub fn recover_multiplier(model: &ChartModel, traj: &Trajectory) -> Result<MultiplierPath> {
    let p = traj
        .p
        .as_ref()
        .ok_or_else(|| Error::invalid("multiplier recovery needs the momentum along the curve"))?;
    let (m, k) = (model.rank(), model.codim());
    let mut values = Vec::with_capacity(traj.len());
    for (q, pj) in traj.q.iter().zip(p) {
        let theta = model.annihilator_coframe(q)?;
        let mat = model.coframe_on_complement(q, &theta);
        let f = model.frame_at(q.as_slice());
        let pc = DVector::from_fn(k, |l, _| pj.dot(&f.column(m + l)));
        let lambda = mat.transpose().lu().solve(&(-pc)).ok_or_else(|| Error::DegenerateFrame {
            point: q.as_slice().to_vec(),
            ratio: 0.0,
        })?;
        values.push(lambda);
    }
    let max_rate = values
        .windows(2)
        .zip(traj.grid.windows(2))
        .map(|(v, t)| (&v[1] - &v[0]).amax() / (t[1] - t[0]))
        .fold(0.0, f64::max);
    Ok(MultiplierPath { values, max_rate })
}

/// Largest complement component of `(p + λθ)(X_{m+l})` along the curve.
pub fn multiplier_consistency(model: &ChartModel, traj: &Trajectory, path: &MultiplierPath) -> Result<f64> {
    let p = traj.p.as_ref().ok_or_else(|| Error::invalid("trajectory has no momentum"))?;
    let m = model.rank();
    let mut worst = 0.0_f64;
    for ((q, pj), lambda) in traj.q.iter().zip(p).zip(&path.values) {
        let theta = model.annihilator_coframe(q)?;
        let covector = pj + theta.rows.transpose() * lambda;
        let f = model.frame_at(q.as_slice());
        for l in 0..model.codim() {
            worst = worst.max(covector.dot(&f.column(m + l)).abs());
        }
    }
    Ok(worst)
}

/// A converged (or best-effort) geodesic boundary-value solution.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub q0: DVector<f64>,
    pub p0: DVector<f64>,
    pub span: (f64, f64),
    pub trajectory: Trajectory,
    pub boundary_residuals: Vec<f64>,
    pub residual: f64,
    pub multiplier: Option<MultiplierPath>,
    pub iterations: usize,
    pub converged: bool,
    pub action: f64,
    pub length: f64,
    pub transversality: Option<TransversalityCertificate>,
}

/// JSON row for one solution.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    pub endpoint: Vec<f64>,
    pub action: f64,
    pub length: f64,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub multiplier_max_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abnormal_verdict: Option<crate::endpoint::Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transversality: Option<TransversalityCertificate>,
}

impl BvpSolution {
    /// Wraps an integrated normal geodesic as a solution of its own
    /// point-to-point problem.
    pub fn from_geodesic(model: &ChartModel, trajectory: Trajectory) -> Result<Self> {
        let start = trajectory.state(0).ok_or_else(|| Error::invalid("trajectory has no covector lift"))?;
        Ok(BvpSolution {
            q0: start.q,
            p0: start.p,
            span: trajectory.span(),
            action: action(model, &trajectory)?,
            length: length(model, &trajectory)?,
            multiplier: recover_multiplier(model, &trajectory).ok(),
            trajectory,
            boundary_residuals: Vec::new(),
            residual: 0.0,
            iterations: 0,
            converged: true,
            transversality: None,
        })
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        self.trajectory.end()
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            q0: self.q0.as_slice().to_vec(),
            p0: self.p0.as_slice().to_vec(),
            endpoint: self.endpoint().as_slice().to_vec(),
            action: self.action,
            length: self.length,
            residual: self.residual,
            converged: self.converged,
            iterations: self.iterations,
            multiplier_max_rate: self.multiplier.as_ref().map(|m| m.max_rate),
            abnormal_verdict: None,
            transversality: self.transversality.clone(),
        }
    }
}
