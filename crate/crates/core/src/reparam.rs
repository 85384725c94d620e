//! Arclength profiles and unit-speed reparameterization of horizontal
//! control curves.

use nalgebra::DVector;
use serde::Serialize;

use crate::endpoint::ControlCurve;
use crate::error::{Error, Result};
use crate::model::ChartModel;

/// Complement controls above this count as a non-horizontal curve.
pub const HORIZONTAL_TOL: f64 = 1e-10;
/// Intervals slower than this are treated as stationary and collapsed.
pub const PLATEAU_SPEED: f64 = 1e-12;
/// Shortest curve that can be reparameterized.
pub const MIN_LENGTH: f64 = 1e-14;

/// `σ(t_j) = ℓ(γ|[a, t_j])` at the control grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArclengthProfile {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub length: f64,
}

impl ArclengthProfile {
    /// `σ(t)`, linear between nodes (exact for piecewise-constant controls).
    pub fn eval(&self, t: f64) -> f64 {
        let (a, b) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if t <= a {
            return 0.0;
        }
        if t >= b {
            return self.length;
        }
        let j = self.grid.partition_point(|&g| g <= t) - 1;
        let w = (t - self.grid[j]) / (self.grid[j + 1] - self.grid[j]);
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }

    /// Smallest `t` with `σ(t) = s`; plateaus map to their left end.
    pub fn inverse(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.grid[0];
        }
        if s >= self.length {
            let j = self.values.partition_point(|&v| v < self.length);
            return self.grid[j.min(self.grid.len() - 1)];
        }
        let j = self.values.partition_point(|&v| v <= s) - 1;
        let (v0, v1) = (self.values[j], self.values[j + 1]);
        let w = if v1 > v0 { (s - v0) / (v1 - v0) } else { 0.0 };
        self.grid[j] + w * (self.grid[j + 1] - self.grid[j])
    }
}

fn check_horizontal(model: &ChartModel, c: &ControlCurve) -> Result<()> {
    if c.dim() != model.dim() {
        return Err(Error::invalid(format!("curve has dimension {}, model {}", c.dim(), model.dim())));
    }
    let magnitude = c.complement_magnitude(model.rank());
    if magnitude > HORIZONTAL_TOL {
        return Err(Error::NonHorizontal { magnitude });
    }
    Ok(())
}

pub fn arclength_profile(model: &ChartModel, c: &ControlCurve) -> Result<ArclengthProfile> {
    check_horizontal(model, c)?;
    let speeds = c.horizontal_speeds(model.rank());
    let mut values = Vec::with_capacity(c.grid.len());
    let mut acc = 0.0;
    values.push(acc);
    for (j, s) in speeds.iter().enumerate() {
        acc += s * c.dt(j);
        values.push(acc);
    }
    Ok(ArclengthProfile {
        grid: c.grid.clone(),
        values,
        length: acc,
    })
}

/// The same path traversed at unit speed on `[0, L]`.
///
/// Output nodes are the images `σ(t_j)` of the input nodes, so every input
/// node reappears unchanged; stationary intervals are dropped.
pub fn unit_speed_reparam(model: &ChartModel, c: &ControlCurve) -> Result<ControlCurve> {
    let profile = arclength_profile(model, c)?;
    if profile.length <= MIN_LENGTH {
        return Err(Error::ZeroLength);
    }
    let m = model.rank();
    let mut grid = vec![0.0];
    let mut h = Vec::with_capacity(c.intervals());
    for (j, v) in c.h.iter().enumerate() {
        let speed = v.rows(0, m).norm();
        if speed < PLATEAU_SPEED {
            continue;
        }
        let s = profile.values[j + 1];
        if s <= grid[grid.len() - 1] {
            continue;
        }
        let mut u = DVector::zeros(v.len());
        u.rows_mut(0, m).copy_from(&(v.rows(0, m) / speed));
        grid.push(s);
        h.push(u);
    }
    let last = grid.len() - 1;
    grid[last] = profile.length;
    ControlCurve::new(c.q0.clone(), grid, h).map(|out| out.with_substeps(c.substeps))
}
