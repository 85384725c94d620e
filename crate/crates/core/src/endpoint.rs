//! Curves driven by frame coefficients, the endpoint map and its
//! differential, the adjoint system and abnormal-extremal detection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Interpolation, Trajectory};
use crate::linalg;
use crate::model::ChartModel;

/// Default number of RK4 substeps per control interval.
pub const DEFAULT_SUBSTEPS: usize = 4;

/// Piecewise-constant frame coefficients: on `[grid[j], grid[j+1]]` the
/// curve solves `q' = Σ_i h[j]_i X_i(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCurve {
    pub q0: DVector<f64>,
    pub grid: Vec<f64>,
    pub h: Vec<DVector<f64>>,
    pub substeps: usize,
}

impl ControlCurve {
    pub fn new(q0: DVector<f64>, grid: Vec<f64>, h: Vec<DVector<f64>>) -> Result<Self> {
        if grid.len() != h.len() + 1 {
            return Err(Error::invalid(format!("{} grid nodes for {} control intervals", grid.len(), h.len())));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("control grid must be strictly increasing"));
        }
        if h.iter().any(|v| v.len() != q0.len()) {
            return Err(Error::invalid("control vectors must have one entry per frame field"));
        }
        Ok(ControlCurve {
            q0,
            grid,
            h,
            substeps: DEFAULT_SUBSTEPS,
        })
    }

    /// Uniform grid on `span` with one control per interval.
    pub fn uniform(q0: DVector<f64>, span: (f64, f64), h: Vec<DVector<f64>>) -> Result<Self> {
        let grid = uniform_grid(span, h.len());
        Self::new(q0, grid, h)
    }

    /// Samples `f` at the interval midpoints of a uniform grid.
    pub fn from_fn(q0: DVector<f64>, span: (f64, f64), intervals: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let grid = uniform_grid(span, intervals);
        let h = grid.windows(2).map(|w| f(0.5 * (w[0] + w[1]))).collect();
        Self::new(q0, grid, h)
    }

    pub fn constant(q0: DVector<f64>, span: (f64, f64), intervals: usize, h: DVector<f64>) -> Result<Self> {
        Self::from_fn(q0, span, intervals, |_| h.clone())
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn intervals(&self) -> usize {
        self.h.len()
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    pub fn dt(&self, j: usize) -> f64 {
        self.grid[j + 1] - self.grid[j]
    }

    /// Largest complement coefficient `|h_i|`, `i > m`.
    pub fn complement_magnitude(&self, m: usize) -> f64 {
        self.h.iter().flat_map(|v| v.iter().skip(m).map(|x| x.abs())).fold(0.0, f64::max)
    }

    pub fn is_horizontal(&self, m: usize, tol: f64) -> bool {
        self.complement_magnitude(m) <= tol
    }

    /// `|h_horiz|` per interval.
    pub fn horizontal_speeds(&self, m: usize) -> Vec<f64> {
        self.h.iter().map(|v| v.rows(0, m).norm()).collect()
    }

    /// Same curve with every control multiplied by `c` and the grid divided by `c`.
    pub fn time_scaled(&self, c: f64) -> ControlCurve {
        let a = self.grid[0];
        ControlCurve {
            q0: self.q0.clone(),
            grid: self.grid.iter().map(|t| a + (t - a) / c).collect(),
            h: self.h.iter().map(|v| v * c).collect(),
            substeps: self.substeps,
        }
    }
}

pub(crate) fn uniform_grid(span: (f64, f64), intervals: usize) -> Vec<f64> {
    let n = intervals.max(1);
    (0..=n)
        .map(|j| if j == n { span.1 } else { span.0 + (span.1 - span.0) * j as f64 / n as f64 })
        .collect()
}

/// `A(q) = Σ_i h_i ∂X_i/∂q` over all `n` frame fields.
fn control_jacobian(model: &ChartModel, q: &[f64], h: &DVector<f64>) -> DMatrix<f64> {
    let jac = model.jacobians_at(q);
    let n = model.dim();
    let mut a = DMatrix::zeros(n, n);
    for (i, ji) in jac.iter().enumerate() {
        if h[i] != 0.0 {
            a += ji * h[i];
        }
    }
    a
}

/// One RK4 step of `y' = f(y)` in place.
fn rk4_step(y: &mut [f64], dt: f64, f: &mut impl FnMut(&[f64], &mut [f64])) {
    let d = y.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    f(y, &mut k1);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..d {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(&tmp, &mut k4);
    for i in 0..d {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn curve_rhs(model: &ChartModel, h: &DVector<f64>, q: &[f64], dq: &mut [f64]) {
    let f = model.frame_at(q);
    let v = f * h;
    dq.copy_from_slice(v.as_slice());
}

fn partial_curve(model: &ChartModel, c: &ControlCurve, nodes: Vec<DVector<f64>>, t_exit: f64, q_exit: &[f64]) -> Error {
    let mut grid = c.grid[..nodes.len()].to_vec();
    let mut q = nodes;
    grid.push(t_exit);
    q.push(DVector::from_column_slice(q_exit));
    Error::OutOfChart {
        point: q_exit.to_vec(),
        time: Some(t_exit),
        partial: Some(Box::new(Trajectory {
            model: model.name().to_string(),
            grid,
            q,
            p: None,
            interpolation: Interpolation::PiecewiseControl,
            exit_time: Some(t_exit),
        })),
    }
}

/// Integrates the control ODE; nodes of the result are the control grid.
pub fn controls_to_curve(model: &ChartModel, c: &ControlCurve) -> Result<Trajectory> {
    model.check_domain(c.q0.as_slice())?;
    let mut q = c.q0.as_slice().to_vec();
    let mut nodes = vec![c.q0.clone()];
    for j in 0..c.intervals() {
        let h = &c.h[j];
        if h.iter().any(|&x| x != 0.0) {
            let dt = c.dt(j) / c.substeps as f64;
            for s in 0..c.substeps {
                rk4_step(&mut q, dt, &mut |y, dy| curve_rhs(model, h, y, dy));
                if !model.contains(&q) {
                    let t = c.grid[j] + (s + 1) as f64 * dt;
                    return Err(partial_curve(model, c, nodes, t, &q));
                }
            }
        }
        nodes.push(DVector::from_column_slice(&q));
    }
    Ok(Trajectory {
        model: model.name().to_string(),
        grid: c.grid.clone(),
        q: nodes,
        p: None,
        interpolation: Interpolation::PiecewiseControl,
        exit_time: None,
    })
}

/// Controls `h_i = p·X_i`, `i ≤ m`, of a normal geodesic, sampled at the
/// interval midpoints of a uniform grid.
pub fn geodesic_controls(
    model: &ChartModel,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    span: (f64, f64),
    intervals: usize,
    method: &crate::ode::Method,
) -> Result<ControlCurve> {
    let intervals = intervals.max(1);
    let opts = crate::flow::FlowOptions {
        method: *method,
        samples: Some(2 * intervals),
        drift_bound: None,
    };
    let traj = crate::flow::integrate_geodesic(model, q0, p0, span, &opts)?;
    let p = traj.p.as_ref().expect("geodesics carry their lift");
    let (n, m) = (model.dim(), model.rank());
    let h = (0..intervals)
        .map(|j| {
            let k = 2 * j + 1;
            let frame = model.horizontal_at(traj.q[k].as_slice());
            let mut v = DVector::zeros(n);
            v.rows_mut(0, m).copy_from(&(frame.transpose() * &p[k]));
            v
        })
        .collect();
    ControlCurve::uniform(q0.clone(), span, h)
}

/// Per-interval coefficients solving `frame(q_mid) h = (q_{j+1} - q_j)/Δt`.
pub fn curve_to_controls(model: &ChartModel, traj: &Trajectory) -> Result<ControlCurve> {
    if traj.len() < 2 {
        return Err(Error::invalid("a curve needs at least two nodes"));
    }
    let mut h = Vec::with_capacity(traj.len() - 1);
    for j in 0..traj.len() - 1 {
        let mid = (&traj.q[j] + &traj.q[j + 1]) * 0.5;
        let f = model.eval_frame(&mid)?;
        let v = (&traj.q[j + 1] - &traj.q[j]) / (traj.grid[j + 1] - traj.grid[j]);
        let coeffs = f.lu().solve(&v).ok_or_else(|| Error::DegenerateFrame {
            point: mid.as_slice().to_vec(),
            ratio: 0.0,
        })?;
        h.push(coeffs);
    }
    ControlCurve::new(traj.q[0].clone(), traj.grid.clone(), h)
}

/// Transition matrices `Φ_t` of the linearized control flow at the grid nodes.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub grid: Vec<f64>,
    pub nodes: Vec<DVector<f64>>,
    pub phi: Vec<DMatrix<f64>>,
    pub phi_inv: Vec<DMatrix<f64>>,
    pub condition: Vec<f64>,
}

impl FundamentalSolution {
    pub fn end(&self) -> &DMatrix<f64> {
        self.phi.last().expect("non-empty")
    }

    pub fn max_condition(&self) -> f64 {
        self.condition.iter().copied().fold(1.0, f64::max)
    }

    /// `Φ_j⁻¹ F(γ(t_j))` restricted to the first `cols` frame fields.
    fn transported_frame(&self, model: &ChartModel, j: usize, cols: usize) -> DMatrix<f64> {
        let f = model.frame_at(self.nodes[j].as_slice());
        &self.phi_inv[j] * f.columns(0, cols)
    }
}

/// Integrates `Φ' = A(t) Φ`, `Φ_a = I`, along the curve.
pub fn fundamental_solution(model: &ChartModel, c: &ControlCurve) -> Result<FundamentalSolution> {
    model.check_domain(c.q0.as_slice())?;
    let n = model.dim();
    let mut y: Vec<f64> = c.q0.iter().copied().collect();
    y.extend(DMatrix::<f64>::identity(n, n).iter());
    let mut nodes = vec![c.q0.clone()];
    let mut phi = vec![DMatrix::identity(n, n)];
    for j in 0..c.intervals() {
        let h = &c.h[j];
        if h.iter().any(|&x| x != 0.0) {
            let dt = c.dt(j) / c.substeps as f64;
            for s in 0..c.substeps {
                rk4_step(&mut y, dt, &mut |y, dy| {
                    let (q, m) = y.split_at(n);
                    curve_rhs(model, h, q, &mut dy[..n]);
                    let a = control_jacobian(model, q, h);
                    let prod = a * DMatrix::from_column_slice(n, n, m);
                    dy[n..].copy_from_slice(prod.as_slice());
                });
                if !model.contains(&y[..n]) {
                    let t = c.grid[j] + (s + 1) as f64 * dt;
                    return Err(partial_curve(model, c, nodes, t, &y[..n]));
                }
            }
        }
        nodes.push(DVector::from_column_slice(&y[..n]));
        phi.push(DMatrix::from_column_slice(n, n, &y[n..]));
    }
    let mut phi_inv = Vec::with_capacity(phi.len());
    let mut condition = Vec::with_capacity(phi.len());
    for (j, p) in phi.iter().enumerate() {
        let inv = p.clone().try_inverse().ok_or(Error::SingularTransition { t: c.grid[j] })?;
        condition.push(linalg::condition_number(p));
        phi_inv.push(inv);
    }
    Ok(FundamentalSolution {
        grid: c.grid.clone(),
        nodes,
        phi,
        phi_inv,
        condition,
    })
}

/// First-order change of `γ(b)` under a change `dh` of the controls:
/// `Φ_b ∫ Φ_s⁻¹ F(γ(s)) dh(s) ds`, trapezoidal in `s` on each interval.
pub fn predict_endpoint_variation(model: &ChartModel, fs: &FundamentalSolution, dh: &[DVector<f64>]) -> DVector<f64> {
    let n = model.dim();
    let mut acc = DVector::zeros(n);
    let mut left = fs.transported_frame(model, 0, n);
    for (j, d) in dh.iter().enumerate() {
        let right = fs.transported_frame(model, j + 1, n);
        let dt = fs.grid[j + 1] - fs.grid[j];
        acc += (&left + &right) * d * (0.5 * dt);
        left = right;
    }
    fs.end() * acc
}

/// Relative threshold for counting singular values into the rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    /// Multiplies `max(n, N) · ε · σ_1`.
    pub factor: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        RankTolerance { factor: 1e3 }
    }
}

impl RankTolerance {
    pub fn threshold(&self, sigma_max: f64, n: usize, intervals: usize) -> f64 {
        n.max(intervals) as f64 * f64::EPSILON * sigma_max * self.factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Regular,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    pub eta_a: Vec<f64>,
    pub eta_b: Vec<f64>,
    pub max_violation: f64,
}

/// Gramian of the endpoint differential and its null-space covectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub verdict: Verdict,
    pub characteristics: Vec<Characteristic>,
    pub gramian: Vec<Vec<f64>>,
    /// Largest relative distance of `X_i(γ(b))`, `i ≤ m`, from the image.
    pub frame_in_image_residual: f64,
    pub flags: Vec<String>,
}

impl AbnormalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn gramian_matrix(&self) -> DMatrix<f64> {
        let n = self.gramian.len();
        DMatrix::from_fn(n, n, |i, j| self.gramian[i][j])
    }
}

/// Builds `G = ∫ A Aᵀ ds`, `A = Φ_s⁻¹ [X_1 .. X_m](γ(s))`, and classifies the curve.
pub fn endpoint_differential_gramian(model: &ChartModel, c: &ControlCurve, tol: RankTolerance) -> Result<AbnormalReport> {
    let (n, m) = (model.dim(), model.rank());
    let complement = c.complement_magnitude(m);
    if complement > 1e-10 {
        return Err(Error::NonHorizontal { magnitude: complement });
    }
    let fs = fundamental_solution(model, c)?;
    let mut gram = DMatrix::zeros(n, n);
    let first = fs.transported_frame(model, 0, m);
    let mut left_outer = &first * first.transpose();
    for j in 0..c.intervals() {
        let right = fs.transported_frame(model, j + 1, m);
        let right_outer = &right * right.transpose();
        gram += (&left_outer + &right_outer) * (0.5 * c.dt(j));
        left_outer = right_outer;
    }
    gram = (&gram + gram.transpose()) * 0.5;

    let (_, sigma, v) = linalg::svd_full(&gram);
    let threshold = tol.threshold(sigma[0], n, c.intervals());
    let rank = if sigma[0] > 0.0 { linalg::rank_above(&sigma, threshold) } else { 0 };

    let mut flags = Vec::new();
    if c.h.iter().all(|h| h.iter().all(|&x| x == 0.0)) {
        flags.push("constant-curve".to_string());
    }

    let phi_b = fs.end();
    let inv_t_b = fs.phi_inv.last().unwrap().transpose();
    let mut characteristics = Vec::new();
    for col in rank..n {
        let xi = v.column(col).into_owned();
        let eta_b = &inv_t_b * &xi;
        let scale = eta_b.norm();
        let eta_b = linalg::sign_fixed(&(eta_b / scale));
        // Recover η(a) = Φ_bᵀ η(b) after the sign fix.
        let eta_a = phi_b.transpose() * &eta_b;
        let path = adjoint_path(model, c, &eta_a, Anchor::Start)?;
        let max_violation = frame_pairing_violation(model, &fs.nodes, &path, m);
        characteristics.push(Characteristic {
            eta_a: eta_a.as_slice().to_vec(),
            eta_b: eta_b.as_slice().to_vec(),
            max_violation,
        });
    }

    let image = phi_b * &gram;
    let basis = linalg::range_basis(&image, tol.threshold(linalg::singular_values(&image)[0], n, c.intervals()));
    let frame_b = model.frame_at(fs.nodes.last().unwrap().as_slice());
    let mut frame_in_image_residual = 0.0_f64;
    for i in 0..m {
        let x = frame_b.column(i).into_owned();
        let proj = &basis * (basis.transpose() * &x);
        frame_in_image_residual = frame_in_image_residual.max((&x - proj).norm() / x.norm().max(f64::MIN_POSITIVE));
    }

    Ok(AbnormalReport {
        rank,
        singular_values: sigma,
        threshold,
        verdict: if rank < n { Verdict::Abnormal } else { Verdict::Regular },
        characteristics,
        gramian: (0..n).map(|i| gram.row(i).iter().copied().collect()).collect(),
        frame_in_image_residual,
        flags,
    })
}

/// Which end of the curve the given covector is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Start,
    End,
}

/// Solves the adjoint system `η' = -Aᵀ η` along the curve; returns `η` at
/// every grid node, ordered by time.
pub fn adjoint_integrate(model: &ChartModel, c: &ControlCurve, eta: &DVector<f64>, anchor: Anchor) -> Result<Vec<DVector<f64>>> {
    if eta.len() != model.dim() {
        return Err(Error::invalid("covector dimension does not match the model"));
    }
    adjoint_path(model, c, eta, anchor)
}

fn adjoint_path(model: &ChartModel, c: &ControlCurve, eta: &DVector<f64>, anchor: Anchor) -> Result<Vec<DVector<f64>>> {
    let n = model.dim();
    let adjoint_rhs = |h: &DVector<f64>, y: &[f64], dy: &mut [f64]| {
        let (q, e) = y.split_at(n);
        curve_rhs(model, h, q, &mut dy[..n]);
        let a = control_jacobian(model, q, h);
        let de = -(a.transpose() * DVector::from_column_slice(e));
        dy[n..].copy_from_slice(de.as_slice());
    };
    match anchor {
        Anchor::Start => {
            let mut y: Vec<f64> = c.q0.iter().chain(eta.iter()).copied().collect();
            let mut out = vec![eta.clone()];
            for j in 0..c.intervals() {
                let h = &c.h[j];
                if h.iter().any(|&x| x != 0.0) {
                    let dt = c.dt(j) / c.substeps as f64;
                    for _ in 0..c.substeps {
                        rk4_step(&mut y, dt, &mut |y, dy| adjoint_rhs(h, y, dy));
                    }
                }
                out.push(DVector::from_column_slice(&y[n..]));
            }
            Ok(out)
        }
        Anchor::End => {
            let curve = controls_to_curve(model, c)?;
            let mut y: Vec<f64> = curve.end().iter().chain(eta.iter()).copied().collect();
            let mut out = vec![eta.clone()];
            for j in (0..c.intervals()).rev() {
                let h = &c.h[j];
                if h.iter().any(|&x| x != 0.0) {
                    let dt = -c.dt(j) / c.substeps as f64;
                    for _ in 0..c.substeps {
                        rk4_step(&mut y, dt, &mut |y, dy| adjoint_rhs(h, y, dy));
                    }
                }
                out.push(DVector::from_column_slice(&y[n..]));
            }
            out.reverse();
            Ok(out)
        }
    }
}

fn frame_pairing_violation(model: &ChartModel, nodes: &[DVector<f64>], path: &[DVector<f64>], m: usize) -> f64 {
    nodes
        .iter()
        .zip(path)
        .map(|(q, eta)| {
            let f = model.frame_at(q.as_slice());
            (0..m).map(|i| eta.dot(&f.column(i)).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicOutcome {
    pub characteristic: bool,
    pub max_violation: f64,
    /// The covector is identically zero.
    pub trivial: bool,
}

/// Transports `eta0` by the adjoint system and checks that it annihilates
/// the horizontal frame at every node.
pub fn characteristic_test(model: &ChartModel, c: &ControlCurve, eta0: &DVector<f64>, tol: f64) -> Result<CharacteristicOutcome> {
    let path = adjoint_integrate(model, c, eta0, Anchor::Start)?;
    let curve = controls_to_curve(model, c)?;
    let max_violation = frame_pairing_violation(model, &curve.q, &path, model.rank());
    Ok(CharacteristicOutcome {
        characteristic: max_violation <= tol,
        max_violation,
        trivial: eta0.iter().all(|&x| x == 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn origin() -> DVector<f64> {
        DVector::zeros(3)
    }

    #[test]
    fn zero_controls_give_constant_curve() {
        let q0 = dvector![0.3, -0.1, 2.0];
        let c = ControlCurve::constant(q0.clone(), (0.0, 1.0), 8, DVector::zeros(3)).unwrap();
        let traj = controls_to_curve(&ChartModel::martinet(), &c).unwrap();
        assert!(traj.q.iter().all(|q| *q == q0));
        let back = curve_to_controls(&ChartModel::martinet(), &traj).unwrap();
        assert!(back.h.iter().all(|h| h.amax() == 0.0));
    }

    #[test]
    fn flat_line() {
        let model = ChartModel::flat(3, 2);
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 10, dvector![1.0, 0.0, 0.0]).unwrap();
        let traj = controls_to_curve(&model, &c).unwrap();
        assert!((traj.end() - dvector![1.0, 0.0, 0.0]).amax() < 1e-15);
        let back = curve_to_controls(&model, &traj).unwrap();
        assert!(back.h.iter().all(|h| (h - dvector![1.0, 0.0, 0.0]).amax() < 1e-14));
    }

    #[test]
    fn heisenberg_circle_area() {
        // Midpoint-sampled polygon of the unit-speed circle of radius 1/(2π):
        // z(1) = 1/(4N tan(π/N)) for N intervals.
        let model = ChartModel::heisenberg();
        let n = 1000;
        let c = ControlCurve::from_fn(origin(), (0.0, 1.0), n, |t| dvector![(2.0 * PI * t).cos(), (2.0 * PI * t).sin(), 0.0]).unwrap();
        let end = controls_to_curve(&model, &c).unwrap().end().clone();
        let expected = 1.0 / (4.0 * n as f64 * (PI / n as f64).tan());
        assert!(end[0].abs() < 1e-12 && end[1].abs() < 1e-12, "{end}");
        assert!((end[2] - expected).abs() < 1e-12, "{} vs {expected}", end[2]);
        assert!((expected - 0.079_577_209_746_387_6).abs() < 1e-15);
    }

    #[test]
    fn fundamental_solution_examples() {
        let flat = ChartModel::flat(3, 2);
        let c = ControlCurve::from_fn(origin(), (0.0, 1.0), 16, |t| dvector![t.sin(), 1.0, 0.0]).unwrap();
        let fs = fundamental_solution(&flat, &c).unwrap();
        assert!(fs.phi.iter().all(|p| *p == DMatrix::identity(3, 3)));

        let heis = ChartModel::heisenberg();
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 4, dvector![1.0, 0.0, 0.0]).unwrap();
        let fs = fundamental_solution(&heis, &c).unwrap();
        // exp(J_1) with J_1 nilpotent: I + J_1.
        let mut want = DMatrix::identity(3, 3);
        want[(2, 1)] = -0.5;
        assert!((fs.end() - want).amax() < 1e-14);
    }

    #[test]
    fn fundamental_solution_matches_finite_differences() {
        let model = ChartModel::heisenberg();
        let c = ControlCurve::from_fn(dvector![0.1, 0.2, 0.0], (0.0, 1.0), 64, |t| dvector![(3.0 * t).cos(), t, 0.0]).unwrap();
        let fs = fundamental_solution(&model, &c).unwrap();
        let eps = 1e-6;
        for k in 0..3 {
            let mut plus = c.clone();
            plus.q0[k] += eps;
            let mut minus = c.clone();
            minus.q0[k] -= eps;
            let d = (controls_to_curve(&model, &plus).unwrap().end() - controls_to_curve(&model, &minus).unwrap().end()) / (2.0 * eps);
            assert!((d - fs.end().column(k)).amax() < 1e-8);
        }
    }

    #[test]
    fn verdicts() {
        let tol = RankTolerance::default();
        let martinet = ChartModel::martinet();
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 64, dvector![0.0, 1.0, 0.0]).unwrap();
        let r = endpoint_differential_gramian(&martinet, &c, tol).unwrap();
        assert_eq!((r.rank, r.verdict), (2, Verdict::Abnormal));
        assert_eq!(r.characteristics.len(), 1);
        let eta = &r.characteristics[0];
        assert!((eta.eta_b[2] - 1.0).abs() < 1e-12 && eta.max_violation < 1e-10);

        let heis = ChartModel::heisenberg();
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 64, dvector![1.0, 0.0, 0.0]).unwrap();
        let r = endpoint_differential_gramian(&heis, &c, tol).unwrap();
        assert_eq!((r.rank, r.verdict), (3, Verdict::Regular));
        assert!(r.characteristics.is_empty());
        assert!(r.frame_in_image_residual < 1e-8);

        let flat = ChartModel::flat(3, 2);
        let c = ControlCurve::from_fn(origin(), (0.0, 1.0), 32, |t| dvector![1.0, t, 0.0]).unwrap();
        let r = endpoint_differential_gramian(&flat, &c, tol).unwrap();
        assert_eq!(r.rank, 2);
        assert_eq!(r.characteristics[0].eta_b, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_curve_is_flagged() {
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 8, DVector::zeros(3)).unwrap();
        let r = endpoint_differential_gramian(&ChartModel::heisenberg(), &c, RankTolerance::default()).unwrap();
        assert_eq!(r.flags, vec!["constant-curve".to_string()]);
        assert_eq!(r.rank, 2);
    }

    #[test]
    fn non_horizontal_is_rejected() {
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 8, dvector![0.0, 0.0, 1.0]).unwrap();
        let err = endpoint_differential_gramian(&ChartModel::heisenberg(), &c, RankTolerance::default()).unwrap_err();
        assert!(matches!(err, Error::NonHorizontal { .. }));
    }

    #[test]
    fn characteristic_examples() {
        let martinet = ChartModel::martinet();
        let line = ControlCurve::constant(origin(), (0.0, 1.0), 32, dvector![0.0, 1.0, 0.0]).unwrap();
        let dz = dvector![0.0, 0.0, 1.0];
        let out = characteristic_test(&martinet, &line, &dz, 1e-10).unwrap();
        assert!(out.characteristic && out.max_violation <= 1e-10);
        let path = adjoint_integrate(&martinet, &line, &dz, Anchor::Start).unwrap();
        assert!(path.iter().all(|e| *e == dz));

        let heis = ChartModel::heisenberg();
        let c = ControlCurve::constant(origin(), (0.0, 1.0), 32, dvector![1.0, 0.0, 0.0]).unwrap();
        let out = characteristic_test(&heis, &c, &dz, 1e-10).unwrap();
        assert!(!out.characteristic);
        assert!((out.max_violation - 1.0).abs() < 1e-12);

        let out = characteristic_test(&heis, &c, &DVector::zeros(3), 1e-10).unwrap();
        assert!(out.characteristic && out.trivial);
    }

    #[test]
    fn adjoint_from_either_end_agrees() {
        let model = ChartModel::heisenberg();
        let c = ControlCurve::from_fn(origin(), (0.0, 1.0), 40, |t| dvector![t.cos(), 1.0 - t, 0.0]).unwrap();
        let eta0 = dvector![0.3, -1.0, 2.0];
        let fwd = adjoint_integrate(&model, &c, &eta0, Anchor::Start).unwrap();
        let back = adjoint_integrate(&model, &c, fwd.last().unwrap(), Anchor::End).unwrap();
        assert!((&back[0] - &eta0).amax() < 1e-10);
    }
}
