//! The sub-Riemannian Hamiltonian `H(q, p) = ½ Σ_{i≤m} (p·X_i(q))²`, its
//! normal-geodesic flow and the linearized flow.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChartModel;
use crate::ode::{self, Method, Sampling};

/// A point of the cotangent bundle in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub t: f64,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

/// How values between nodes of a [`Trajectory`] are to be understood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Nodes produced by the adaptive integrator's continuous extension.
    Dense,
    /// Nodes of a fixed-step integration.
    Nodal,
    /// Nodes of a curve driven by piecewise-constant frame controls.
    PiecewiseControl,
}

/// A sampled curve, optionally carrying its cotangent lift.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub model: String,
    pub grid: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub p: Option<Vec<DVector<f64>>>,
    pub interpolation: Interpolation,
    /// Set when the curve left the chart; the last node is the exit point.
    pub exit_time: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.q[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.q.last().expect("non-empty trajectory")
    }

    pub fn span(&self) -> (f64, f64) {
        (self.grid[0], *self.grid.last().expect("non-empty trajectory"))
    }

    pub fn state(&self, j: usize) -> Option<PhaseState> {
        let p = self.p.as_ref()?;
        Some(PhaseState {
            t: self.grid[j],
            q: self.q[j].clone(),
            p: p[j].clone(),
        })
    }

    pub fn states(&self) -> impl Iterator<Item = PhaseState> + '_ {
        (0..self.len()).filter_map(|j| self.state(j))
    }

    pub fn final_state(&self) -> Option<PhaseState> {
        self.state(self.len() - 1)
    }

    /// Values of `H` at every node (empty without momentum).
    pub fn energies(&self, model: &ChartModel) -> Vec<f64> {
        match &self.p {
            Some(p) => self.q.iter().zip(p).map(|(q, p)| energy(model, q.as_slice(), p.as_slice())).collect(),
            None => Vec::new(),
        }
    }

    /// `max_j |H_j - H_0|`.
    pub fn energy_drift(&self, model: &ChartModel) -> f64 {
        let h = self.energies(model);
        h.first().map_or(0.0, |h0| h.iter().map(|x| (x - h0).abs()).fold(0.0, f64::max))
    }

    /// CSV with header `t,q1..qn,p1..pn,H`.
    pub fn write_csv(&self, model: &ChartModel, mut w: impl Write) -> std::io::Result<()> {
        let n = self.q.first().map_or(0, |q| q.len());
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((1..=n).map(|i| format!("q{i}")));
        if self.p.is_some() {
            header.extend((1..=n).map(|i| format!("p{i}")));
            header.push("H".into());
        }
        writeln!(w, "{}", header.join(","))?;
        let energies = self.energies(model);
        for j in 0..self.len() {
            let mut row: Vec<String> = vec![self.grid[j].to_string()];
            row.extend(self.q[j].iter().map(|x| x.to_string()));
            if let Some(p) = &self.p {
                row.extend(p[j].iter().map(|x| x.to_string()));
                row.push(energies[j].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// JSON rows plus metadata.
    pub fn to_json(&self, model: &ChartModel, method: &Method, seed: Option<u64>) -> serde_json::Value {
        let energies = self.energies(model);
        let rows: Vec<serde_json::Value> = (0..self.len())
            .map(|j| {
                let mut row = serde_json::json!({
                    "t": self.grid[j],
                    "q": self.q[j].as_slice(),
                });
                if let Some(p) = &self.p {
                    row["p"] = serde_json::json!(p[j].as_slice());
                    row["H"] = serde_json::json!(energies[j]);
                }
                row
            })
            .collect();
        serde_json::json!({
            "model": self.model,
            "integrator": method,
            "seed": seed,
            "interpolation": self.interpolation,
            "exit_time": self.exit_time,
            "nodes": rows,
        })
    }
}

/// Integration settings for geodesic flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub method: Method,
    /// Number of output intervals on a uniform grid; `None` reports the
    /// integrator's own steps.
    pub samples: Option<usize>,
    /// Fails with [`Error::EnergyDrift`] when `|H(t) - H(a)|` exceeds this
    /// bound times `max(1, H(a))`.
    pub drift_bound: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            method: Method::adaptive(1e-10),
            samples: Some(100),
            drift_bound: None,
        }
    }
}

impl FlowOptions {
    pub fn fixed(steps: usize) -> Self {
        FlowOptions {
            method: Method::rk4(steps),
            samples: None,
            drift_bound: None,
        }
    }

    pub fn adaptive(tol: f64) -> Self {
        FlowOptions {
            method: Method::adaptive(tol),
            ..Default::default()
        }
    }

    pub fn with_samples(mut self, samples: Option<usize>) -> Self {
        self.samples = samples;
        self
    }

    fn sampling(&self) -> Sampling {
        match self.samples {
            Some(k) => Sampling::Uniform(k),
            None => Sampling::Steps,
        }
    }
}

pub(crate) fn energy(model: &ChartModel, q: &[f64], p: &[f64]) -> f64 {
    let f = model.frame_at(q);
    let pv = DVector::from_column_slice(p);
    (0..model.rank()).map(|i| pv.dot(&f.column(i)).powi(2)).sum::<f64>() * 0.5
}

/// `H(q, p) = ½ Σ_{i≤m} (p·X_i(q))²`.
pub fn hamiltonian(model: &ChartModel, q: &DVector<f64>, p: &DVector<f64>) -> Result<f64> {
    model.check_domain(q.as_slice())?;
    check_covector(model, p)?;
    Ok(energy(model, q.as_slice(), p.as_slice()))
}

fn check_covector(model: &ChartModel, p: &DVector<f64>) -> Result<()> {
    if p.len() != model.dim() {
        return Err(Error::invalid(format!(
            "covector has {} components, model dimension is {}",
            p.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Right-hand side of Hamilton's equations on the flat state `(q, p)`.
pub(crate) fn rhs_into(model: &ChartModel, y: &[f64], dy: &mut [f64]) {
    let n = model.dim();
    let m = model.rank();
    let (q, p) = y.split_at(n);
    let f = model.frame_at(q);
    let jac = model.jacobians_at(q);
    dy.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let u: f64 = (0..n).map(|j| p[j] * f[(j, i)]).sum();
        if u == 0.0 {
            continue;
        }
        for j in 0..n {
            dy[j] += u * f[(j, i)];
        }
        let ji = &jac[i];
        for k in 0..n {
            let pj: f64 = (0..n).map(|j| p[j] * ji[(j, k)]).sum();
            dy[n + k] -= u * pj;
        }
    }
}

/// `(dq/dt, dp/dt)` of the normal-geodesic flow.
pub fn hamilton_rhs(model: &ChartModel, q: &DVector<f64>, p: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    model.check_domain(q.as_slice())?;
    check_covector(model, p)?;
    let n = model.dim();
    let y: Vec<f64> = q.iter().chain(p.iter()).copied().collect();
    let mut dy = vec![0.0; 2 * n];
    rhs_into(model, &y, &mut dy);
    Ok((DVector::from_column_slice(&dy[..n]), DVector::from_column_slice(&dy[n..])))
}

/// Hessian of `H` with respect to `(q, p)`.
pub fn hamiltonian_hessian(model: &ChartModel, q: &[f64], p: &[f64]) -> DMatrix<f64> {
    let d = 2 * model.dim();
    let f = model.frame_at(q);
    let jac = model.jacobians_at(q);
    let second = model.second_derivatives_at(q);
    let mut hess = vec![0.0; d * d];
    hessian_into(model.rank(), &f, &jac, &second, p, &mut hess);
    DMatrix::from_column_slice(d, d, &hess)
}

/// Writes the Hessian (symmetric, `2n × 2n`) into `hess`.
///
/// `H = ½ Σ u_i²` with `u_i = p·X_i`, so `∇²H = Σ ∇u_i ∇u_iᵀ + u_i ∇²u_i`
/// where `∇u_i = (J_iᵀ p, X_i)` and `∇²u_i` has blocks
/// `[[Σ_j p_j ∂²(X_i)_j, J_iᵀ], [J_i, 0]]`.
fn hessian_into(m: usize, f: &DMatrix<f64>, jac: &[DMatrix<f64>], second: &[Vec<DMatrix<f64>>], p: &[f64], hess: &mut [f64]) {
    let n = f.nrows();
    let d = 2 * n;
    hess.iter_mut().for_each(|v| *v = 0.0);
    let mut grad = vec![0.0; d];
    for i in 0..m {
        let u: f64 = (0..n).map(|j| p[j] * f[(j, i)]).sum();
        let ji = &jac[i];
        for k in 0..n {
            grad[k] = (0..n).map(|j| p[j] * ji[(j, k)]).sum();
            grad[n + k] = f[(k, i)];
        }
        for c in 0..d {
            for r in 0..d {
                hess[c * d + r] += grad[r] * grad[c];
            }
        }
        if u == 0.0 {
            continue;
        }
        for k in 0..n {
            let dk = &second[i][k];
            for l in 0..n {
                let qq: f64 = (0..n).map(|j| p[j] * dk[(j, l)]).sum();
                hess[l * d + k] += u * qq;
            }
        }
        for k in 0..n {
            for j in 0..n {
                // ∂²u_i/∂q_k∂p_j = ∂(X_i)_j/∂q_k
                let v = u * ji[(j, k)];
                hess[(n + j) * d + k] += v;
                hess[k * d + n + j] += v;
            }
        }
    }
}

/// Hamilton's equations together with the variational equations
/// `Y' = S ∇²H Y`, `S = [[0, I], [-I, 0]]`, on `y = (q, p, vec Y)`.
fn linearized_rhs(model: &ChartModel, y: &[f64], dy: &mut [f64], hess: &mut [f64]) {
    let n = model.dim();
    let m = model.rank();
    let d = 2 * n;
    let (q, rest) = y.split_at(n);
    let p = &rest[..n];
    let f = model.frame_at(q);
    let jac = model.jacobians_at(q);
    let second = model.second_derivatives_at(q);
    dy[..d].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let u: f64 = (0..n).map(|j| p[j] * f[(j, i)]).sum();
        for j in 0..n {
            dy[j] += u * f[(j, i)];
        }
        for k in 0..n {
            let pj: f64 = (0..n).map(|j| p[j] * jac[i][(j, k)]).sum();
            dy[n + k] -= u * pj;
        }
    }
    hessian_into(m, &f, &jac, &second, p, hess);
    let ymat = &y[d..];
    let out = &mut dy[d..];
    for c in 0..d {
        let col = &ymat[c * d..(c + 1) * d];
        for r in 0..d {
            // Row r of S∇²H: rows of the p-block for r < n, negated q-block rows otherwise.
            let (src, sign) = if r < n { (r + n, 1.0) } else { (r - n, -1.0) };
            let mut acc = 0.0;
            for k in 0..d {
                acc += hess[k * d + src] * col[k];
            }
            out[c * d + r] = sign * acc;
        }
    }
}

fn to_trajectory(model: &ChartModel, out: ode::OdeOutput, method: &Method) -> Trajectory {
    let n = model.dim();
    let interpolation = match method {
        Method::Rk4 { .. } => Interpolation::Nodal,
        Method::Adaptive { .. } => Interpolation::Dense,
    };
    Trajectory {
        model: model.name().to_string(),
        grid: out.times,
        q: out.states.iter().map(|s| DVector::from_column_slice(&s[..n])).collect(),
        p: Some(out.states.iter().map(|s| DVector::from_column_slice(&s[n..2 * n])).collect()),
        interpolation,
        exit_time: out.exit_time,
    }
}

/// Integrates the normal geodesic with initial covector `p0` over `span`.
pub fn integrate_geodesic(model: &ChartModel, q0: &DVector<f64>, p0: &DVector<f64>, span: (f64, f64), opts: &FlowOptions) -> Result<Trajectory> {
    model.check_domain(q0.as_slice())?;
    check_covector(model, p0)?;
    let n = model.dim();
    let y0: Vec<f64> = q0.iter().chain(p0.iter()).copied().collect();
    let out = ode::integrate(
        |_t, y, dy| rhs_into(model, y, dy),
        span.0,
        &y0,
        span.1,
        &opts.method,
        &opts.sampling(),
        |y| model.contains(&y[..n]) && y.iter().all(|v| v.is_finite()),
    )?;
    let traj = to_trajectory(model, out, &opts.method);
    if let Some(te) = traj.exit_time {
        return Err(Error::OutOfChart {
            point: traj.end().as_slice().to_vec(),
            time: Some(te),
            partial: Some(Box::new(traj)),
        });
    }
    if let Some(bound) = opts.drift_bound {
        let h0 = energy(model, q0.as_slice(), p0.as_slice());
        let drift = traj.energy_drift(model);
        if drift > bound * h0.max(1.0) {
            return Err(Error::EnergyDrift { drift, bound });
        }
    }
    Ok(traj)
}

/// Final phase state of the flow, without recording intermediate samples.
pub fn flow_endpoint(model: &ChartModel, q0: &DVector<f64>, p0: &DVector<f64>, span: (f64, f64), method: &Method) -> Result<PhaseState> {
    model.check_domain(q0.as_slice())?;
    check_covector(model, p0)?;
    let n = model.dim();
    let y0: Vec<f64> = q0.iter().chain(p0.iter()).copied().collect();
    let out = ode::integrate(
        |_t, y, dy| rhs_into(model, y, dy),
        span.0,
        &y0,
        span.1,
        method,
        &Sampling::Times(Vec::new()),
        |y| model.contains(&y[..n]) && y.iter().all(|v| v.is_finite()),
    )?;
    let last = out.last();
    if let Some(te) = out.exit_time {
        return Err(Error::OutOfChart {
            point: last[..n].to_vec(),
            time: Some(te),
            partial: None,
        });
    }
    Ok(PhaseState {
        t: span.1,
        q: DVector::from_column_slice(&last[..n]),
        p: DVector::from_column_slice(&last[n..]),
    })
}

/// Endpoint of the flow and its Jacobian `∂(q(b), p(b))/∂(q0, p0)`.
#[derive(Debug, Clone)]
pub struct FlowLinearization {
    pub end: PhaseState,
    pub jacobian: DMatrix<f64>,
}

impl FlowLinearization {
    pub fn dim(&self) -> usize {
        self.jacobian.nrows() / 2
    }

    /// The block `∂q(b)/∂p0` used by shooting.
    pub fn dq_dp0(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.jacobian.view((0, n), (n, n)).into_owned()
    }

    pub fn dq_dq0(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.jacobian.view((0, 0), (n, n)).into_owned()
    }

    pub fn dp_dq0(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.jacobian.view((n, 0), (n, n)).into_owned()
    }

    pub fn dp_dp0(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.jacobian.view((n, n), (n, n)).into_owned()
    }
}

/// Integrates the variational equations along the flow.
pub fn flow_linearization(model: &ChartModel, q0: &DVector<f64>, p0: &DVector<f64>, span: (f64, f64), opts: &FlowOptions) -> Result<FlowLinearization> {
    let mut out = linearize(model, q0, p0, span, &opts.method, &Sampling::Steps)?;
    Ok(out.pop().expect("at least one sample"))
}

/// As [`flow_linearization`], reported at `k + 1` equally spaced times.
pub fn flow_linearization_uniform(
    model: &ChartModel,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    span: (f64, f64),
    k: usize,
    method: &Method,
) -> Result<Vec<FlowLinearization>> {
    linearize(model, q0, p0, span, method, &Sampling::Uniform(k))
}

fn linearize(
    model: &ChartModel,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    span: (f64, f64),
    method: &Method,
    sampling: &Sampling,
) -> Result<Vec<FlowLinearization>> {
    model.check_domain(q0.as_slice())?;
    check_covector(model, p0)?;
    let n = model.dim();
    let d = 2 * n;
    let mut y0: Vec<f64> = q0.iter().chain(p0.iter()).copied().collect();
    y0.extend(DMatrix::<f64>::identity(d, d).iter());
    let mut hess = vec![0.0; d * d];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| linearized_rhs(model, y, dy, &mut hess);
    let out = ode::integrate(rhs, span.0, &y0, span.1, method, sampling, |y| {
        model.contains(&y[..n]) && y.iter().all(|v| v.is_finite())
    })?;
    if let Some(te) = out.exit_time {
        return Err(Error::OutOfChart {
            point: out.last()[..n].to_vec(),
            time: Some(te),
            partial: None,
        });
    }
    let keep = if matches!(sampling, Sampling::Steps) { out.times.len() - 1 } else { 0 };
    Ok(out
        .times
        .iter()
        .zip(&out.states)
        .skip(keep)
        .map(|(&t, y)| FlowLinearization {
            end: PhaseState {
                t,
                q: DVector::from_column_slice(&y[..n]),
                p: DVector::from_column_slice(&y[n..d]),
            },
            jacobian: DMatrix::from_column_slice(d, d, &y[d..]),
        })
        .collect())
}

/// `max_{nodes, i≤m} |p·X_i − g(γ̇, X_i)|`, where `γ̇` is recovered from the
/// sampled curve by five-point Lagrange differentiation.
pub fn lift_residual(model: &ChartModel, traj: &Trajectory) -> f64 {
    let Some(p) = &traj.p else {
        return 0.0;
    };
    let m = model.rank();
    let mut worst = 0.0_f64;
    for (j, (q, pj)) in traj.q.iter().zip(p).enumerate() {
        let f = model.frame_at(q.as_slice());
        let velocity = node_velocity(traj, j);
        // With an orthonormal horizontal frame, g(γ̇, X_i) is the i-th frame coordinate.
        let Some(coords) = f.clone().lu().solve(&velocity) else {
            return f64::INFINITY;
        };
        for i in 0..m {
            let lift = pj.dot(&f.column(i));
            worst = worst.max((lift - coords[i]).abs());
        }
    }
    worst
}

/// Derivative at node `j` of the interpolating polynomial through up to five
/// neighbouring nodes.
pub(crate) fn node_velocity(traj: &Trajectory, j: usize) -> DVector<f64> {
    let count = traj.len();
    let n = traj.q[0].len();
    if count < 2 {
        return DVector::zeros(n);
    }
    let width = count.min(5);
    let lo = j.saturating_sub(width / 2).min(count - width);
    let nodes: Vec<usize> = (lo..lo + width).collect();
    let t = &traj.grid;
    let mut v = DVector::zeros(n);
    for &a in &nodes {
        // d/dt of the Lagrange basis polynomial of node a, evaluated at t_j.
        let mut w = 0.0;
        for &b in &nodes {
            if b == a {
                continue;
            }
            let mut term = 1.0 / (t[a] - t[b]);
            for &c in &nodes {
                if c != a && c != b {
                    term *= (t[j] - t[c]) / (t[a] - t[c]);
                }
            }
            w += term;
        }
        // The weights sum to zero; differencing against q_j keeps constants exact.
        v.axpy(w, &(&traj.q[a] - &traj.q[j]), 1.0);
    }
    v
}

/// Frame coefficients of the analytic velocity at each node, from the lift.
pub fn lift_velocity_coordinates(model: &ChartModel, traj: &Trajectory) -> Option<Vec<DVector<f64>>> {
    let p = traj.p.as_ref()?;
    let m = model.rank();
    Some(
        traj.q
            .iter()
            .zip(p)
            .map(|(q, p)| {
                let f = model.frame_at(q.as_slice());
                DVector::from_fn(m, |i, _| p.dot(&f.column(i)))
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    #[test]
    fn hamiltonian_examples() {
        let h = ChartModel::heisenberg();
        let o = dvector![0.0, 0.0, 0.0];
        assert_eq!(hamiltonian(&h, &o, &dvector![0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(&h, &o, &dvector![1.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(hamiltonian(&h, &o, &dvector![0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian(&ChartModel::martinet(), &dvector![0.3, 1.0, 2.0], &DVector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn rhs_examples() {
        let (dq, dp) = hamilton_rhs(&ChartModel::flat(3, 2), &dvector![0.0, 0.0, 0.0], &dvector![1.5, -2.0, 7.0]).unwrap();
        assert_eq!(dq.as_slice(), &[1.5, -2.0, 0.0]);
        assert_eq!(dp.as_slice(), &[0.0, 0.0, 0.0]);

        let (dq, dp) = hamilton_rhs(&ChartModel::heisenberg(), &dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(dq.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(dp.as_slice(), &[0.0, 0.5, 0.0]);

        let (dq, dp) = hamilton_rhs(&ChartModel::martinet(), &dvector![0.4, 0.1, 0.0], &DVector::zeros(3)).unwrap();
        assert_eq!(dq.amax() + dp.amax(), 0.0);
    }

    #[test]
    fn heisenberg_straight_line() {
        let model = ChartModel::heisenberg();
        let traj = integrate_geodesic(&model, &dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], (0.0, 1.0), &FlowOptions::default()).unwrap();
        assert!((traj.end() - dvector![1.0, 0.0, 0.0]).amax() < 1e-12);
        for p in traj.p.as_ref().unwrap() {
            assert!((p - dvector![1.0, 0.0, 0.0]).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_covector_gives_constant_curve() {
        let model = ChartModel::martinet();
        let q0 = dvector![0.5, -0.2, 1.0];
        let traj = integrate_geodesic(&model, &q0, &DVector::zeros(3), (0.0, 2.0), &FlowOptions::fixed(16)).unwrap();
        assert!(traj.q.iter().all(|q| *q == q0));
    }

    #[test]
    fn heisenberg_full_circle_returns_to_axis() {
        // Reference: scipy DOP853 at rtol 1e-13 gives z(1) = 0.07957747154594216 (= 1/(4π)).
        let model = ChartModel::heisenberg();
        let traj = integrate_geodesic(
            &model,
            &dvector![0.0, 0.0, 0.0],
            &dvector![0.0, 1.0, 2.0 * PI],
            (0.0, 1.0),
            &FlowOptions::adaptive(1e-12),
        )
        .unwrap();
        let end = traj.end();
        assert!(end[0].abs() < 1e-10 && end[1].abs() < 1e-10, "{end}");
        assert!((end[2] - 0.079_577_471_545_942_16).abs() < 1e-10);
    }

    #[test]
    fn leaving_the_chart_returns_partial_trajectory() {
        let model = ChartModel::heisenberg().with_domain(crate::model::DomainBox(vec![[-0.5, 0.5]; 3]));
        let err = integrate_geodesic(&model, &dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], (0.0, 1.0), &FlowOptions::default()).unwrap_err();
        match err {
            Error::OutOfChart {
                time: Some(t),
                partial: Some(traj),
                ..
            } => {
                assert!((t - 0.5).abs() < 1e-9);
                assert!((traj.end()[0] - 0.5).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linearization_of_flat_flow() {
        let model = ChartModel::flat(3, 2);
        let lin = flow_linearization(&model, &dvector![0.0, 0.0, 0.0], &DVector::zeros(3), (0.0, 2.0), &FlowOptions::fixed(8)).unwrap();
        assert!((lin.dq_dq0() - DMatrix::identity(3, 3)).amax() < 1e-15);
        let want = DMatrix::from_diagonal(&dvector![2.0, 2.0, 0.0]);
        assert!((lin.dq_dp0() - want).amax() < 1e-14);

        let lin = flow_linearization(
            &ChartModel::heisenberg(),
            &dvector![0.1, 0.2, 0.3],
            &dvector![1.0, 2.0, 3.0],
            (0.5, 0.5),
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(lin.jacobian, DMatrix::identity(6, 6));
    }

    #[test]
    fn lift_residual_examples() {
        let model = ChartModel::heisenberg();
        let mut traj = integrate_geodesic(
            &model,
            &dvector![0.0, 0.0, 0.0],
            &dvector![0.3, 1.0, 1.0],
            (0.0, 1.0),
            &FlowOptions::adaptive(1e-12).with_samples(Some(1000)),
        )
        .unwrap();
        assert!(lift_residual(&model, &traj) < 1e-9, "{}", lift_residual(&model, &traj));
        for p in traj.p.as_mut().unwrap() {
            *p *= 2.0;
        }
        assert!(lift_residual(&model, &traj) > 0.5);

        let still = integrate_geodesic(&model, &dvector![1.0, 1.0, 1.0], &DVector::zeros(3), (0.0, 1.0), &FlowOptions::fixed(4)).unwrap();
        assert_eq!(lift_residual(&model, &still), 0.0);
    }
}
