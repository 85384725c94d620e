//! Wavefronts of normal geodesics leaving a hypersurface, the calibration
//! `dτ = λ` they induce, and empirical local-minimality certificates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::endpoint::{controls_to_curve, ControlCurve};
use crate::error::{Error, Result};
use crate::flow::{self, flow_endpoint, flow_linearization, flow_linearization_uniform, hamilton_rhs};
use crate::linalg;
use crate::model::ChartModel;
use crate::ode::Method;
use crate::solver::{direct_minimize_from_set, BvpSolution, DirectOptions, SubmanifoldSpec};

/// Below this ratio `|dG|_𝒟 / |dG|` the conormal cannot be normalized.
pub const NORMALIZATION_FLOOR: f64 = 1e-6;

/// A codimension-one level set with a chart `u ↦ x(u)` around `origin`.
#[derive(Debug, Clone)]
pub struct Hypersurface {
    level: SubmanifoldSpec,
    origin: DVector<f64>,
    basis: DMatrix<f64>,
}

impl Hypersurface {
    /// Parameterizes the level set near `origin` by projecting the tangent
    /// plane at `origin` back onto the set.
    pub fn through(level: SubmanifoldSpec, origin: DVector<f64>) -> Result<Self> {
        if level.is_point() || level.codim() != 1 {
            return Err(Error::invalid("a hypersurface needs exactly one constraint"));
        }
        if level.value(origin.as_slice()).amax() > 1e-8 {
            return Err(Error::invalid("origin is not on the hypersurface"));
        }
        let basis = level.tangent_basis(origin.as_slice(), None);
        if basis.ncols() + 1 != origin.len() {
            return Err(Error::invalid("hypersurface constraint is degenerate at the origin"));
        }
        Ok(Hypersurface { level, origin, basis })
    }

    /// Anchored at the level set's own anchor.
    pub fn new(level: SubmanifoldSpec) -> Result<Self> {
        let origin = level.anchor().clone();
        Self::through(level, origin)
    }

    /// The hyperplane through `point` annihilated by `normal`.
    pub fn hyperplane(point: DVector<f64>, normal: &DVector<f64>) -> Result<Self> {
        let n = point.len();
        if normal.len() != n || normal.norm() == 0.0 {
            return Err(Error::invalid("hyperplane normal must be a nonzero n-vector"));
        }
        let row = DMatrix::from_row_slice(1, n, normal.as_slice());
        let basis = linalg::null_space(&row, 1e-12 * normal.norm());
        let level = SubmanifoldSpec::affine(point.clone(), basis)?;
        Self::through(level, point)
    }

    pub fn level(&self) -> &SubmanifoldSpec {
        &self.level
    }

    pub fn origin(&self) -> &DVector<f64> {
        &self.origin
    }

    pub fn param_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn point(&self, u: &[f64]) -> Result<DVector<f64>> {
        let guess = &self.origin + &self.basis * DVector::from_column_slice(u);
        match &self.level {
            SubmanifoldSpec::LevelSet(s) => s.project(&guess),
            SubmanifoldSpec::Point(_) => unreachable!("checked in the constructor"),
        }
    }

    /// `dG(q)`.
    pub fn normal(&self, q: &[f64]) -> DVector<f64> {
        self.level.jacobian(q).row(0).transpose()
    }
}

/// `±dG / |dG|_𝒟`, or `None` where `dG` nearly vanishes on `𝒟`.
fn unit_conormal(model: &ChartModel, surface: &Hypersurface, q: &DVector<f64>, sign: f64) -> Option<DVector<f64>> {
    let dg = surface.normal(q.as_slice());
    let horizontal = (model.horizontal_at(q.as_slice()).transpose() * &dg).norm();
    if !(horizontal > NORMALIZATION_FLOOR * dg.norm()) {
        return None;
    }
    Some(dg * (sign / horizontal))
}

/// Sample grid of the wavefront map: `t` nodes times a box of `u` nodes,
/// spaced at most `spacing` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavefrontGrid {
    pub t_range: (f64, f64),
    pub u_box: Vec<[f64; 2]>,
    pub spacing: f64,
}

impl WavefrontGrid {
    /// `u ∈ [-w, w]^d`.
    pub fn centered(t_range: (f64, f64), half_width: f64, param_dim: usize, spacing: f64) -> Self {
        WavefrontGrid {
            t_range,
            u_box: vec![[-half_width, half_width]; param_dim],
            spacing,
        }
    }

    fn nodes(lo: f64, hi: f64, spacing: f64) -> Vec<f64> {
        let k = (((hi - lo) / spacing).round() as usize).max(1);
        crate::endpoint::uniform_grid((lo, hi), k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WavefrontSample {
    pub t: f64,
    pub u: Vec<f64>,
    pub q: Vec<f64>,
    /// The flowed covector, `λ` carried to `F(t, u)`.
    pub p: Vec<f64>,
    #[serde(skip)]
    pub df: DMatrix<f64>,
    pub det: f64,
    pub condition: f64,
}

/// `F(t, u) = π Φ_t(x(u), λ(x(u)))` sampled on a grid.
#[derive(Debug, Clone)]
pub struct WavefrontChart {
    model: ChartModel,
    surface: Hypersurface,
    sign: f64,
    method: Method,
    pub t_nodes: Vec<f64>,
    pub u_nodes: Vec<Vec<f64>>,
    /// Ordered by `u` multi-index (last axis fastest), then `t`.
    pub samples: Vec<WavefrontSample>,
}

fn multi_index(mut k: usize, sizes: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; sizes.len()];
    for a in (0..sizes.len()).rev() {
        idx[a] = k % sizes[a];
        k /= sizes[a];
    }
    idx
}

/// Builds the wavefront of unit-speed normal geodesics leaving `surface`
/// with initial covector the unit conormal on the side of `seed`.
pub fn build_wavefront(model: &ChartModel, surface: &Hypersurface, seed: &DVector<f64>, grid: &WavefrontGrid, method: &Method) -> Result<WavefrontChart> {
    let n = model.dim();
    let d = surface.param_dim();
    if surface.origin().len() != n || seed.len() != n {
        return Err(Error::invalid("hypersurface and seed must live in the model's chart"));
    }
    if grid.u_box.len() != d || !(grid.spacing > 0.0) || !(grid.t_range.1 > grid.t_range.0) {
        return Err(Error::invalid(format!(
            "wavefront grid needs {d} parameter ranges, a positive spacing and t1 > t0"
        )));
    }
    let along = (surface.basis.transpose() * seed).amax();
    if along > 1e-8 * seed.norm().max(1.0) {
        return Err(Error::invalid(format!(
            "seed covector does not annihilate the hypersurface (|λ·T| = {along:e})"
        )));
    }
    let sign = seed.dot(&surface.normal(surface.origin().as_slice())).signum();
    if sign == 0.0 {
        return Err(Error::invalid("seed covector is zero on the hypersurface normal"));
    }

    let t_nodes = WavefrontGrid::nodes(grid.t_range.0, grid.t_range.1, grid.spacing);
    let u_nodes: Vec<Vec<f64>> = grid.u_box.iter().map(|r| WavefrontGrid::nodes(r[0], r[1], grid.spacing)).collect();
    let sizes: Vec<usize> = u_nodes.iter().map(Vec::len).collect();
    let count: usize = sizes.iter().product();

    // First pass: base points and conormals, collecting every failure.
    let bases = (0..count)
        .into_par_iter()
        .map(|k| {
            let idx = multi_index(k, &sizes);
            let u: Vec<f64> = idx.iter().enumerate().map(|(a, &i)| u_nodes[a][i]).collect();
            let x = surface.point(&u)?;
            let lambda = unit_conormal(model, surface, &x, sign);
            Ok((u, x, lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    let failures: Vec<Vec<f64>> = bases.iter().filter(|b| b.2.is_none()).map(|b| b.1.as_slice().to_vec()).collect();
    if !failures.is_empty() {
        return Err(Error::NormalizationFailure { samples: failures });
    }

    let nt = t_nodes.len();
    let columns = bases
        .par_iter()
        .map(|(u, x, lambda)| {
            let lambda = lambda.as_ref().expect("checked above");
            // ∂x/∂u and ∂λ/∂u by central differences in u.
            let mut dx = DMatrix::zeros(n, d);
            let mut dl = DMatrix::zeros(n, d);
            let mut v = u.clone();
            for a in 0..d {
                let h = linalg::fd_step(u[a], 1e-6, 1e-6);
                v[a] = u[a] + h;
                let xp = surface.point(&v)?;
                v[a] = u[a] - h;
                let xm = surface.point(&v)?;
                v[a] = u[a];
                let conormal = |q: &DVector<f64>| {
                    unit_conormal(model, surface, q, sign).ok_or_else(|| Error::NormalizationFailure {
                        samples: vec![q.as_slice().to_vec()],
                    })
                };
                let lp = conormal(&xp)?;
                let lm = conormal(&xm)?;
                dx.set_column(a, &((xp - xm) / (2.0 * h)));
                dl.set_column(a, &((lp - lm) / (2.0 * h)));
            }
            let lins = sampled_linearization(model, x, lambda, (grid.t_range.0, grid.t_range.1), nt - 1, method)?;
            lins.into_iter()
                .zip(&t_nodes)
                .map(|((q, p, jac), &t)| {
                    let (qdot, _) = hamilton_rhs(model, &q, &p)?;
                    let mut df = DMatrix::zeros(n, n);
                    df.set_column(0, &qdot);
                    let jqq = jac.view((0, 0), (n, n));
                    let jqp = jac.view((0, n), (n, n));
                    let du = jqq * &dx + jqp * &dl;
                    df.columns_mut(1, d).copy_from(&du);
                    let det = df.determinant();
                    let condition = linalg::condition_number(&df);
                    Ok(WavefrontSample {
                        t,
                        u: u.clone(),
                        q: q.as_slice().to_vec(),
                        p: p.as_slice().to_vec(),
                        df,
                        det,
                        condition,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(WavefrontChart {
        model: model.clone(),
        surface: surface.clone(),
        sign,
        method: *method,
        t_nodes,
        u_nodes,
        samples: columns.into_iter().flatten().collect(),
    })
}

type Linearized = (DVector<f64>, DVector<f64>, DMatrix<f64>);

/// Flow and Jacobian from time 0 at `k + 1` uniform times on `span`.
fn sampled_linearization(model: &ChartModel, x: &DVector<f64>, lambda: &DVector<f64>, span: (f64, f64), k: usize, method: &Method) -> Result<Vec<Linearized>> {
    let n = model.dim();
    let (q0, p0, pre) = if span.0 == 0.0 {
        (x.clone(), lambda.clone(), DMatrix::identity(2 * n, 2 * n))
    } else {
        let opts = flow::FlowOptions {
            method: *method,
            samples: None,
            drift_bound: None,
        };
        let lin = flow_linearization(model, x, lambda, (0.0, span.0), &opts)?;
        (lin.end.q, lin.end.p, lin.jacobian)
    };
    Ok(flow_linearization_uniform(model, &q0, &p0, span, k, method)?
        .into_iter()
        .map(|l| (l.end.q, l.end.p, l.jacobian * &pre))
        .collect())
}

/// Coordinates `(t, u)` of a point in the wavefront chart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartPoint {
    pub t: f64,
    pub u: Vec<f64>,
    /// Whether `(t, u)` lies in the sampled box.
    pub inside: bool,
}

impl WavefrontChart {
    pub fn model(&self) -> &ChartModel {
        &self.model
    }

    pub fn surface(&self) -> &Hypersurface {
        &self.surface
    }

    /// Grid spacing along `t`.
    pub fn spacing(&self) -> f64 {
        self.t_nodes[1] - self.t_nodes[0]
    }

    pub fn min_abs_det(&self) -> f64 {
        self.samples.iter().map(|s| s.det.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn max_condition(&self) -> f64 {
        self.samples.iter().map(|s| s.condition).fold(0.0, f64::max)
    }

    /// `λ(x(u))`.
    pub fn covector_at(&self, u: &[f64]) -> Result<DVector<f64>> {
        let x = self.surface.point(u)?;
        unit_conormal(&self.model, &self.surface, &x, self.sign).ok_or_else(|| Error::NormalizationFailure {
            samples: vec![x.as_slice().to_vec()],
        })
    }

    /// `F(t, u)`.
    pub fn eval(&self, t: f64, u: &[f64]) -> Result<DVector<f64>> {
        let x = self.surface.point(u)?;
        if t == 0.0 {
            return Ok(x);
        }
        let lambda = self.covector_at(u)?;
        Ok(flow_endpoint(&self.model, &x, &lambda, (0.0, t), &self.method)?.q)
    }

    fn nearest(&self, y: &DVector<f64>) -> &WavefrontSample {
        self.samples
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.q.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum();
                let db: f64 = b.q.iter().zip(y.iter()).map(|(p, q)| (p - q).powi(2)).sum();
                da.total_cmp(&db)
            })
            .expect("chart has samples")
    }

    /// Inverts `F` by chord iterations from the nearest sample.
    pub fn invert(&self, y: &DVector<f64>) -> Result<ChartPoint> {
        let start = self.nearest(y);
        let lu = start.df.clone().lu();
        let mut z = DVector::from_iterator(y.len(), std::iter::once(start.t).chain(start.u.iter().copied()));
        let tol = 1e-13 * (1.0 + y.amax());
        let mut residual = f64::INFINITY;
        for _ in 0..60 {
            let f = self.eval(z[0], &z.as_slice()[1..])?;
            let r = y - f;
            residual = r.amax();
            if residual <= tol {
                let (t, u) = (z[0], z.as_slice()[1..].to_vec());
                let slack = 1e-9;
                let inside = t >= self.t_nodes[0] - slack
                    && t <= self.t_nodes[self.t_nodes.len() - 1] + slack
                    && u.iter()
                        .zip(&self.u_nodes)
                        .all(|(v, nodes)| *v >= nodes[0] - slack && *v <= nodes[nodes.len() - 1] + slack);
                return Ok(ChartPoint { t, u, inside });
            }
            let step = lu.solve(&r).ok_or(Error::SingularJacobian {
                samples: vec![start.q.clone()],
            })?;
            z += step;
        }
        Err(Error::NoConvergence { residual })
    }

    /// `τ(y)`, the wavefront time through `y`.
    pub fn tau(&self, y: &DVector<f64>) -> Result<f64> {
        Ok(self.invert(y)?.t)
    }

    /// One row per sample: `t,u1..,q1..,p1..,det,cond`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let n = self.model.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..n).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("q{i}")));
        header.extend((1..=n).map(|i| format!("p{i}")));
        header.extend(["det".to_string(), "cond".to_string()]);
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let row: Vec<String> = std::iter::once(s.t)
                .chain(s.u.iter().copied())
                .chain(s.q.iter().copied())
                .chain(s.p.iter().copied())
                .chain([s.det, s.condition])
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Central-difference step for `dτ`; the chart spacing when `None`.
    pub fd_step: Option<f64>,
    /// Number of interior samples checked.
    pub max_points: usize,
    /// Samples with `|det dF|` below this are reported as singular.
    pub det_tol: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            fd_step: None,
            max_points: 32,
            det_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    /// `max ‖dτ − λ∘F‖_∞` over the checked samples.
    pub covector_residual: f64,
    /// `max |Σ (dτ·X_i)² − 1|`.
    pub normalization_residual: f64,
    pub fd_step: f64,
    pub points: usize,
    pub min_abs_det: f64,
}

impl CalibrationReport {
    pub fn residual(&self) -> f64 {
        self.covector_residual.max(self.normalization_residual)
    }
}

/// Compares the central-difference gradient of `τ` with the flowed
/// covector at interior samples of the chart.
pub fn calibration_check(chart: &WavefrontChart, opts: &CalibrationOptions) -> Result<CalibrationReport> {
    let singular: Vec<Vec<f64>> = chart.samples.iter().filter(|s| !(s.det.abs() >= opts.det_tol)).map(|s| s.q.clone()).collect();
    if !singular.is_empty() {
        return Err(Error::SingularJacobian { samples: singular });
    }
    let nt = chart.t_nodes.len();
    let sizes: Vec<usize> = chart.u_nodes.iter().map(Vec::len).collect();
    let interior: Vec<&WavefrontSample> = chart
        .samples
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let (iu, it) = (k / nt, k % nt);
            it > 0 && it + 1 < nt && multi_index(iu, &sizes).iter().zip(&sizes).all(|(&i, &s)| i > 0 && i + 1 < s)
        })
        .map(|(_, s)| s)
        .collect();
    if interior.is_empty() {
        return Err(Error::invalid("wavefront grid has no interior samples"));
    }
    let stride = interior.len().div_ceil(opts.max_points.max(1));
    let checked: Vec<&WavefrontSample> = interior.into_iter().step_by(stride).collect();
    let h = opts.fd_step.unwrap_or_else(|| chart.spacing());
    let n = chart.model.dim();
    let results = checked
        .par_iter()
        .map(|s| {
            let y = DVector::from_column_slice(&s.q);
            let mut dtau = DVector::zeros(n);
            for k in 0..n {
                let mut e = DVector::zeros(n);
                e[k] = h;
                dtau[k] = (chart.tau(&(&y + &e))? - chart.tau(&(&y - &e))?) / (2.0 * h);
            }
            let lambda = DVector::from_column_slice(&s.p);
            let horizontal = chart.model.horizontal_at(&s.q).transpose() * &dtau;
            Ok(((&dtau - lambda).amax(), (horizontal.norm_squared() - 1.0).abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationReport {
        covector_residual: results.iter().map(|r| r.0).fold(0.0, f64::max),
        normalization_residual: results.iter().map(|r| r.1).fold(0.0, f64::max),
        fd_step: h,
        points: checked.len(),
        min_abs_det: chart.min_abs_det(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub curves: usize,
    /// `min (ℓ(μ) − τ(μ(b)))` over the accepted curves.
    pub worst_margin: f64,
    /// Curves rejected for leaving the sampled chart.
    pub rejected: usize,
}

/// Random horizontal curves starting on the hypersurface and staying in the
/// chart: each satisfies `ℓ(μ) ≥ τ(μ(b))` when `τ` calibrates.
pub fn lower_bound_check(chart: &WavefrontChart, count: usize, seed: u64) -> Result<LowerBoundReport> {
    let model = &chart.model;
    let (n, m) = (model.dim(), model.rank());
    let t_hi = chart.t_nodes[chart.t_nodes.len() - 1];
    if !(t_hi > 0.0) {
        return Err(Error::invalid("chart has no positive times"));
    }
    let intervals = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = Vec::with_capacity(count);
    let mut rejected = 0;
    while margins.len() < count {
        if rejected > 50 * count.max(1) {
            return Err(Error::invalid("could not place test curves inside the chart"));
        }
        let u: Vec<f64> = chart
            .u_nodes
            .iter()
            .map(|nodes| {
                let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
                let c = 0.5 * (lo + hi);
                c + 0.5 * (hi - lo) * (rng.random::<f64>() - 0.5)
            })
            .collect();
        let x = chart.surface.point(&u)?;
        let lambda = chart.covector_at(&u)?;
        let ahead = model.horizontal_at(x.as_slice()).transpose() * &lambda;
        let duration = t_hi * (0.3 + 0.6 * rng.random::<f64>());
        let wobble = 0.2 + 0.8 * rng.random::<f64>();
        let coeffs: Vec<[f64; 2]> = (0..2 * m).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
        let c = ControlCurve::from_fn(x.clone(), (0.0, duration), intervals, |t| {
            let s = t / duration;
            let mut h = DVector::zeros(n);
            for i in 0..m {
                let w = (0..2)
                    .map(|k| {
                        let (a, b) = (coeffs[i * 2 + k][0], coeffs[i * 2 + k][1]);
                        let f = std::f64::consts::PI * (k + 1) as f64 * s;
                        a * f.sin() + b * f.cos()
                    })
                    .sum::<f64>();
                h[i] = ahead[i] + wobble * w;
            }
            h
        })?;
        let curve = match controls_to_curve(model, &c) {
            Ok(curve) => curve,
            Err(Error::OutOfChart { .. }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut inside = true;
        let mut tau_end = 0.0;
        for q in curve.q.iter().skip(1) {
            match chart.invert(q) {
                Ok(p) if p.inside => tau_end = p.t,
                Ok(_) | Err(Error::NoConvergence { .. }) | Err(Error::OutOfChart { .. }) => {
                    inside = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !inside {
            rejected += 1;
            continue;
        }
        let length: f64 = c.horizontal_speeds(m).iter().enumerate().map(|(j, s)| s * c.dt(j)).sum();
        margins.push(length - tau_end);
    }
    Ok(LowerBoundReport {
        curves: count,
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        rejected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    /// Calibration residual threshold.
    pub calibration_tol: f64,
    /// Relative length gap above which the oracle counts as a shorter competitor.
    pub oracle_tol: f64,
    pub det_tol: f64,
    /// Half-width of the `u` box; `ε/2` when `None`.
    pub half_width: Option<f64>,
    /// Chart grid spacing; `ε/10` when `None`.
    pub spacing: Option<f64>,
    pub calibration: CalibrationOptions,
    pub direct: DirectOptions,
    pub method: Method,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        CertificateOptions {
            calibration_tol: 1e-3,
            oracle_tol: 1e-4,
            det_tol: 1e-8,
            half_width: None,
            spacing: None,
            calibration: CalibrationOptions::default(),
            direct: DirectOptions::default(),
            method: Method::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateVerdict {
    CertifiedAtTolerance,
    Inconclusive,
}

/// Which evidence the certificate rests on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateMode {
    /// `P` is a point: no hypersurface exists, only the oracle runs.
    OracleOnly,
    /// `P` is itself a hypersurface.
    Hypersurface,
    /// The hyperplane through `γ(a)` annihilated by `Γ(a)`.
    Hyperplane,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimalityCertificate {
    pub verdict: CertificateVerdict,
    pub mode: CertificateMode,
    pub epsilon: f64,
    #[serde(rename = "min_abs_det_dF")]
    pub min_abs_det_df: Option<f64>,
    pub calibration_residual: Option<f64>,
    /// `(ℓ(γ) − ℓ(oracle)) / ℓ(γ)`; positive when the oracle is shorter.
    pub oracle_gap: f64,
    pub oracle_converged: bool,
    pub shorter_competitor: bool,
    pub geodesic_length: f64,
    pub oracle_length: f64,
    pub calibration_tol: f64,
    pub oracle_tol: f64,
}

impl MinimalityCertificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == CertificateVerdict::CertifiedAtTolerance
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("certificate serializes")
    }
}

/// Empirical evidence that `γ|[a, a+ε]` minimizes length from `P` to
/// `γ(a+ε)`: a nonsingular wavefront chart, a small calibration residual
/// and a direct-minimization oracle that finds nothing shorter.
pub fn minimality_certificate(
    model: &ChartModel,
    start: &SubmanifoldSpec,
    geodesic: &BvpSolution,
    epsilon: f64,
    opts: &CertificateOptions,
) -> Result<MinimalityCertificate> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let (q0, p0) = (&geodesic.q0, &geodesic.p0);
    let a = geodesic.span.0;
    let speed = (2.0 * flow::hamiltonian(model, q0, p0)?).sqrt();
    if !(speed > 0.0) {
        return Err(Error::ZeroLength);
    }
    if !start.is_point() {
        let tangent = start.tangent_basis(q0.as_slice(), None);
        let off = (tangent.transpose() * p0).amax();
        if start.value(q0.as_slice()).amax() > 1e-8 || off > 1e-8 * p0.norm().max(1.0) {
            return Err(Error::invalid(format!("geodesic does not leave the start set orthogonally (|p0·T| = {off:e})")));
        }
    }
    let target = flow_endpoint(model, q0, p0, (a, a + epsilon), &opts.method)?.q;
    let geodesic_length = speed * epsilon;

    let mode = if start.is_point() {
        CertificateMode::OracleOnly
    } else if start.codim() == 1 {
        CertificateMode::Hypersurface
    } else {
        CertificateMode::Hyperplane
    };
    let (min_det, calibration) = match mode {
        CertificateMode::OracleOnly => (None, None),
        _ => {
            let surface = match mode {
                CertificateMode::Hypersurface => Hypersurface::through(start.clone(), q0.clone())?,
                _ => Hypersurface::hyperplane(q0.clone(), p0)?,
            };
            let grid = WavefrontGrid::centered(
                (0.0, geodesic_length),
                opts.half_width.unwrap_or(0.5 * geodesic_length),
                surface.param_dim(),
                opts.spacing.unwrap_or(0.1 * geodesic_length),
            );
            let chart = build_wavefront(model, &surface, p0, &grid, &opts.method)?;
            let min_det = chart.min_abs_det();
            let calib = if min_det >= opts.det_tol {
                let copts = CalibrationOptions {
                    det_tol: opts.det_tol,
                    ..opts.calibration.clone()
                };
                Some(calibration_check(&chart, &copts)?.residual())
            } else {
                None
            };
            (Some(min_det), calib)
        }
    };

    let oracle = direct_minimize_from_set(model, start, &target, (a, a + epsilon), &opts.direct)?;
    let oracle_gap = (geodesic_length - oracle.length) / geodesic_length;
    let shorter_competitor = oracle.converged && oracle_gap > opts.oracle_tol;
    let chart_ok = match mode {
        CertificateMode::OracleOnly => true,
        _ => min_det.is_some_and(|d| d >= opts.det_tol) && calibration.is_some_and(|c| c <= opts.calibration_tol),
    };
    let verdict = if chart_ok && oracle.converged && !shorter_competitor {
        CertificateVerdict::CertifiedAtTolerance
    } else {
        CertificateVerdict::Inconclusive
    };
    Ok(MinimalityCertificate {
        verdict,
        mode,
        epsilon,
        min_abs_det_df: min_det,
        calibration_residual: calibration,
        oracle_gap,
        oracle_converged: oracle.converged,
        shorter_competitor,
        geodesic_length,
        oracle_length: oracle.length,
        calibration_tol: opts.calibration_tol,
        oracle_tol: opts.oracle_tol,
    })
}

/// Largest of `epsilons` whose certificate passes, with all certificates.
pub fn largest_certified_epsilon(
    model: &ChartModel,
    start: &SubmanifoldSpec,
    geodesic: &BvpSolution,
    epsilons: &[f64],
    opts: &CertificateOptions,
) -> Result<(Option<f64>, Vec<MinimalityCertificate>)> {
    let certs = epsilons
        .iter()
        .map(|&e| minimality_certificate(model, start, geodesic, e, opts))
        .collect::<Result<Vec<_>>>()?;
    let best = certs
        .iter()
        .filter(|c| c.is_certified())
        .map(|c| c.epsilon)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    Ok((best, certs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn plane(sources: &[&str]) -> Hypersurface {
        Hypersurface::new(SubmanifoldSpec::expressions(sources, DVector::zeros(3)).unwrap()).unwrap()
    }

    #[test]
    fn flat_wavefront_is_a_translation() {
        let model = ChartModel::flat(3, 2);
        let s = plane(&["q1"]);
        let grid = WavefrontGrid::centered((0.0, 0.2), 0.1, 2, 0.05);
        let chart = build_wavefront(&model, &s, &dvector![1.0, 0.0, 0.0], &grid, &Method::default()).unwrap();
        for sample in &chart.samples {
            assert!((sample.det.abs() - 1.0).abs() < 1e-8);
            assert!((sample.condition - 1.0).abs() < 1e-6);
            assert!((sample.q[0] - sample.t).abs() < 1e-12);
        }
        let report = calibration_check(&chart, &CalibrationOptions::default()).unwrap();
        assert!(report.residual() <= 1e-8, "{report:?}");
    }

    #[test]
    fn heisenberg_vertical_plane_is_sheared() {
        let model = ChartModel::heisenberg();
        let s = plane(&["q1"]);
        let grid = WavefrontGrid::centered((0.0, 0.2), 0.1, 2, 0.05);
        let chart = build_wavefront(&model, &s, &dvector![1.0, 0.0, 0.0], &grid, &Method::default()).unwrap();
        assert!(chart.min_abs_det() > 0.5);
        // F(t, y, z) = (t, y, z − y t / 2) for the plane {x = 0}.
        for sample in &chart.samples {
            let x = s.point(&sample.u).unwrap();
            let (y, z) = (x[1], x[2]);
            let exact = [sample.t, y, z - 0.5 * y * sample.t];
            assert!(sample.q.iter().zip(exact).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn tau_along_the_central_geodesic() {
        let model = ChartModel::heisenberg();
        let s = plane(&["q1 + q3"]);
        let seed = dvector![1.0, 0.0, 1.0];
        let grid = WavefrontGrid::centered((0.0, 0.2), 0.05, 2, 0.02);
        let chart = build_wavefront(&model, &s, &seed, &grid, &Method::default()).unwrap();
        let lambda = chart.covector_at(&[0.0, 0.0]).unwrap();
        for k in 1..=5 {
            let t = 0.033 * k as f64;
            let q = flow_endpoint(&model, &DVector::zeros(3), &lambda, (0.0, t), &Method::default()).unwrap().q;
            assert!((chart.tau(&q).unwrap() - t).abs() < 1e-6);
        }
    }

    #[test]
    fn tilted_plane_calibrates() {
        let model = ChartModel::heisenberg();
        let s = plane(&["q1 + q3"]);
        let grid = WavefrontGrid::centered((0.0, 0.2), 0.05, 2, 0.02);
        let chart = build_wavefront(&model, &s, &dvector![1.0, 0.0, 1.0], &grid, &Method::default()).unwrap();
        let coarse = calibration_check(&chart, &CalibrationOptions::default()).unwrap();
        let fine = calibration_check(
            &chart,
            &CalibrationOptions {
                fd_step: Some(0.01),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fine.residual() < coarse.residual() / 3.0, "{coarse:?} {fine:?}");
        let bound = lower_bound_check(&chart, 10, 4).unwrap();
        assert!(bound.worst_margin >= -1e-4, "{bound:?}");
    }

    #[test]
    fn martinet_normalization_failure() {
        let model = ChartModel::martinet();
        let s = plane(&["q3"]);
        let grid = WavefrontGrid::centered((0.0, 0.1), 0.1, 2, 0.05);
        match build_wavefront(&model, &s, &dvector![0.0, 0.0, 1.0], &grid, &Method::default()) {
            Err(Error::NormalizationFailure { samples }) => {
                assert!(!samples.is_empty());
                assert!(samples.iter().all(|q| q[0].abs() < 1e-12));
            }
            other => panic!("expected a normalization failure, got {:?}", other.map(|c| c.samples.len())),
        }
    }

    #[test]
    fn seed_must_annihilate_the_surface() {
        let model = ChartModel::flat(3, 2);
        let grid = WavefrontGrid::centered((0.0, 0.1), 0.1, 2, 0.05);
        let r = build_wavefront(&model, &plane(&["q1"]), &dvector![1.0, 1.0, 0.0], &grid, &Method::default());
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
