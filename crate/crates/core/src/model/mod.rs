//! Sub-Riemannian manifolds described in a single coordinate chart.
//!
//! A model is an adapted referential `X_1, .., X_n` of the tangent space:
//! the first `m` fields are a g-orthonormal frame of the distribution, the
//! remaining `k = n - m` fields span a chosen complement. The Riemannian
//! extension `ḡ` declares the full frame orthonormal, so on covectors
//! `ḡ⁻¹(a, b) = Σ_i a(X_i) b(X_i)`.

mod builtin;
pub mod expr;
mod file;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use builtin::{Flat, Heisenberg, Martinet};
pub use file::{ExpressionFrame, ModelFile};

/// Names of the builtin models, in registry order.
pub const BUILTIN_MODELS: [&str; 3] = ["flat", "heisenberg", "martinet"];

/// Version tag of the builtin registry.
pub const BUILTIN_REGISTRY_VERSION: u32 = 1;

/// Frame provider behind a [`ChartModel`].
///
/// `fields` returns the `n x n` matrix whose columns are `X_1 .. X_n`.
/// Jacobians are indexed `J_i[(j, k)] = ∂(X_i)_j / ∂q_k`; second derivatives
/// are indexed `D[i][k][(j, l)] = ∂²(X_i)_j / ∂q_l ∂q_k`.
pub trait VectorFields: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn rank(&self) -> usize;
    fn fields(&self, q: &[f64]) -> DMatrix<f64>;
    fn jacobians(&self, _q: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    fn second_derivatives(&self, _q: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JacobianSource {
    Analytic,
    /// Central differences with step `max(rel_step * |q_k|, floor)`.
    FiniteDifference {
        rel_step: f64,
        floor: f64,
    },
}

impl JacobianSource {
    pub fn finite_difference() -> Self {
        JacobianSource::FiniteDifference { rel_step: 1e-6, floor: 1e-8 }
    }
}

/// Closed axis-aligned box `[lo_i, hi_i]` bounding the chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox(pub Vec<[f64; 2]>);

impl DomainBox {
    pub fn contains(&self, q: &[f64]) -> bool {
        self.0.iter().zip(q).all(|([lo, hi], x)| *x >= *lo && *x <= *hi)
    }
}

/// A sub-Riemannian manifold in one chart.
#[derive(Clone)]
pub struct ChartModel {
    name: String,
    fields: Arc<dyn VectorFields>,
    jacobian_source: JacobianSource,
    domain: Option<DomainBox>,
}

impl fmt::Debug for ChartModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChartModel")
            .field("name", &self.name)
            .field("n", &self.dim())
            .field("m", &self.rank())
            .field("jacobian_source", &self.jacobian_source)
            .field("domain", &self.domain)
            .finish()
    }
}

/// Sample of the annihilator coframe: `k` rows, each an n-covector.
#[derive(Debug, Clone, PartialEq)]
pub struct Coframe {
    pub rows: DMatrix<f64>,
}

impl Coframe {
    pub fn codim(&self) -> usize {
        self.rows.nrows()
    }
    pub fn row(&self, j: usize) -> DVector<f64> {
        self.rows.row(j).transpose()
    }
}

impl ChartModel {
    pub fn new(name: impl Into<String>, fields: Arc<dyn VectorFields>) -> Result<Self> {
        let (n, m) = (fields.dim(), fields.rank());
        if n == 0 || m == 0 || m > n {
            return Err(Error::invalid(format!("model needs 0 < m <= n, got n = {n}, m = {m}")));
        }
        Ok(ChartModel {
            name: name.into(),
            fields,
            jacobian_source: JacobianSource::Analytic,
            domain: None,
        })
    }

    /// Looks up a builtin model: `flat`, `heisenberg` or `martinet`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "flat" => Ok(Self::flat(3, 2)),
            "heisenberg" => Ok(Self::heisenberg()),
            "martinet" => Ok(Self::martinet()),
            other => Err(Error::invalid(format!(
                "unknown builtin model '{other}' (known: {})",
                BUILTIN_MODELS.join(", ")
            ))),
        }
    }

    /// Resolves a builtin name, or else loads a JSON model file from that path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_MODELS.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else {
            ModelFile::load(name_or_path)?.into_model()
        }
    }

    pub fn flat(n: usize, m: usize) -> Self {
        Self::new("flat", Arc::new(Flat { n, m })).expect("valid flat dimensions")
    }

    pub fn heisenberg() -> Self {
        Self::new("heisenberg", Arc::new(Heisenberg)).expect("builtin")
    }

    pub fn martinet() -> Self {
        Self::new("martinet", Arc::new(Martinet)).expect("builtin")
    }

    pub fn with_jacobian_source(mut self, source: JacobianSource) -> Self {
        self.jacobian_source = source;
        self
    }

    pub fn with_domain(mut self, domain: DomainBox) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Chart dimension `n`.
    pub fn dim(&self) -> usize {
        self.fields.dim()
    }

    /// Horizontal rank `m`.
    pub fn rank(&self) -> usize {
        self.fields.rank()
    }

    /// Codimension `k = n - m` of the distribution.
    pub fn codim(&self) -> usize {
        self.dim() - self.rank()
    }

    pub fn jacobian_source(&self) -> JacobianSource {
        self.jacobian_source
    }

    pub fn domain(&self) -> Option<&DomainBox> {
        self.domain.as_ref()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter().all(|x| x.is_finite()) && self.domain.as_ref().is_none_or(|d| d.contains(q))
    }

    pub fn check_domain(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has {} coordinates, model '{}' has dimension {}",
                q.len(),
                self.name,
                self.dim()
            )));
        }
        if self.contains(q) {
            Ok(())
        } else {
            Err(Error::OutOfChart {
                point: q.to_vec(),
                time: None,
                partial: None,
            })
        }
    }

    /// Full frame `[X_1 .. X_n](q)` after the domain and rank checks.
    pub fn eval_frame(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_domain(q.as_slice())?;
        let f = self.fields.fields(q.as_slice());
        let s = linalg::singular_values(&f);
        let ratio = s.last().copied().unwrap_or(0.0) / s[0].max(f64::MIN_POSITIVE);
        if !(ratio > 1e-10) {
            return Err(Error::DegenerateFrame {
                point: q.as_slice().to_vec(),
                ratio,
            });
        }
        Ok(f)
    }

    /// Unchecked full frame, for inner loops that validated the domain already.
    pub fn frame_at(&self, q: &[f64]) -> DMatrix<f64> {
        self.fields.fields(q)
    }

    /// Horizontal columns `X_1 .. X_m` (unchecked).
    pub fn horizontal_at(&self, q: &[f64]) -> DMatrix<f64> {
        self.frame_at(q).columns(0, self.rank()).into_owned()
    }

    /// Jacobians of the horizontal fields `∂X_i/∂q`, `i <= m`.
    pub fn frame_jacobian(&self, q: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_domain(q.as_slice())?;
        let mut all = self.jacobians_at(q.as_slice());
        all.truncate(self.rank());
        Ok(all)
    }

    /// Jacobians of all `n` frame fields (unchecked).
    pub fn jacobians_at(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        match self.jacobian_source {
            JacobianSource::Analytic => self.fields.jacobians(q).unwrap_or_else(|| self.fd_jacobians(q, 1e-6, 1e-8)),
            JacobianSource::FiniteDifference { rel_step, floor } => self.fd_jacobians(q, rel_step, floor),
        }
    }

    /// Central-difference Jacobians of all frame fields.
    pub fn fd_jacobians(&self, q: &[f64], rel_step: f64, floor: f64) -> Vec<DMatrix<f64>> {
        let n = self.dim();
        let mut out = vec![DMatrix::zeros(n, n); n];
        let mut qp = q.to_vec();
        for k in 0..n {
            let h = linalg::fd_step(q[k], rel_step, floor);
            qp[k] = q[k] + h;
            let fp = self.fields.fields(&qp);
            qp[k] = q[k] - h;
            let fm = self.fields.fields(&qp);
            qp[k] = q[k];
            for (i, jac) in out.iter_mut().enumerate() {
                for j in 0..n {
                    jac[(j, k)] = (fp[(j, i)] - fm[(j, i)]) / (2.0 * h);
                }
            }
        }
        out
    }

    /// Second derivatives of the horizontal fields, `D[i][k] = ∂J_i/∂q_k`.
    pub fn second_derivatives_at(&self, q: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let m = self.rank();
        if self.jacobian_source == JacobianSource::Analytic {
            if let Some(mut d) = self.fields.second_derivatives(q) {
                d.truncate(m);
                return d;
            }
        }
        let n = self.dim();
        let step = match self.jacobian_source {
            JacobianSource::Analytic if self.fields.jacobians(q).is_some() => 1e-6,
            _ => 1e-4,
        };
        let mut out = vec![vec![DMatrix::zeros(n, n); n]; m];
        let mut qp = q.to_vec();
        for k in 0..n {
            let h = linalg::fd_step(q[k], step, step * 1e-2);
            qp[k] = q[k] + h;
            let jp = self.jacobians_at(&qp);
            qp[k] = q[k] - h;
            let jm = self.jacobians_at(&qp);
            qp[k] = q[k];
            for i in 0..m {
                out[i][k] = (&jp[i] - &jm[i]) / (2.0 * h);
            }
        }
        out
    }

    /// Dual metric `ḡ⁻¹ = F F^T` on covectors.
    pub fn dual_metric_at(&self, q: &[f64]) -> DMatrix<f64> {
        let f = self.frame_at(q);
        &f * f.transpose()
    }

    /// Basis of the annihilator of the distribution, orthonormal for `ḡ⁻¹`:
    /// the last `k` rows of `F⁻¹`, i.e. the coframe dual to the complement
    /// fields. It varies smoothly with `q`.
    pub fn annihilator_coframe(&self, q: &DVector<f64>) -> Result<Coframe> {
        let f = self.eval_frame(q)?;
        let (n, m) = (self.dim(), self.rank());
        let inv = f.clone().try_inverse().ok_or_else(|| Error::DegenerateFrame {
            point: q.as_slice().to_vec(),
            ratio: 0.0,
        })?;
        Ok(Coframe {
            rows: inv.rows(m, n - m).into_owned(),
        })
    }

    /// Matrix `θ_j(X_{m+l})`, the coframe restricted to the complement.
    pub fn coframe_on_complement(&self, q: &DVector<f64>, coframe: &Coframe) -> DMatrix<f64> {
        let f = self.frame_at(q.as_slice());
        &coframe.rows * f.columns(self.rank(), self.codim())
    }
}
