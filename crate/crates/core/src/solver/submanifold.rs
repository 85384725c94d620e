use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::expr::Expr;
use crate::model::ChartModel;

/// A map `G: ℝⁿ → ℝʳ` whose zero set is a regular submanifold.
pub trait LevelSetMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn codim(&self) -> usize;
    fn value(&self, q: &[f64]) -> DVector<f64>;
    /// Analytic `r × n` Jacobian, if available.
    fn jacobian(&self, _q: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `{q : N (q - x0) = 0}` with the rows of `N` as normals.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub point: DVector<f64>,
    pub normals: DMatrix<f64>,
}

impl AffineMap {
    /// The affine subspace through `point` spanned by the columns of `directions`.
    pub fn through(point: DVector<f64>, directions: &DMatrix<f64>) -> Self {
        let n = point.len();
        let thr = 1e-12 * directions.amax().max(1.0);
        let normals = if directions.ncols() == 0 {
            DMatrix::identity(n, n)
        } else {
            linalg::null_space(&directions.transpose(), thr).transpose()
        };
        AffineMap { point, normals }
    }
}

impl LevelSetMap for AffineMap {
    fn dim(&self) -> usize {
        self.point.len()
    }
    fn codim(&self) -> usize {
        self.normals.nrows()
    }
    fn value(&self, q: &[f64]) -> DVector<f64> {
        &self.normals * (DVector::from_column_slice(q) - &self.point)
    }
    fn jacobian(&self, _q: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.normals.clone())
    }
}

/// Constraints given as expressions in `q1 .. qn`, differentiated symbolically.
#[derive(Debug, Clone)]
pub struct ExprMap {
    n: usize,
    exprs: Vec<Expr>,
    grads: Vec<Vec<Expr>>,
}

impl ExprMap {
    pub fn parse(sources: &[impl AsRef<str>], n: usize) -> Result<Self> {
        let exprs: Vec<Expr> = sources.iter().map(|s| Expr::parse_indexed(s.as_ref(), "q", n)).collect::<Result<_>>()?;
        let grads = exprs.iter().map(|e| (0..n).map(|k| e.diff(k)).collect()).collect();
        Ok(ExprMap { n, exprs, grads })
    }
}

impl LevelSetMap for ExprMap {
    fn dim(&self) -> usize {
        self.n
    }
    fn codim(&self) -> usize {
        self.exprs.len()
    }
    fn value(&self, q: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.exprs.len(), self.exprs.iter().map(|e| e.eval(q)))
    }
    fn jacobian(&self, q: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.exprs.len(), self.n, |i, k| self.grads[i][k].eval(q)))
    }
}

/// A level set with a reference point used to seed solvers.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub map: Arc<dyn LevelSetMap>,
    pub anchor: DVector<f64>,
    pub label: String,
}

impl LevelSet {
    /// Projects `guess` onto the level set to obtain the anchor.
    pub fn new(map: Arc<dyn LevelSetMap>, guess: DVector<f64>, label: impl Into<String>) -> Result<Self> {
        if guess.len() != map.dim() {
            return Err(Error::invalid("anchor guess has the wrong dimension"));
        }
        let mut set = LevelSet {
            map,
            anchor: guess.clone(),
            label: label.into(),
        };
        set.anchor = set.project(&guess)?;
        Ok(set)
    }

    pub fn codim(&self) -> usize {
        self.map.codim()
    }

    pub fn value(&self, q: &[f64]) -> DVector<f64> {
        self.map.value(q)
    }

    /// Analytic Jacobian or central differences.
    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        if let Some(j) = self.map.jacobian(q) {
            return j;
        }
        let n = q.len();
        let mut jac = DMatrix::zeros(self.codim(), n);
        let mut x = q.to_vec();
        for k in 0..n {
            let h = linalg::fd_step(q[k], 1e-6, 1e-8);
            x[k] = q[k] + h;
            let plus = self.map.value(&x);
            x[k] = q[k] - h;
            let minus = self.map.value(&x);
            x[k] = q[k];
            jac.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        jac
    }

    /// Gauss-Newton projection onto `G = 0`.
    pub fn project(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = q.clone();
        for _ in 0..50 {
            let g = self.value(x.as_slice());
            if g.amax() <= 1e-13 * (1.0 + x.amax()) {
                return Ok(x);
            }
            let j = self.jacobian(x.as_slice());
            let pinv = j.pseudo_inverse(1e-12).map_err(Error::invalid)?;
            x -= pinv * g;
        }
        let residual = self.value(x.as_slice()).amax();
        if residual <= 1e-10 {
            Ok(x)
        } else {
            Err(Error::NoConvergence { residual })
        }
    }
}

/// Endpoint constraint of a boundary-value problem.
#[derive(Debug, Clone)]
pub enum SubmanifoldSpec {
    Point(DVector<f64>),
    LevelSet(LevelSet),
}

impl SubmanifoldSpec {
    pub fn point(q: DVector<f64>) -> Self {
        SubmanifoldSpec::Point(q)
    }

    /// Affine subspace through `point` spanned by `directions`.
    pub fn affine(point: DVector<f64>, directions: DMatrix<f64>) -> Result<Self> {
        let map = AffineMap::through(point.clone(), &directions);
        Ok(SubmanifoldSpec::LevelSet(LevelSet::new(Arc::new(map), point, "affine")?))
    }

    /// Level set of expressions in `q1 .. qn`, anchored near `guess`.
    pub fn expressions(sources: &[impl AsRef<str>], guess: DVector<f64>) -> Result<Self> {
        let n = guess.len();
        let map = ExprMap::parse(sources, n)?;
        let label = sources.iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>().join("; ");
        Ok(SubmanifoldSpec::LevelSet(LevelSet::new(Arc::new(map), guess, label)?))
    }

    pub fn is_point(&self) -> bool {
        matches!(self, SubmanifoldSpec::Point(_))
    }

    pub fn anchor(&self) -> &DVector<f64> {
        match self {
            SubmanifoldSpec::Point(q) => q,
            SubmanifoldSpec::LevelSet(s) => &s.anchor,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor().len()
    }

    /// Number of scalar constraints.
    pub fn codim(&self) -> usize {
        match self {
            SubmanifoldSpec::Point(q) => q.len(),
            SubmanifoldSpec::LevelSet(s) => s.codim(),
        }
    }

    pub fn value(&self, q: &[f64]) -> DVector<f64> {
        match self {
            SubmanifoldSpec::Point(x) => DVector::from_column_slice(q) - x,
            SubmanifoldSpec::LevelSet(s) => s.value(q),
        }
    }

    pub fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        match self {
            SubmanifoldSpec::Point(x) => DMatrix::identity(x.len(), x.len()),
            SubmanifoldSpec::LevelSet(s) => s.jacobian(q),
        }
    }

    /// Orthonormal basis of the tangent space `ker JG`, rotated to be as close
    /// as possible to `reference` when given (keeps the basis smooth in `q`).
    pub fn tangent_basis(&self, q: &[f64], reference: Option<&DMatrix<f64>>) -> DMatrix<f64> {
        let n = q.len();
        let jac = self.jacobian(q);
        let thr = 1e-10 * jac.amax().max(1e-300);
        let mut basis = linalg::null_space(&jac, thr);
        if basis.ncols() == 0 {
            return DMatrix::zeros(n, 0);
        }
        if let Some(r) = reference.filter(|r| r.ncols() == basis.ncols()) {
            let (u, _, v) = linalg::svd_full(&(basis.transpose() * r));
            let k = basis.ncols();
            let rot = u.columns(0, k) * v.columns(0, k).transpose();
            basis = &basis * rot;
        }
        basis
    }

    /// Tests `T_q S + 𝒟_q = T_q M` as `rank [ker JG | X_1 .. X_m] = n`.
    pub fn transversality(&self, model: &ChartModel, q: &[f64]) -> TransversalityCertificate {
        let n = model.dim();
        let tangent = self.tangent_basis(q, None);
        let frame = model.horizontal_at(q);
        let mut stacked = DMatrix::zeros(n, tangent.ncols() + frame.ncols());
        stacked.columns_mut(0, tangent.ncols()).copy_from(&tangent);
        stacked.columns_mut(tangent.ncols(), frame.ncols()).copy_from(&frame);
        let sigma = linalg::singular_values(&stacked);
        let rank = linalg::rank_above(&sigma, 1e-9 * sigma[0].max(f64::MIN_POSITIVE));
        let smallest = if sigma.len() >= n { sigma[n - 1] } else { 0.0 };
        TransversalityCertificate {
            point: q.to_vec(),
            rank,
            dim: n,
            transversal: rank == n,
            smallest_singular_value: smallest,
        }
    }
}

/// Rank test of `T_q S + 𝒟_q` at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransversalityCertificate {
    pub point: Vec<f64>,
    pub rank: usize,
    pub dim: usize,
    pub transversal: bool,
    pub smallest_singular_value: f64,
}

impl TransversalityCertificate {
    pub fn into_result(self) -> Result<Self> {
        if self.transversal {
            Ok(self)
        } else {
            Err(Error::TransversalityFailure {
                point: self.point,
                rank: self.rank,
                dim: self.dim,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn affine_line_and_plane() {
        let line = SubmanifoldSpec::affine(dvector![1.0, 0.0, 0.0], DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        assert_eq!(line.codim(), 2);
        assert!(line.value(&[1.0, 5.0, 0.0]).amax() < 1e-15);
        let t = line.tangent_basis(&[1.0, 0.0, 0.0], None);
        assert!((t.column(0).abs() - dvector![0.0, 1.0, 0.0]).amax() < 1e-14);

        let plane = SubmanifoldSpec::expressions(&["q1 - 1"], DVector::zeros(3)).unwrap();
        assert_eq!(plane.anchor().as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(plane.tangent_basis(&[1.0, 0.0, 0.0], None).ncols(), 2);
    }

    #[test]
    fn alignment_keeps_basis_continuous() {
        let sphere = SubmanifoldSpec::expressions(&["q1^2 + q2^2 + q3^2 - 1"], dvector![0.0, 0.0, 2.0]).unwrap();
        let q = sphere.anchor().clone();
        let b0 = sphere.tangent_basis(q.as_slice(), None);
        let mut q2 = q.clone();
        q2[0] += 1e-4;
        let b1 = sphere.tangent_basis(q2.as_slice(), Some(&b0));
        assert!((b1 - b0).amax() < 1e-3);
    }

    #[test]
    fn transversality_in_heisenberg() {
        let model = ChartModel::heisenberg();
        let transversal = SubmanifoldSpec::affine(dvector![1.0, 0.0, 0.0], DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        // X_2 at (1, 0, 0) is (0, 1, 1/2): the line direction ∂y is not horizontal there.
        assert!(transversal.transversality(&model, &[1.0, 0.0, 0.0]).transversal);

        let tangent = SubmanifoldSpec::affine(dvector![0.0, 0.0, 0.5], DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let cert = tangent.transversality(&model, &[0.0, 0.0, 0.5]);
        assert!(!cert.transversal && cert.rank == 2);
        assert!(matches!(cert.into_result(), Err(Error::TransversalityFailure { rank: 2, dim: 3, .. })));
    }
}
